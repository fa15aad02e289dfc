use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ControlError, Controller, PidController, PidGains};

/// Declarative controller description: a registered kind plus string parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerSpec {
    pub kind: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, String>,
}

impl ControllerSpec {
    pub fn new(kind: impl Into<String>) -> Self {
        ControllerSpec {
            kind: kind.into(),
            parameters: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.parameters.insert(key.to_string(), value.to_string());
        self
    }

    pub fn pid(gains: &PidGains) -> Self {
        ControllerSpec::new("pid")
            .with("kp", gains.kp)
            .with("ki", gains.ki)
            .with("kd", gains.kd)
            .with("u_min", gains.u_min)
            .with("u_max", gains.u_max)
            .with("n", gains.derivative_filter_n)
    }

    /// Parses a decimal parameter, falling back to `default` when absent.
    pub fn number(&self, key: &str, default: f64) -> Result<f64, ControlError> {
        match self.parameters.get(key) {
            None => Ok(default),
            Some(raw) => {
                let v: f64 = raw.trim().parse().map_err(|_| ControlError::BadParameter {
                    key: key.to_string(),
                    reason: format!("{raw:?} is not a decimal number"),
                })?;
                if !v.is_finite() {
                    return Err(ControlError::BadParameter {
                        key: key.to_string(),
                        reason: "must be finite".into(),
                    });
                }
                Ok(v)
            }
        }
    }

    /// Reads the PID parameter keys, defaulting to the water-tank gains.
    pub fn pid_gains(&self) -> Result<PidGains, ControlError> {
        let d = PidGains::default();
        let gains = PidGains {
            kp: self.number("kp", d.kp)?,
            ki: self.number("ki", d.ki)?,
            kd: self.number("kd", d.kd)?,
            u_min: self.number("u_min", d.u_min)?,
            u_max: self.number("u_max", d.u_max)?,
            derivative_filter_n: self.number("n", d.derivative_filter_n)?,
        };
        gains.validate()?;
        Ok(gains)
    }
}

pub type ControllerFactory =
    Arc<dyn Fn(&ControllerSpec) -> Result<Box<dyn Controller>, ControlError> + Send + Sync>;

/// Proof that a kind was registered; carries the kind name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registration {
    pub kind: String,
}

/// Maps controller kinds to factories. Read-only once the engine starts.
#[derive(Clone, Default)]
pub struct ControllerRegistry {
    factories: BTreeMap<String, ControllerFactory>,
}

impl std::fmt::Debug for ControllerRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.factories.keys()).finish()
    }
}

impl ControllerRegistry {
    pub fn empty() -> Self {
        ControllerRegistry::default()
    }

    /// Registry with the built-in `pid` kind.
    pub fn with_builtins() -> Self {
        let mut reg = ControllerRegistry::empty();
        reg.register("pid", |spec: &ControllerSpec| {
            let pid = PidController::new(spec.pid_gains()?)?;
            Ok(Box::new(pid) as Box<dyn Controller>)
        })
        .expect("fresh registry");
        reg
    }

    pub fn register<F>(&mut self, kind: &str, factory: F) -> Result<Registration, ControlError>
    where
        F: Fn(&ControllerSpec) -> Result<Box<dyn Controller>, ControlError> + Send + Sync + 'static,
    {
        if self.factories.contains_key(kind) {
            return Err(ControlError::DuplicateKind(kind.to_string()));
        }
        self.factories.insert(kind.to_string(), Arc::new(factory));
        Ok(Registration {
            kind: kind.to_string(),
        })
    }

    pub fn contains(&self, kind: &str) -> bool {
        self.factories.contains_key(kind)
    }

    pub fn kinds(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn instantiate(&self, spec: &ControllerSpec) -> Result<Box<dyn Controller>, ControlError> {
        let factory = self
            .factories
            .get(&spec.kind)
            .ok_or_else(|| ControlError::UnknownControllerKind(spec.kind.clone()))?;
        factory(spec)
    }
}
