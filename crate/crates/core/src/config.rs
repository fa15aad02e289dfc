//! Experiment description: parsing, validation and the normalized dump.
//!
//! The file is TOML with the sections `[engine]`, `[metrics]`, `[plant]`,
//! `[[loop]]`, `[channels]` and `[supervisor]`. Numeric values may be
//! written as numbers or as decimal strings; times are decimal seconds
//! except the `*_us` plant keys.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;
use toml::{Table, Value};

use crate::control::{ControllerRegistry, ControllerSpec, PidGains};
use crate::engine::{EngineMode, LoopConfig};
use crate::io::{ChannelBinding, LinkImperfection};
use crate::plant::{FirstOrderParams, IntegratorConfig, PlantModel, WaterTankParams};
use crate::time::{format_seconds, ticks_from_seconds, TickDuration, TimeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid {field}: {constraint}")]
    Validation { field: String, constraint: String },
}

fn invalid(field: impl Into<String>, constraint: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        field: field.into(),
        constraint: constraint.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantSettings {
    pub model: PlantModel,
    pub integrator: IntegratorConfig,
    /// Real-time plant ticker period; each tick advances the plant and publishes `y`.
    pub publish: TickDuration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsSettings {
    pub band_pct: f64,
    pub tail_pct: f64,
    /// A loop whose `|y|` exceeds this is reported as diverged.
    pub diverge_limit: f64,
}

impl Default for MetricsSettings {
    fn default() -> Self {
        MetricsSettings {
            band_pct: 2.0,
            tail_pct: 10.0,
            diverge_limit: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisorSettings {
    pub enabled: bool,
    pub listen: String,
    /// Per-subscriber telemetry backlog before disconnection.
    pub queue: usize,
}

impl Default for SupervisorSettings {
    fn default() -> Self {
        SupervisorSettings {
            enabled: false,
            listen: "127.0.0.1:8080".into(),
            queue: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: EngineMode,
    pub duration: TickDuration,
    pub seed: u64,
    pub output: Option<PathBuf>,
    /// How long to wait for peers at startup.
    pub connect_timeout: TickDuration,
    /// Silence on a sensor channel longer than this ends a real-time run.
    pub link_timeout: TickDuration,
    pub metrics: MetricsSettings,
    pub plant: PlantSettings,
    pub loops: Vec<LoopConfig>,
    pub channels: BTreeMap<String, ChannelBinding>,
    pub supervisor: SupervisorSettings,
}

pub const DEFAULT_DURATION_US: u64 = 200_000_000;

impl ExperimentConfig {
    /// Single water-tank loop with the default PID gains and setpoint 10.
    pub fn tank_experiment(period: TickDuration, duration: TickDuration) -> Self {
        let mut channels = BTreeMap::new();
        channels.insert("sensor".to_string(), ChannelBinding::parse("inproc:sensor").unwrap());
        channels.insert("actuator".to_string(), ChannelBinding::parse("inproc:actuator").unwrap());
        ExperimentConfig {
            mode: EngineMode::VirtualTime,
            duration,
            seed: 0,
            output: None,
            connect_timeout: TickDuration::from_millis(10_000),
            link_timeout: TickDuration::from_millis(2_000),
            metrics: MetricsSettings::default(),
            plant: PlantSettings {
                model: PlantModel::WaterTank(WaterTankParams::default()),
                integrator: IntegratorConfig::default(),
                publish: IntegratorConfig::default().substep,
            },
            loops: vec![LoopConfig {
                loop_id: 0,
                period,
                phase: TickDuration::ZERO,
                priority: 0,
                controller: ControllerSpec::pid(&PidGains::default()),
                setpoint: 10.0,
                sensor: "sensor".into(),
                actuator: "actuator".into(),
            }],
            channels,
            supervisor: SupervisorSettings::default(),
        }
    }

    pub fn binding(&self, name: &str) -> Option<&ChannelBinding> {
        self.channels.get(name)
    }

    pub fn loop_config(&self, loop_id: u16) -> Option<&LoopConfig> {
        self.loops.iter().find(|l| l.loop_id == loop_id)
    }

    /// Checks every cross-field constraint.
    pub fn validate(&self, registry: &ControllerRegistry) -> Result<(), ConfigError> {
        self.plant
            .model
            .validate()
            .map_err(|e| invalid("plant", e.to_string()))?;
        let substep = self.plant.integrator.substep.micros();
        if substep == 0 {
            return Err(invalid("plant.substep_us", "must be positive"));
        }
        if self.plant.publish.micros() == 0 || !self.plant.publish.micros().is_multiple_of(substep) {
            return Err(invalid("plant.publish_us", "must be a positive multiple of substep_us"));
        }
        let mut ids = BTreeSet::new();
        let mut max_period = 0;
        for (i, l) in self.loops.iter().enumerate() {
            let f = |k: &str| format!("loop[{i}].{k}");
            if !ids.insert(l.loop_id) {
                return Err(invalid(f("id"), format!("loop id {} is used twice", l.loop_id)));
            }
            if l.period.micros() < crate::time::MIN_PERIOD_US {
                return Err(invalid(f("period"), "must be at least 0.001 s"));
            }
            if l.phase >= l.period {
                return Err(invalid(f("phase"), "must be shorter than the period"));
            }
            self.plant
                .integrator
                .check_period(l.period)
                .map_err(|e| invalid(f("period"), e.to_string()))?;
            if l.phase.micros() % substep != 0 {
                return Err(invalid(f("phase"), "must be a multiple of plant.substep_us"));
            }
            if !l.setpoint.is_finite() {
                return Err(invalid(f("setpoint"), "must be finite"));
            }
            registry
                .instantiate(&l.controller)
                .map_err(|e| invalid(f("controller"), e.to_string()))?;
            for (key, name) in [("sensor", &l.sensor), ("actuator", &l.actuator)] {
                let Some(binding) = self.channels.get(name) else {
                    return Err(invalid(f(key), format!("channel {name:?} is not defined in [channels]")));
                };
                if self.mode == EngineMode::VirtualTime && !binding.is_inproc() {
                    return Err(invalid(
                        f(key),
                        format!("channel {name:?} is not in-process; virtual_time needs inproc bindings"),
                    ));
                }
            }
            if l.sensor == l.actuator {
                return Err(invalid(f("actuator"), "must differ from the sensor channel"));
            }
            max_period = max_period.max(l.period.micros());
        }
        if !self.loops.is_empty() && self.duration.micros() <= max_period {
            return Err(invalid("engine.duration", "must exceed the longest loop period"));
        }
        let mut links: BTreeMap<&str, (&str, LinkImperfection)> = BTreeMap::new();
        for (name, b) in &self.channels {
            if let ChannelBinding::Inproc { name: inner, link } = b {
                if self.mode == EngineMode::RealTime && !link.is_ideal() {
                    return Err(invalid(
                        format!("channels.{name}"),
                        "link imperfections apply to virtual_time only",
                    ));
                }
                if let Some((other, prev)) = links.insert(inner, (name, *link)) {
                    if prev != *link {
                        return Err(invalid(
                            format!("channels.{name}"),
                            format!("conflicts with channels.{other} on inproc:{inner}"),
                        ));
                    }
                }
                if link.delay_us % substep != 0 || link.jitter_us % substep != 0 {
                    return Err(invalid(
                        format!("channels.{name}"),
                        "delay and jitter must be multiples of plant.substep_us",
                    ));
                }
            }
        }
        for (field, v) in [
            ("metrics.settle_band_pct", self.metrics.band_pct),
            ("metrics.tail_pct", self.metrics.tail_pct),
            ("metrics.diverge_limit", self.metrics.diverge_limit),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(field, "must be a positive number"));
            }
        }
        if self.metrics.tail_pct > 100.0 {
            return Err(invalid("metrics.tail_pct", "must be at most 100"));
        }
        if self.supervisor.queue == 0 {
            return Err(invalid("supervisor.queue", "must be at least 1"));
        }
        Ok(())
    }

    /// Normalized TOML with every default spelled out. Re-parses to an equal config.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let q = |v: &str| Value::String(v.to_string()).to_string();
        let n = |v: f64| Value::Float(v).to_string();
        // Controller parameters are kept as text; numeric ones go out bare.
        let param = |v: &str| match v.parse::<f64>() {
            Ok(x) if x.is_finite() => n(x),
            _ => q(v),
        };
        let _ = writeln!(s, "[engine]");
        let _ = writeln!(s, "mode = {}", q(self.mode.as_str()));
        let _ = writeln!(s, "duration = {}", format_seconds(self.duration.micros()));
        if i64::try_from(self.seed).is_ok() {
            let _ = writeln!(s, "seed = {}", self.seed);
        } else {
            let _ = writeln!(s, "seed = {}", q(&self.seed.to_string()));
        }
        if let Some(out) = &self.output {
            let _ = writeln!(s, "output = {}", q(&out.to_string_lossy()));
        }
        let _ = writeln!(s, "connect_timeout = {}", format_seconds(self.connect_timeout.micros()));
        let _ = writeln!(s, "link_timeout = {}", format_seconds(self.link_timeout.micros()));
        let _ = writeln!(s, "\n[metrics]");
        let _ = writeln!(s, "settle_band_pct = {}", n(self.metrics.band_pct));
        let _ = writeln!(s, "tail_pct = {}", n(self.metrics.tail_pct));
        let _ = writeln!(s, "diverge_limit = {}", n(self.metrics.diverge_limit));
        let _ = writeln!(s, "\n[plant]");
        match &self.plant.model {
            PlantModel::WaterTank(p) => {
                let _ = writeln!(s, "model = \"water_tank\"");
                let _ = writeln!(s, "area = {}", n(p.area));
                let _ = writeln!(s, "inflow_gain = {}", n(p.inflow_gain));
                let _ = writeln!(s, "outflow_coeff = {}", n(p.outflow_coeff));
                let _ = writeln!(s, "level_init = {}", n(p.level_init));
            }
            PlantModel::FirstOrder(p) => {
                let _ = writeln!(s, "model = \"first_order\"");
                let _ = writeln!(s, "gain = {}", n(p.gain));
                let _ = writeln!(s, "time_constant = {}", n(p.time_constant));
                let _ = writeln!(s, "x_init = {}", n(p.x_init));
            }
        }
        let _ = writeln!(s, "substep_us = {}", self.plant.integrator.substep.micros());
        let _ = writeln!(s, "publish_us = {}", self.plant.publish.micros());
        for l in &self.loops {
            let _ = writeln!(s, "\n[[loop]]");
            let _ = writeln!(s, "id = {}", l.loop_id);
            let _ = writeln!(s, "period = {}", format_seconds(l.period.micros()));
            let _ = writeln!(s, "phase = {}", format_seconds(l.phase.micros()));
            let _ = writeln!(s, "priority = {}", l.priority);
            let _ = writeln!(s, "setpoint = {}", n(l.setpoint));
            let _ = writeln!(s, "sensor = {}", q(&l.sensor));
            let _ = writeln!(s, "actuator = {}", q(&l.actuator));
            let _ = write!(s, "controller = {{ kind = {}", q(&l.controller.kind));
            for (k, v) in &l.controller.parameters {
                let _ = write!(s, ", {} = {}", toml_key(k), param(v));
            }
            let _ = writeln!(s, " }}");
        }
        let _ = writeln!(s, "\n[channels]");
        for (name, b) in &self.channels {
            let _ = writeln!(s, "{} = {}", toml_key(name), q(&b.to_string()));
        }
        let _ = writeln!(s, "\n[supervisor]");
        let _ = writeln!(s, "enabled = {}", self.supervisor.enabled);
        let _ = writeln!(s, "listen = {}", q(&self.supervisor.listen));
        let _ = writeln!(s, "queue = {}", self.supervisor.queue);
        s
    }
}

fn toml_key(k: &str) -> String {
    if !k.is_empty() && k.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-') {
        k.to_string()
    } else {
        Value::String(k.to_string()).to_string()
    }
}

/// Key reader over one table that rejects unknown keys on [`Section::finish`].
struct Section<'a> {
    path: String,
    table: Option<&'a Table>,
    seen: BTreeSet<&'a str>,
}

impl<'a> Section<'a> {
    fn new(path: impl Into<String>, table: Option<&'a Table>) -> Self {
        Section {
            path: path.into(),
            table,
            seen: BTreeSet::new(),
        }
    }

    fn field(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn get(&mut self, key: &str) -> Option<&'a Value> {
        let table = self.table?;
        let (k, v) = table.get_key_value(key)?;
        self.seen.insert(k.as_str());
        Some(v)
    }

    fn number(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => {
                let n = value_number(v).ok_or_else(|| invalid(self.field(key), "must be a number"))?;
                if !n.is_finite() {
                    return Err(invalid(self.field(key), "must be finite"));
                }
                Ok(n)
            }
        }
    }

    fn unsigned(&mut self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as u64),
            Some(Value::String(s)) => s
                .trim()
                .parse()
                .map_err(|_| invalid(self.field(key), "must be a non-negative integer")),
            Some(_) => Err(invalid(self.field(key), "must be a non-negative integer")),
        }
    }

    fn string(&mut self, key: &str) -> Result<Option<&'a str>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.as_str())),
            Some(_) => Err(invalid(self.field(key), "must be a string")),
        }
    }

    fn boolean(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(Value::String(s)) if s == "true" || s == "false" => Ok(s == "true"),
            Some(_) => Err(invalid(self.field(key), "must be true or false")),
        }
    }

    /// Decimal seconds, rounded to the microsecond.
    fn seconds(&mut self, key: &str, default: TickDuration, min_zero: bool) -> Result<TickDuration, ConfigError> {
        let Some(v) = self.get(key) else {
            return Ok(default);
        };
        let field = self.field(key);
        let s = value_number(v).ok_or_else(|| invalid(&field, "must be a number of seconds"))?;
        if min_zero && s == 0.0 {
            return Ok(TickDuration::ZERO);
        }
        if min_zero && s > 0.0 && s < 0.001 {
            let us = s * 1e6;
            if (us - us.round()).abs() > 1e-6 {
                return Err(invalid(field, "must be a whole number of microseconds"));
            }
            return Ok(TickDuration(us.round() as u64));
        }
        let d = ticks_from_seconds(s).map_err(|e| match e {
            TimeError::BelowResolution(_) => invalid(&field, "below the minimum period of 0.001 s"),
            TimeError::Overflow(_) => invalid(&field, "exceeds 1000000 s"),
            TimeError::NotFinite(_) => invalid(&field, "must be finite"),
        })?;
        if (s * 1e6 - d.micros() as f64).abs() > 1e-6 * s.max(1.0) {
            return Err(invalid(field, "must be a whole number of microseconds"));
        }
        Ok(d)
    }

    fn finish(self) -> Result<(), ConfigError> {
        if let Some(table) = self.table {
            if let Some(k) = table.keys().find(|k| !self.seen.contains(k.as_str())) {
                return Err(invalid(self.field(k), "unknown key"));
            }
        }
        Ok(())
    }
}

fn value_number(v: &Value) -> Option<f64> {
    match v {
        Value::Integer(i) => Some(*i as f64),
        Value::Float(f) => Some(*f),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn value_text(v: &Value) -> Option<String> {
    match v {
        Value::Integer(i) => Some(i.to_string()),
        Value::Float(f) => Some(f.to_string()),
        Value::String(s) => Some(s.trim().to_string()),
        Value::Boolean(b) => Some(b.to_string()),
        _ => None,
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, column)
}

fn sub_table<'a>(root: &'a Table, key: &str) -> Result<Option<&'a Table>, ConfigError> {
    match root.get(key) {
        None => Ok(None),
        Some(Value::Table(t)) => Ok(Some(t)),
        Some(_) => Err(invalid(key, "must be a table")),
    }
}

/// Parses and validates with the built-in controller kinds.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_config_with(text, &ControllerRegistry::with_builtins())
}

pub fn parse_config_with(text: &str, registry: &ControllerRegistry) -> Result<ExperimentConfig, ConfigError> {
    let cfg = read_config(text)?;
    cfg.validate(registry)?;
    Ok(cfg)
}

/// Parses without the cross-field checks of [`ExperimentConfig::validate`],
/// for callers that override fields (such as the mode) before validating.
pub fn read_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let root: Table = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |r| line_column(text, r.start));
        ConfigError::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    let mut top = Section::new("", Some(&root));
    for key in ["engine", "metrics", "plant", "loop", "channels", "supervisor"] {
        top.get(key);
    }
    top.finish()?;

    let defaults = ExperimentConfig::tank_experiment(TickDuration(100_000), TickDuration(DEFAULT_DURATION_US));

    let mut eng = Section::new("engine", sub_table(&root, "engine")?);
    let mode = match eng.string("mode")?.unwrap_or("virtual_time") {
        "virtual_time" | "simulate" => EngineMode::VirtualTime,
        "real_time" | "deploy" => EngineMode::RealTime,
        other => return Err(invalid("engine.mode", format!("{other:?} is not virtual_time or real_time"))),
    };
    let duration = eng.seconds("duration", defaults.duration, false)?;
    let seed = eng.unsigned("seed", 0)?;
    let output = eng.string("output")?.map(PathBuf::from);
    let connect_timeout = eng.seconds("connect_timeout", defaults.connect_timeout, false)?;
    let link_timeout = eng.seconds("link_timeout", defaults.link_timeout, false)?;
    eng.finish()?;

    let mut met = Section::new("metrics", sub_table(&root, "metrics")?);
    let md = MetricsSettings::default();
    let metrics = MetricsSettings {
        band_pct: met.number("settle_band_pct", md.band_pct)?,
        tail_pct: met.number("tail_pct", md.tail_pct)?,
        diverge_limit: met.number("diverge_limit", md.diverge_limit)?,
    };
    met.finish()?;

    let mut pl = Section::new("plant", sub_table(&root, "plant")?);
    let model = match pl.string("model")?.unwrap_or("water_tank") {
        "water_tank" => {
            let d = WaterTankParams::default();
            PlantModel::WaterTank(WaterTankParams {
                area: pl.number("area", d.area)?,
                inflow_gain: pl.number("inflow_gain", d.inflow_gain)?,
                outflow_coeff: pl.number("outflow_coeff", d.outflow_coeff)?,
                level_init: pl.number("level_init", d.level_init)?,
            })
        }
        "first_order" => {
            let d = FirstOrderParams::default();
            PlantModel::FirstOrder(FirstOrderParams {
                gain: pl.number("gain", d.gain)?,
                time_constant: pl.number("time_constant", d.time_constant)?,
                x_init: pl.number("x_init", d.x_init)?,
            })
        }
        other => return Err(invalid("plant.model", format!("{other:?} is not water_tank or first_order"))),
    };
    let substep = TickDuration(pl.unsigned("substep_us", defaults.plant.integrator.substep.micros())?);
    let publish = TickDuration(pl.unsigned("publish_us", substep.micros())?);
    pl.finish()?;
    let plant = PlantSettings {
        model,
        integrator: IntegratorConfig { substep },
        publish,
    };

    let loop_tables: Vec<&Table> = match root.get("loop") {
        None => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, v)| v.as_table().ok_or_else(|| invalid(format!("loop[{i}]"), "must be a table")))
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(invalid("loop", "must be an array of tables ([[loop]])")),
    };
    let mut loops = Vec::new();
    for (i, t) in loop_tables.into_iter().enumerate() {
        let mut sec = Section::new(format!("loop[{i}]"), Some(t));
        let id = sec.unsigned("id", i as u64)?;
        let loop_id = u16::try_from(id).map_err(|_| invalid(sec.field("id"), "must fit in 16 bits"))?;
        let period = sec.seconds("period", TickDuration(100_000), false)?;
        let phase = sec.seconds("phase", TickDuration::ZERO, true)?;
        let priority = sec.unsigned("priority", 0)?;
        let priority = u8::try_from(priority).map_err(|_| invalid(sec.field("priority"), "must be 0..=255"))?;
        let setpoint = sec.number("setpoint", 10.0)?;
        let sensor = sec.string("sensor")?.unwrap_or("sensor").to_string();
        let actuator = sec.string("actuator")?.unwrap_or("actuator").to_string();
        let controller = match sec.get("controller") {
            None => ControllerSpec::pid(&PidGains::default()),
            Some(Value::String(kind)) => normalize_controller(ControllerSpec::new(kind.trim()), &sec.field("controller"))?,
            Some(Value::Table(ct)) => {
                let field = sec.field("controller");
                let mut spec = ControllerSpec::new("pid");
                for (k, v) in ct {
                    let text = value_text(v).ok_or_else(|| invalid(format!("{field}.{k}"), "must be a scalar"))?;
                    if k == "kind" {
                        spec.kind = text;
                    } else {
                        spec.parameters.insert(k.clone(), text);
                    }
                }
                normalize_controller(spec, &field)?
            }
            Some(_) => return Err(invalid(sec.field("controller"), "must be a table or a kind name")),
        };
        sec.finish()?;
        loops.push(LoopConfig {
            loop_id,
            period,
            phase,
            priority,
            controller,
            setpoint,
            sensor,
            actuator,
        });
    }

    let channels = match sub_table(&root, "channels")? {
        None => defaults.channels.clone(),
        Some(t) => {
            let mut out = BTreeMap::new();
            for (name, v) in t {
                let field = format!("channels.{name}");
                let Value::String(uri) = v else {
                    return Err(invalid(field, "must be a binding string"));
                };
                let b = ChannelBinding::parse(uri).map_err(|e| invalid(&field, e))?;
                out.insert(name.clone(), b);
            }
            out
        }
    };

    let mut sv = Section::new("supervisor", sub_table(&root, "supervisor")?);
    let sd = SupervisorSettings::default();
    let supervisor = SupervisorSettings {
        enabled: sv.boolean("enabled", sd.enabled)?,
        listen: sv.string("listen")?.unwrap_or(&sd.listen).to_string(),
        queue: sv.unsigned("queue", sd.queue as u64)? as usize,
    };
    sv.finish()?;

    Ok(ExperimentConfig {
        mode,
        duration,
        seed,
        output,
        connect_timeout,
        link_timeout,
        metrics,
        plant,
        loops,
        channels,
        supervisor,
    })
}

/// Fills the PID defaults and canonicalizes number spelling so dumps are stable.
fn normalize_controller(mut spec: ControllerSpec, field: &str) -> Result<ControllerSpec, ConfigError> {
    if spec.kind != "pid" {
        return Ok(spec);
    }
    const KEYS: [&str; 6] = ["kp", "ki", "kd", "u_min", "u_max", "n"];
    if let Some(k) = spec.parameters.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(invalid(format!("{field}.{k}"), "unknown PID parameter"));
    }
    let gains = spec
        .pid_gains()
        .map_err(|e| invalid(field, e.to_string()))?;
    spec.parameters = ControllerSpec::pid(&gains).parameters;
    Ok(spec)
}
