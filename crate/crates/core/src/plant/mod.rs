//! Continuous-time plant models integrated by fixed-step RK4 under a zero-order hold.

mod models;
mod rk4;

pub use models::{FirstOrderParams, PlantModel, WaterTankParams, tank_derivative};
pub use rk4::{advance_zoh, rk4_step};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{TickDuration, TickTime};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("plant state became non-finite at t={t}: {x:?}")]
    NonFiniteState { t: TickTime, x: Vec<f64> },
    #[error("duration {duration} us is not a multiple of the {substep} us substep")]
    Misaligned { duration: u64, substep: u64 },
    #[error("invalid plant parameter: {0}")]
    InvalidParams(String),
    #[error("non-finite plant input {0}")]
    NonFiniteInput(f64),
}

/// State vector plus the time it refers to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub x: Vec<f64>,
    pub t: TickTime,
}

impl PlantState {
    pub fn new(x: Vec<f64>) -> Self {
        PlantState { x, t: TickTime::ZERO }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub substep: TickDuration,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            substep: TickDuration::from_millis(1),
        }
    }
}

impl IntegratorConfig {
    /// Checks the substep divides `period` and is at most a tenth of it.
    pub fn check_period(&self, period: TickDuration) -> Result<(), PlantError> {
        let s = self.substep.micros();
        if s == 0 {
            return Err(PlantError::InvalidParams("substep must be positive".into()));
        }
        if !period.micros().is_multiple_of(s) {
            return Err(PlantError::Misaligned {
                duration: period.micros(),
                substep: s,
            });
        }
        if s * 10 > period.micros() {
            return Err(PlantError::InvalidParams(format!(
                "substep {s} us exceeds a tenth of the {} us period",
                period.micros()
            )));
        }
        Ok(())
    }
}

/// Right-hand side `dx/dt = f(x, u)` of a plant.
pub trait Dynamics {
    fn dim(&self) -> usize;

    fn derivative(&self, x: &[f64], u: f64, dx: &mut [f64]);

    /// Maps the state back into its admissible set after each substep.
    fn project(&self, _x: &mut [f64]) {}

    /// Measured output.
    fn output(&self, x: &[f64]) -> f64 {
        x[0]
    }
}

/// A plant as seen by the loop engine: sampled output, ZOH-driven advance.
pub trait Plant: Send {
    fn output(&self) -> f64;

    fn time(&self) -> TickTime;

    fn substep(&self) -> TickDuration;

    /// Holds `u` for `duration`, which must be a multiple of the substep.
    fn advance(&mut self, u: f64, duration: TickDuration) -> Result<(), PlantError>;
}

/// A [`PlantModel`] with its state and integrator settings.
#[derive(Debug, Clone)]
pub struct SimulatedPlant {
    model: PlantModel,
    state: PlantState,
    cfg: IntegratorConfig,
}

impl SimulatedPlant {
    pub fn new(model: PlantModel, cfg: IntegratorConfig) -> Result<Self, PlantError> {
        model.validate()?;
        if cfg.substep.micros() == 0 {
            return Err(PlantError::InvalidParams("substep must be positive".into()));
        }
        let state = PlantState::new(model.initial_state());
        Ok(SimulatedPlant { model, state, cfg })
    }

    pub fn model(&self) -> &PlantModel {
        &self.model
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }
}

impl Plant for SimulatedPlant {
    fn output(&self) -> f64 {
        self.model.output(&self.state.x)
    }

    fn time(&self) -> TickTime {
        self.state.t
    }

    fn substep(&self) -> TickDuration {
        self.cfg.substep
    }

    fn advance(&mut self, u: f64, duration: TickDuration) -> Result<(), PlantError> {
        if !u.is_finite() {
            return Err(PlantError::NonFiniteInput(u));
        }
        self.state = advance_zoh(&self.model, &self.state, u, duration, &self.cfg)?;
        Ok(())
    }
}
