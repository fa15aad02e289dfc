//! Discrete-time controllers and the registry the engine instantiates them from.

mod pid;
mod registry;

pub use pid::{pid_reset, pid_step, pid_step_traced, PidController, PidGains, PidState, StepFlags};
pub use registry::{ControllerFactory, ControllerRegistry, ControllerSpec, Registration};

use thiserror::Error;

use crate::time::TickDuration;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("non-finite controller input (r={r}, y={y})")]
    NonFiniteInput { r: f64, y: f64 },
    #[error("invalid gains: {0}")]
    InvalidGains(String),
    #[error("controller kind {0:?} is already registered")]
    DuplicateKind(String),
    #[error("unknown controller kind {0:?}")]
    UnknownControllerKind(String),
    #[error("controller parameter {key:?}: {reason}")]
    BadParameter { key: String, reason: String },
    #[error("controller does not accept gain updates")]
    GainsUnsupported,
}

/// A controller instance owned by exactly one loop.
pub trait Controller: Send {
    /// Computes the command for one activation with period `h`.
    fn step(&mut self, r: f64, y: f64, h: TickDuration) -> Result<f64, ControlError>;

    fn reset(&mut self);

    /// Current gains, for controllers that have PID-style gains.
    fn gains(&self) -> Option<PidGains> {
        None
    }

    fn set_gains(&mut self, _gains: PidGains) -> Result<(), ControlError> {
        Err(ControlError::GainsUnsupported)
    }
}
