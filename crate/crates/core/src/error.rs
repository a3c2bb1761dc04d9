use thiserror::Error;

/// Errors raised by the simulation and estimation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("shift {shift} is not a multiple of the grid spacing {dx}")]
    NonCommensurateShift { shift: f64, dx: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite value at step {step} (t = {time}), cell x = {x}: dt is too large for this state")]
    NonFinite { step: u64, time: f64, x: f64 },

    #[error("stability guard tripped at t = {time}: rate*dt = {value:.3} exceeds 0.5 in component `{component}`")]
    Stability { time: f64, component: String, value: f64 },

    #[error("component `{0}` went extinct where a finite marker is required")]
    Extinct(String),

    #[error("particle event budget of {budget} events exhausted at t = {time}")]
    EventBudget { budget: u64, time: f64 },

    #[error("malformed snapshot: {0}")]
    Snapshot(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn precondition<T: Into<String>>(ok: bool, msg: T) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Precondition(msg.into()))
    }
}
