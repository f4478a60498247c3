use thiserror::Error;

/// Errors raised by the encoder model, simulator and analysis routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument or configuration value lies outside the model's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An exponential argument grew beyond what f64 represents; the bias is unphysical.
    #[error("exponent {exponent:.3} saturates the weak-inversion model")]
    Saturation { exponent: f64 },

    /// An iterative solver ran out of budget.
    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// Integration produced a non-finite state.
    #[error("integration failed at t = {time:.6e} s: {reason}")]
    Integration { time: f64, reason: String },

    /// A per-point failure in a sweep, tagged with the offending input.
    #[error("sweep point v_id = {v_id:.6} V failed: {source}")]
    SweepPoint {
        v_id: f64,
        #[source]
        source: Box<Error>,
    },

    /// Caller violated a documented precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Every optimizer evaluation failed.
    #[error("tuner failed: all {evaluations} evaluations errored (first: {first})")]
    TunerFailed { evaluations: usize, first: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be finite, got {value}")))
    }
}

pub(crate) fn ensure_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive, got {value}")))
    }
}
