use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// R⁻ has a nontrivial kernel; the pure dark-state solution applies instead.
    #[error("operator is singular (kernel dimension {kernel_dim}); use the kernel states as dark-state solutions")]
    KernelExists { kernel_dim: usize },

    #[error("step size underflow at t = {t:e} (h = {h:e}); the problem looks stiff, use the exact propagator")]
    StepUnderflow { t: f64, h: f64 },

    #[error("ambiguous steady state: null space dimension {null_dim}, conserved sectors {sectors}; {detail}")]
    DegenerateSteadyState {
        null_dim: usize,
        sectors: usize,
        detail: String,
    },

    #[error("degenerate normalization: {0}")]
    DegenerateNormalization(String),

    #[error("steady state did not converge: residual {residual:e} after t = {elapsed:e}")]
    NotConverged { residual: f64, elapsed: f64 },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
