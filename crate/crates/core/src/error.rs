use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} = {value} is outside the achievable interval [{min}, {max}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("fidelity is undefined for a matrix with zero success probability")]
    UndefinedFidelity,

    #[error("degenerate scan: harmonic amplitude is {max_amplitude:e} everywhere on the grid")]
    DegenerateScan { max_amplitude: f64 },

    #[error("fit failed: {reason} (residual rms {residual_rms:e})")]
    FitFailure { reason: String, residual_rms: f64 },

    #[error("reconstruction failed: {reason} (residual {residual:e})")]
    ReconstructionFailure { reason: String, residual: f64 },

    #[error("phase retrieval did not converge from any start; best fidelity {best_fidelity}")]
    RetrievalFailure {
        best_fidelity: f64,
        best_phases: Vec<f64>,
    },

    #[error("optimizer failed: {reason}; best objective {best_objective:e}")]
    OptimizerFailure { reason: String, best_objective: f64 },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by bad inputs rather than numerical breakdown.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::InvalidArgument(_) | Error::OutOfRange { .. })
    }
}
