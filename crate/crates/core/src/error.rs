use thiserror::Error;

/// Errors produced by the simulator, gradient engine and optimizer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid-parameter: {field} ({reason})")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("overflow: |{quantity}| = {value:e} exceeds {limit:e} at t = {time}")]
    Overflow {
        quantity: &'static str,
        value: f64,
        limit: f64,
        time: f64,
    },

    #[error("ill-conditioned: propagator norm {norm:e} exceeds {limit:e}")]
    IllConditioned { norm: f64, limit: f64 },

    #[error("nonphysical: smallest symplectic eigenvalue {nu} is below 1/2")]
    Nonphysical { nu: f64 },

    #[error("domain: {0}")]
    Domain(String),

    #[error("singular-covariance: det = {det:e}")]
    SingularCovariance { det: f64 },

    #[error("truncation-breach: top Fock-level population {population:e} in mode {mode}")]
    TruncationBreach { mode: &'static str, population: f64 },

    #[error("gradient realness violated: imaginary residue {residue:e} on bin {bin}")]
    ComplexGradient { bin: usize, residue: f64 },

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Overflow { .. }
                | Error::IllConditioned { .. }
                | Error::Nonphysical { .. }
                | Error::SingularCovariance { .. }
                | Error::TruncationBreach { .. }
                | Error::ComplexGradient { .. }
                | Error::Domain(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
