use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite state ({x}, {y})")]
    NonFiniteState { x: f64, y: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("drift overflow at state ({x}, {y})")]
    DriftOverflow { x: f64, y: f64 },

    #[error("step size must be positive, got {0}")]
    NonPositiveStep(f64),

    #[error("not PSD: s11={s11}, s12={s12}, s22={s22}")]
    NotPsd { s11: f64, s12: f64, s22: f64 },

    #[error("trajectory diverged at step {step}")]
    Diverged { step: usize },

    #[error("singular step covariance at index {index} (det={det})")]
    SingularCovariance { index: usize, det: f64 },

    #[error("non-finite residual at index {index}")]
    NonFiniteResidual { index: usize },

    #[error("diffusion factor vanishes at index {index}")]
    ZeroDiffusionFactor { index: usize },

    #[error("model does not expose a diffusion factor f with b = sigma * f")]
    NoDiffusionFactor,

    #[error("infeasible start: every simplex vertex is infeasible")]
    InfeasibleStart,

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("experiment unstable: {failures} of {total} replications failed")]
    Unstable { failures: usize, total: usize },

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
