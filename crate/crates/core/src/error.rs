use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Error)]
pub enum Error {
    #[error("generator error: {0}")]
    Generator(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {msg} (error estimate {estimate:e})")]
    Numeric { msg: String, estimate: f64 },

    #[error("inconclusive: {what} lies in [{lower}, {upper}]")]
    Inconclusive {
        what: String,
        lower: f64,
        upper: f64,
    },

    #[error("metadata error: declared {name} = {declared} but fitted {fitted}")]
    Metadata {
        name: String,
        declared: f64,
        fitted: f64,
    },

    #[error("no bracket for the normalization equation over lambda in [{lower}, {upper}] after {evaluations} evaluations")]
    Bracket {
        lower: f64,
        upper: f64,
        evaluations: usize,
    },

    #[error("truncation error: tail not integrable up to radius {radius:e}")]
    Truncation { radius: f64 },

    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("stiffness: time step {dt:e} below floor at t = {time}")]
    Stiffness { time: f64, dt: f64 },

    #[error("scheme error: negative density {value:e} in cell {cell} at t = {time}")]
    Scheme { time: f64, cell: usize, value: f64 },

    #[error("at t = {time}: {source}")]
    AtTime {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn numeric(msg: impl Into<String>, estimate: f64) -> Self {
        Error::Numeric {
            msg: msg.into(),
            estimate,
        }
    }
}
