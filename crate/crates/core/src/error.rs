use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("dimension mismatch: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    DimensionMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty region: weight field has no positive mass")]
    EmptyRegion,

    #[error("empty band: no pixel satisfies |phi| < eps")]
    EmptyBand,

    #[error("bin grid mismatch: {0}")]
    BinGridMismatch(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("contour vanished: level set has no sign change")]
    ContourVanished,

    #[error("non-finite velocity at iteration {iteration}")]
    NonFiniteVelocity { iteration: usize },

    #[error("training pair {index}: {source}")]
    TrainingPair {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate phantom after {attempts} attempts")]
    DegeneratePhantom { attempts: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
