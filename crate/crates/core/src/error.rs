use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("basis is numerically singular (condition estimate {condition:.3e})")]
    SingularBasis { condition: f64 },

    #[error("cell bits {0} outside 1..=6")]
    CellBitsOutOfRange(u32),

    #[error("coefficient bits {0} outside 1..=16")]
    CoeffBitsOutOfRange(u32),

    #[error("code {code} outside the {bits}-bit range at index {index}")]
    CodeOutOfRange { code: i32, bits: u32, index: usize },

    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("contest violation: column {column} claimed twice in {context}")]
    ContestViolation { column: usize, context: String },

    #[error("schedule does not match coefficients: {0}")]
    ScheduleMismatch(String),

    #[error("bit plane {plane} outside 0..{bits}")]
    PlaneOutOfRange { plane: u32, bits: u32 },

    #[error("instance has {active} active kernels, exact search limit is {limit}")]
    InstanceTooLarge { active: usize, limit: usize },

    #[error("network has no layers")]
    EmptyNetwork,

    #[error("invalid layer shape: {0}")]
    InvalidShape(String),

    #[error("negative event count for {0}")]
    NegativeCount(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
