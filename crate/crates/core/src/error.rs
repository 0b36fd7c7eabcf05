use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid density grid: {0}")]
    InvalidDensity(String),

    #[error("grid resolutions differ ({0} vs {1})")]
    ResolutionMismatch(u32, u32),

    #[error("requested level {level} exceeds the finest representable level {max}")]
    LevelOverflow { level: u32, max: u32 },

    #[error("path of length {len} is too short for a window of {window}")]
    PathTooShort { len: usize, window: usize },

    #[error("inverse reparametrisation produced a negative density value {value:e} at cell {cell}")]
    InconsistentReparam { cell: usize, value: f64 },

    #[error("block layout is invalid for n = {n}: need j_tilde_n > J_n, got J_n = {j_n}, j_tilde_n = {j_tilde}")]
    InvalidLayout { n: f64, j_n: u32, j_tilde: i64 },

    #[error("tabulating a 3-D grid at resolution {0} is too large")]
    GridTooLarge(u32),

    #[error("malformed record: {0}")]
    Record(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
