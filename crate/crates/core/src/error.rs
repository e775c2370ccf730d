use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("diagram has {rows} nonzero rows but only {n} particles were requested")]
    TooManyRows { rows: usize, n: usize },

    #[error("configurations differ in particle count, theta or lattice offset")]
    Mismatch,

    #[error("no walk of length {steps} connects the endpoints")]
    Infeasible { steps: usize },

    #[error("{what}: size {size} exceeds cap {cap}{hint}")]
    CapExceeded {
        what: &'static str,
        size: usize,
        cap: usize,
        hint: &'static str,
    },

    #[error("state explosion: over {states} configurations in the slices up to time {time} (cap {cap})")]
    StateExplosion { states: usize, time: usize, cap: usize },

    #[error("slope ({s}, {t}) is outside the admissible triangle{detail}")]
    OutsideSlope { s: f64, t: f64, detail: &'static str },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("no admissible extension: {0}")]
    NoExtension(String),

    #[error("pole: {0}")]
    Pole(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
