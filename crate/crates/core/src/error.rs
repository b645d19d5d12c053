use thiserror::Error;

use crate::dyadic::DyadicTime;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no partition at t = {0}")]
    NoPartition(DyadicTime),

    #[error("dimension mismatch: expected {expected} atoms, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value at atom {atom}")]
    NonFinite { atom: usize },

    #[error("invalid space: {0}")]
    InvalidSpace(String),

    #[error("process is not adapted: value at t = {time} differs inside a block (atoms {a} and {b})")]
    NotAdapted { time: DyadicTime, a: usize, b: usize },

    #[error("invalid process: {0}")]
    InvalidProcess(String),

    #[error("not a stopping time at level {level}: {{tau <= {time}}} splits a block")]
    NotStoppingTime { level: u32, time: DyadicTime },

    #[error("process is not a submartingale: violation {violation:e} at t = {time}")]
    NotSubmartingale { time: DyadicTime, violation: f64 },

    #[error("threshold must be positive, got {0}")]
    NonPositiveThreshold(f64),

    #[error("level {level} out of range (allowed {min}..={max})")]
    LevelOutOfRange { level: u32, min: u32, max: u32 },

    #[error("unsupported norm exponent p = {0} (only 1 and 2)")]
    UnsupportedNorm(u32),

    #[error("min-norm solver needs at least one vector")]
    EmptyHull,

    #[error("min-norm solver did not converge after {iterations} iterations (certificate gap {gap:e})")]
    NoConvergence { iterations: usize, gap: f64, weights: Vec<f64>, point: Vec<f64> },

    #[error("komlos stage {stage}, index {index}: {source}")]
    KomlosStage {
        stage: u32,
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("weights mismatch: {0}")]
    WeightMismatch(String),

    #[error("invalid dyadic time {0:?}")]
    ParseTime(String),

    #[error("instance {location}: {message}")]
    Schema { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
