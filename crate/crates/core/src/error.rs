use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("prerequisite edges contain a directed cycle through attribute {attribute}")]
    Cycle { attribute: usize },

    #[error("attribute index {index} is outside [0, {k})")]
    Index { index: usize, k: usize },

    #[error("enumerating 2^{k} patterns exceeds the cap of 2^{cap}")]
    Capacity { k: usize, cap: usize },

    #[error("attributes {first} and {second} have identical columns across the pattern set")]
    MergedAttributes { first: usize, second: usize },

    #[error("item {item}: monotonicity requires 1 - s > g, got s = {slip}, g = {guess}")]
    Monotonicity { item: usize, slip: f64, guess: f64 },

    #[error("response probability {value} is outside (0, 1)")]
    Range { value: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("EBIC parameter count {selected} exceeds the candidate count {candidates}")]
    Domain { selected: usize, candidates: usize },

    #[error("hierarchy is not a linear chain")]
    NotLinear,

    #[error("row {row} has no observed responses")]
    EmptyRow { row: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
