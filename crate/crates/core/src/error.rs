use std::time::Duration;

use thiserror::Error;

use crate::grid::Axis;

/// Errors raised by the grid, map and selection primitives.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid side must be at least 2, got {0}")]
    SideTooSmall(usize),
    #[error("pool has {actual} frames but a {k}x{k} grid needs {expected}")]
    PoolSize {
        k: usize,
        expected: usize,
        actual: usize,
    },
    #[error("{axis:?} index {index} out of range for K={k}")]
    AxisIndex { axis: Axis, index: usize, k: usize },
    #[error("cannot sample {requested} frames from {available} source frames")]
    EmptySampling { available: usize, requested: usize },
    #[error("row/column confidence length mismatch: {rows} rows vs {cols} columns")]
    MarginalLength { rows: usize, cols: usize },
    #[error("confidence {0} is outside [0, 1]")]
    Confidence(f64),
    #[error("need at least 2 values for standardized moments, got {0}")]
    TooFewValues(usize),
    #[error("frame budget {m} outside [1, {max}]")]
    Budget { m: usize, max: usize },
    #[error("coefficient of variation needs at least 2 costs with positive mean")]
    DegenerateCosts,
}

/// Errors raised by posterior backends.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid answer space: {0}")]
    AnswerSpace(String),
    #[error("invalid posterior: {0}")]
    Posterior(String),
    #[error("pool index {index} outside grid of {pool} frames")]
    PoolIndex { index: usize, pool: usize },
    #[error("unscorable response: no answer letter among tokens {tokens:?}")]
    Unscorable { tokens: Vec<String> },
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("server returned HTTP {status}: {excerpt}")]
    Status { status: u16, excerpt: String },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("cannot load frame {path}: {message}")]
    Frame { path: String, message: String },
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("backend misconfigured: {0}")]
    Config(String),
}

impl BackendError {
    /// Short machine-readable tag, stable across versions.
    pub fn kind(&self) -> &'static str {
        match self {
            BackendError::AnswerSpace(_) => "answer_space",
            BackendError::Posterior(_) => "posterior",
            BackendError::PoolIndex { .. } => "pool_index",
            BackendError::Unscorable { .. } => "unscorable",
            BackendError::Transport { .. } => "transport",
            BackendError::Status { .. } => "http_status",
            BackendError::Protocol(_) => "protocol",
            BackendError::Frame { .. } => "frame",
            BackendError::Timeout(_) => "timeout",
            BackendError::Config(_) => "config",
        }
    }
}

/// Errors from the two-stage pipeline and the benchmark harness.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid regime spec: {0}")]
    Regime(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}
