use alloc::string::String;

use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix dimensions must be at least 1x1, got {rows}x{cols}")]
    EmptyMatrix { rows: usize, cols: usize },

    #[error("data length {len} does not match {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },

    #[error("non-finite value {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },

    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("svd did not converge within {cap} sweeps (off-diagonal residual {residual:e})")]
    SvdNoConvergence { cap: usize, residual: f64 },

    #[error("eigendecomposition did not converge within {cap} sweeps (off-diagonal residual {residual:e})")]
    EigenNoConvergence { cap: usize, residual: f64 },

    #[error("matrix is not symmetric: max |m_ij - m_ji| = {max_asymmetry:e}")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("spectrum is invalid: {0}")]
    InvalidSpectrum(&'static str),

    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("ensemble member `{label}` has shape {found:?}, expected {expected:?}")]
    EnsembleShape {
        label: String,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("rank {rank} outside [1, {max}]")]
    RankOutOfRange { rank: usize, max: usize },

    #[error("rank {rank} exceeds the effective rank {effective_rank} of the covariance")]
    RankExceedsEffective { rank: usize, effective_rank: usize },

    #[error("row count {rows} is not divisible by 3")]
    NotStackable { rows: usize },

    #[error("adapter: {0}")]
    Adapter(String),

    #[error("token {token} at position {position} is outside vocabulary of {vocab_size}")]
    TokenOutOfRange {
        position: usize,
        token: usize,
        vocab_size: usize,
    },

    #[error("sequence length {len} exceeds model context {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("model: {0}")]
    Model(String),

    #[error("forward cache does not match model: {0}")]
    CacheMismatch(String),

    #[error("training diverged at step {step} (loss {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("task `{task}` needs {requirement}")]
    TaskRequirement { task: String, requirement: String },
}
