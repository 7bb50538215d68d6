//! Error types, one enum per subsystem.

use std::io;
use thiserror::Error;

/// Errors raised while building or differentiating a tensor graph.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch ({lhs:?} vs {rhs:?})")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected a {expected} tensor, got shape {got:?}")]
    BadRank {
        op: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape {
        shape: Vec<usize>,
        reason: &'static str,
    },
    #[error("{op}: operands come from different graphs")]
    GraphMismatch { op: &'static str },
    #[error("{op}: non-finite input value")]
    NonFinite { op: &'static str },
    #[error("{op}: input must be strictly positive")]
    NonPositive { op: &'static str },
    #[error("row {row} has L2 norm {norm:.3e}, below the {min:.0e} floor")]
    DegenerateRow { row: usize, norm: f64, min: f64 },
    #[error("{op}: row index {index} out of range for {rows} rows")]
    RowOutOfRange {
        op: &'static str,
        index: usize,
        rows: usize,
    },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward already ran on this graph; call zero_grads() first")]
    BackwardWithoutReset,
}

/// Errors in the on-disk tensor container format.
#[derive(Debug, Error)]
pub enum BlobError {
    #[error("bad magic bytes (not an ALGCDTEN blob)")]
    BadMagic,
    #[error("unsupported blob version {0}")]
    BadVersion(u8),
    #[error("unknown dtype code {0}")]
    BadDtype(u8),
    #[error("corrupt blob header: {0}")]
    BadHeader(String),
    #[error("blob truncated")]
    Truncated,
    #[error("shape {shape:?} does not match {len} data values")]
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Errors from the synthetic generator, datasets, and the knowledge base.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("{0}")]
    InvalidData(String),
    #[error("labeled sample {index} has class {class}, outside the {num_known} known classes")]
    ProtocolViolation {
        index: usize,
        class: usize,
        num_known: usize,
    },
    #[error("checksum mismatch in {what} (stored {stored}, computed {computed})")]
    ChecksumMismatch {
        what: String,
        stored: String,
        computed: String,
    },
    #[error("{what}: {source}")]
    Blob {
        what: &'static str,
        #[source]
        source: BlobError,
    },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Errors from model construction and the loss functions.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("hyperparameter {name} = {value} outside {range}")]
    InvalidHyper {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Errors from the two training stages.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite ({value}) at {unit} {index}")]
    Diverged {
        unit: &'static str,
        index: usize,
        value: f64,
    },
    #[error("nothing to optimize: projections are disabled, so the model has no trainable parameters")]
    NothingToOptimize,
    #[error("episode sampling: {0}")]
    Episode(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Errors from end-to-end runs (train + eval) and ablation sweeps.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("pipeline config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Errors from evaluation hosts and the accuracy protocol.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0}")]
    InvalidInput(String),
    #[error("k-means could not fill cluster {cluster} after {attempts} reseed attempts")]
    EmptyCluster { cluster: usize, attempts: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
}
