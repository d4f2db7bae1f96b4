//! Error types, one enum per subsystem.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error(
        "conv3d: non-integer output extent on axis {axis}: \
         (input {input} + 2*pad {pad} - kernel {kernel}) is not divisible by stride {stride}"
    )]
    NonIntegerOutput {
        axis: usize,
        input: usize,
        pad: usize,
        kernel: usize,
        stride: usize,
    },
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

impl TensorError {
    pub fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        TensorError::Invalid {
            op,
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("config: {0}")]
    Config(String),
    #[error("sequence {id}: {len} frames is shorter than clip length {clip_len}")]
    SequenceTooShort {
        id: String,
        len: usize,
        clip_len: usize,
    },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("keypoints: {0}")]
    Keypoints(String),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("dataset layout error at {path}: {msg}")]
    Layout { path: String, msg: String },
    #[error("generator: {0}")]
    Generate(String),
}

impl DataError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, msg: impl Into<String>) -> Self {
        DataError::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn layout(path: impl Into<String>, msg: impl Into<String>) -> Self {
        DataError::Layout {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("batch spec: {0}")]
    BatchSpec(String),
    #[error("non-finite loss at step {step} (first offending parameter block: {block})")]
    NonFiniteLoss { step: u64, block: String },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TrainError {
    pub fn checkpoint(path: impl Into<String>, msg: impl Into<String>) -> Self {
        TrainError::Checkpoint {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("embedding sets disagree: {0}")]
    EmbeddingMismatch(String),
    #[error("eval split: {0}")]
    Split(String),
}
