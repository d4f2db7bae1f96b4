//! Desk-scale gait-recognition library: silhouette + keypoint sequences in,
//! identity embeddings out.
//!
//! The pipeline is a global/local 3D-convolution backbone, clip-wise
//! temporal attention shared by the appearance and pose branches,
//! generalized-mean pooling, and multiple embedding heads trained with a
//! weighted triplet loss. Everything runs on a hand-rolled reverse-mode
//! autodiff tensor core, verified by finite-difference checks, and a
//! synthetic multi-view walker generator stands in for real capture data.
//!
//! Math kernels are generic over the scalar type ([`Scalar`]); the `*64`
//! aliases below are the f64 instantiations used by training and the CLI.

pub mod error;
pub mod scalar;
pub mod tensor;

pub mod attention;
pub mod backbone;
pub mod battery;
pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod fusion;
pub mod loss;
pub mod model;
pub mod par;
pub mod pose;
pub mod seeds;
pub mod train;

pub use error::{DataError, EvalError, ModelError, TensorError, TrainError};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type TrainState64 = train::TrainState<f64>;


