//! Gated residual composition of image and text embeddings, trained with
//! semi-hard triplet mining or a softmax head and evaluated by macro-averaged
//! kNN classification over precomputed embedding files.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! at the crate root fix the storage type to `f32`, matching the `.f32`
//! interchange format.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod knn;
pub mod optim;
pub mod scalar;
pub mod store;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Vector = tensor::DenseVector<f32>;
pub type Matrix = tensor::DenseMatrix<f32>;
pub type Dataset = store::Dataset<f32>;
pub type Record = store::EmbeddingRecord<f32>;
pub type Params = fusion::FusionParams<f32>;
pub type Grads = fusion::ParamGrads<f32>;
pub type Head = train::ClassifierHead<f32>;
pub type Checkpoint = checkpoint::Checkpoint<f32>;
