//! Text VAEs with dilated causal CNN or LSTM decoders.
//!
//! The crate is generic over the scalar type (see [`Scalar`]); the aliases
//! at the crate root fix it to `f64`, which every training and verification
//! path uses.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod semi;
pub mod tensor;
pub mod tools;
pub mod train;

pub use error::{Error, Result};
pub use rng::RngStreams;
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Tape = tensor::Tape<f64>;
pub type TensorF32 = tensor::Tensor<f32>;
pub type TapeF32 = tensor::Tape<f32>;
pub type TextModel = model::TextModel<f64>;
pub type ParamStore = nn::ParamStore<f64>;
