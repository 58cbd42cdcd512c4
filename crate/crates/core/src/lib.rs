//! Shared-bank depth decoder: tensors with reverse-mode autodiff, resampling
//! operators, bank generation, the decoder network, training and evaluation.

pub mod banks;
pub mod bnkt;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod footprint;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod pgm;
pub mod resample;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape32 = tape::Tape<f32>;
pub type Tape64 = tape::Tape<f64>;
pub type ParamStore32 = params::ParamStore<f32>;
pub type ParamStore64 = params::ParamStore<f64>;
pub type Dataset32 = data::Dataset<f32>;
