//! Music-conditioned cascaded motion diffusion: a small tensor and autodiff
//! core, diffusion sampling, transformer denoisers, kinematic losses,
//! contrastive music-dance alignment, evaluation metrics and the training
//! pipeline that ties them together.

pub mod alignment;
pub mod autodiff;
pub mod checkpoint;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod motion;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar used for metrics, file formats and checkpoints.
pub type Real = f64;
/// Scalar used for denoiser training and sampling.
pub type TrainReal = f32;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Denoiser64 = denoiser::Denoiser<f64>;
pub type Denoiser32 = denoiser::Denoiser<f32>;
pub type Cascade32 = pipeline::cascade::CascadeModel<f32>;
