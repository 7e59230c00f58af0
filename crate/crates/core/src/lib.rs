//! Motion-based generator model for dynamic patterns.
//!
//! A video is explained by an appearance image, per-frame displacement
//! fields that warp it forward (trackable motion), and residual images
//! (intrackable motion), all emitted from a latent state-space model.

pub mod analysis;
pub mod autodiff;
mod error;
pub mod inference;
pub mod io;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod training;
pub mod video;

pub use error::{Error, Result};

pub use autodiff::{BatchNormMode, Tensor};
pub use inference::{ChainState, LangevinConfig};
pub use io::RunConfig;
pub use model::{DecompositionTrace, LatentPath, ModelConfig, ModelParams};
pub use rng::Rng;
pub use scalar::Scalar;
pub use training::{TrainConfig, TrainLog, Trainer};
pub use video::VideoSequence;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Video32 = VideoSequence<f32>;
pub type Video64 = VideoSequence<f64>;
pub type Params32 = ModelParams<f32>;
pub type Params64 = ModelParams<f64>;
pub type Latents32 = LatentPath<f32>;
pub type Latents64 = LatentPath<f64>;
pub type Trace32 = DecompositionTrace<f32>;
pub type Trace64 = DecompositionTrace<f64>;
pub type Trainer32 = Trainer<f32>;
pub type Trainer64 = Trainer<f64>;
