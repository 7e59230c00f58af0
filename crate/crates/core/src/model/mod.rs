//! The motion-based generator: transition model, flow/residual/appearance
//! generators, warping, and the penalized log joint.

pub mod check;
pub mod config;
pub mod latent;
pub mod network;
pub mod params;
pub mod trace;

pub use config::{LayerKind, LayerSpec, ModelConfig};
pub use latent::LatentPath;
pub use network::{
    emit_appearance, emit_flow, emit_residual, penalized_log_joint, transition_step, unroll, warp, EvalOptions,
    Evaluation, ObjectiveTerms,
};
pub use params::{trainable_layout, Generator, ModelParams};
pub use trace::DecompositionTrace;
