//! Intrackability, motion transfer, metrics, and the LDS baseline.

pub mod intrackability;
pub mod lds;
pub mod metrics;
pub mod transfer;

pub use intrackability::{config_hash, intrackability, IntrackabilityReport};
pub use lds::{lds_fit, lds_rollout, lds_synthesize, LdsModel};
pub use metrics::{flow_epe, metrics, mse, FrameMetrics};
pub use transfer::{exchange_motion, transfer_motion};
