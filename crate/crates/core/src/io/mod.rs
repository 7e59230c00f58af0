//! Frame directories, flow files, checkpoints and run configuration.

pub mod checkpoint;
pub mod config;
pub mod flow;
pub mod frames;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, verify_config, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{apply_overrides, load_config, load_config_onto, parse_config, parse_config_onto, RunConfig};
pub use flow::{color_wheel, decode_flow, encode_flow, flow_color, flow_to_color, load_flow, save_flow};
pub use frames::{frame_count, frame_path, load_image, load_video, save_image, save_video};
