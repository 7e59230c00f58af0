use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and objective settings of the generator model.
///
/// `emission_channels` lists the hidden widths of every deconvolution
/// ladder; the final layer's width is set per generator (2 for the flow
/// generator, `channels` for the residual and appearance generators).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    /// Number of transitions `T`; a training video has `T + 1` frames.
    pub transitions: usize,
    pub state_dim: usize,
    pub motion_state_dim: usize,
    pub residual_state_dim: usize,
    pub noise_dim: usize,
    pub appearance_dim: usize,
    pub emission_channels: Vec<usize>,
    pub transition_hidden: Vec<usize>,
    /// Pixels per unit of tanh flow output.
    pub flow_scale: f64,
    pub sigma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seq_motion_dim: usize,
    pub seq_residual_dim: usize,
    pub trackable_only: bool,
    pub init_std: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            channels: 3,
            transitions: 29,
            state_dim: 80,
            motion_state_dim: 50,
            residual_state_dim: 30,
            noise_dim: 100,
            appearance_dim: 10,
            emission_channels: vec![512, 512, 256, 128, 64],
            transition_hidden: vec![20, 20],
            flow_scale: 10.0,
            sigma: 0.5,
            lambda1: 1.0,
            lambda2: 0.005,
            seq_motion_dim: 0,
            seq_residual_dim: 0,
            trackable_only: false,
            init_std: 0.02,
            bn_epsilon: crate::autodiff::norm::DEFAULT_EPSILON,
            bn_momentum: crate::autodiff::norm::DEFAULT_MOMENTUM,
        }
    }
}

/// How one ladder layer changes the spatial size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// `1x1 -> 4x4`, stride 1, no padding.
    Seed,
    /// `n -> 2n`, stride 2, padding 1.
    Double,
    /// `n -> n`, stride 1, one row/column cropped at the top/left.
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Spatial size after the layer.
    pub size: usize,
}

pub const KERNEL_SIZE: usize = 4;
const SEED_SIZE: usize = 4;

impl ModelConfig {
    /// Small double-precision friendly configuration used by gradient checks.
    pub fn toy() -> Self {
        Self {
            image_size: 8,
            channels: 3,
            transitions: 3,
            state_dim: 8,
            motion_state_dim: 5,
            residual_state_dim: 3,
            noise_dim: 6,
            appearance_dim: 4,
            emission_channels: vec![8, 8, 4],
            transition_hidden: vec![6, 6],
            flow_scale: 2.0,
            init_std: 0.2,
            ..Self::default()
        }
    }

    pub fn seq_dim(&self) -> usize {
        self.seq_motion_dim + self.seq_residual_dim
    }

    pub fn has_residuals(&self) -> bool {
        !self.trackable_only
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, message: String| {
            Err(Error::Config {
                key: key.to_string(),
                message,
            })
        };
        if self.motion_state_dim + self.residual_state_dim != self.state_dim {
            return fail(
                "state_dim",
                format!(
                    "motion_state_dim + residual_state_dim = {} + {} != {}",
                    self.motion_state_dim, self.residual_state_dim, self.state_dim
                ),
            );
        }
        for (key, v) in [
            ("image_size", self.image_size),
            ("channels", self.channels),
            ("transitions", self.transitions),
            ("motion_state_dim", self.motion_state_dim),
            ("residual_state_dim", self.residual_state_dim),
            ("noise_dim", self.noise_dim),
            ("appearance_dim", self.appearance_dim),
        ] {
            if v == 0 {
                return fail(key, "must be >= 1".into());
            }
        }
        if self.emission_channels.contains(&0) || self.transition_hidden.contains(&0) {
            return fail("emission_channels", "layer widths must be >= 1".into());
        }
        if !(self.sigma > 0.0) {
            return fail("sigma", format!("must be > 0, got {}", self.sigma));
        }
        if !(self.flow_scale > 0.0) {
            return fail("flow_scale", format!("must be > 0, got {}", self.flow_scale));
        }
        for (key, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0) {
                return fail(key, format!("must be >= 0, got {v}"));
            }
        }
        if !(self.init_std >= 0.0) {
            return fail("init_std", format!("must be >= 0, got {}", self.init_std));
        }
        if !(self.bn_epsilon > 0.0) {
            return fail("bn_epsilon", format!("must be > 0, got {}", self.bn_epsilon));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return fail("bn_momentum", format!("must lie in [0, 1], got {}", self.bn_momentum));
        }
        self.ladder(1, 1).map(|_| ())
    }

    /// Layer plan for a generator seeded by a `seed_dim` vector and emitting
    /// `out_channels` maps.
    ///
    /// The first layer lifts the `1 x 1` seed to `4 x 4`, stride-2 layers
    /// double up to `image_size`, and any remaining layers keep the size.
    pub fn ladder(&self, seed_dim: usize, out_channels: usize) -> Result<Vec<LayerSpec>> {
        let layers = self.emission_channels.len() + 1;
        let ratio = self.image_size / SEED_SIZE;
        if self.image_size % SEED_SIZE != 0 || !ratio.is_power_of_two() {
            return Err(Error::Config {
                key: "image_size".into(),
                message: format!(
                    "{} is not 2^k times the {SEED_SIZE}x{SEED_SIZE} seed layer",
                    self.image_size
                ),
            });
        }
        let doublings = ratio.trailing_zeros() as usize;
        if doublings + 1 > layers {
            return Err(Error::Config {
                key: "emission_channels".into(),
                message: format!(
                    "{layers} layers cannot reach {0}x{0} (need at least {1})",
                    self.image_size,
                    doublings + 1
                ),
            });
        }
        let mut widths = self.emission_channels.clone();
        widths.push(out_channels);
        let mut size = SEED_SIZE;
        let mut in_channels = seed_dim;
        let mut plan = Vec::with_capacity(layers);
        for (i, &out) in widths.iter().enumerate() {
            let kind = if i == 0 {
                LayerKind::Seed
            } else if i <= doublings {
                size *= 2;
                LayerKind::Double
            } else {
                LayerKind::Same
            };
            plan.push(LayerSpec {
                kind,
                in_channels,
                out_channels: out,
                size,
            });
            in_channels = out;
        }
        Ok(plan)
    }
}
