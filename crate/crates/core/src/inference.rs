//! Langevin sampling of the latent path posterior with warm starts.

use serde::{Deserialize, Serialize};

use crate::autodiff::BatchNormMode;
use crate::error::{Error, Result};
use crate::model::{penalized_log_joint, EvalOptions, LatentPath, ModelConfig, ModelParams, ObjectiveTerms};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::video::VideoSequence;

/// A chain aborts once any latent exceeds this magnitude.
pub const DIVERGENCE_LIMIT: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LangevinConfig {
    /// Step size `δ`.
    pub step_size: f64,
    pub steps_per_iteration: usize,
    pub noise_enabled: bool,
    pub seed: u64,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self {
            step_size: 0.03,
            steps_per_iteration: 15,
            noise_enabled: true,
            seed: 0,
        }
    }
}

impl LangevinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::Config {
                key: "langevin.step_size".into(),
                message: format!("must be > 0, got {}", self.step_size),
            });
        }
        if self.steps_per_iteration == 0 {
            return Err(Error::Config {
                key: "langevin.steps_per_iteration".into(),
                message: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// One persistent chain: its latents, step counter and noise stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState<S> {
    pub latents: LatentPath<S>,
    pub iteration: u64,
    pub rng: Rng,
}

impl<S: Scalar> ChainState<S> {
    pub fn new(latents: LatentPath<S>, rng: Rng) -> Self {
        Self {
            latents,
            iteration: 0,
            rng,
        }
    }

    /// Chain at the all-zero path with `transitions` steps.
    pub fn zeros(cfg: &ModelConfig, transitions: usize, rng: Rng) -> Self {
        Self::new(LatentPath::zeros(cfg, transitions), rng)
    }
}

/// `x <- x + (δ²/2) grad + δ z`, with `z` drawn from `rng` when given.
pub fn langevin_update<S: Scalar>(x: &mut [S], grad: &[S], step_size: f64, mut rng: Option<&mut Rng>) {
    let drift = S::from_f64_lossy(0.5 * step_size * step_size);
    let delta = S::from_f64_lossy(step_size);
    for (v, &g) in x.iter_mut().zip(grad) {
        *v = *v + drift * g;
        if let Some(r) = rng.as_deref_mut() {
            *v = *v + delta * S::from_f64_lossy(r.normal());
        }
    }
}

/// One Langevin step on every latent component of `chain`, in the order
/// `c`, `s0`, `h`, `a`. Returns the objective terms at the pre-step latents.
pub fn langevin_step<S: Scalar>(
    chain: &mut ChainState<S>,
    video: &VideoSequence<S>,
    params: &ModelParams<S>,
    cfg: &ModelConfig,
    lcfg: &LangevinConfig,
    mode: BatchNormMode,
) -> Result<ObjectiveTerms> {
    let eval = penalized_log_joint(cfg, params, &chain.latents, video, EvalOptions::latents(mode))?;
    let grad = eval.latent_grad.expect("latent gradients requested");
    for (name, g) in grad.components() {
        if !g.is_finite() {
            return Err(Error::NonFinite {
                what: format!("gradient of latent `{name}`"),
            });
        }
    }
    let rng = &mut chain.rng;
    for ((name, x), (_, g)) in chain.latents.components_mut().into_iter().zip(grad.components()) {
        let noise = lcfg.noise_enabled.then_some(&mut *rng);
        langevin_update(x.data_mut(), g.data(), lcfg.step_size, noise);
        let worst = x.max_abs().to_f64_lossy();
        if !(worst <= DIVERGENCE_LIMIT) {
            return Err(Error::Divergence {
                component: name.to_string(),
                value: worst,
            });
        }
    }
    chain.iteration += 1;
    Ok(eval.terms)
}

/// Runs `lcfg.steps_per_iteration` steps from the chain's current state.
pub fn run_chain<S: Scalar>(
    chain: &mut ChainState<S>,
    video: &VideoSequence<S>,
    params: &ModelParams<S>,
    cfg: &ModelConfig,
    lcfg: &LangevinConfig,
    mode: BatchNormMode,
) -> Result<()> {
    for _ in 0..lcfg.steps_per_iteration {
        langevin_step(chain, video, params, cfg, lcfg, mode)?;
    }
    Ok(())
}

/// Samples latents for `video`, starting from `init` or from zeros, with a
/// fresh noise stream seeded by `lcfg.seed`.
pub fn infer_latents<S: Scalar>(
    video: &VideoSequence<S>,
    params: &ModelParams<S>,
    init: Option<&LatentPath<S>>,
    cfg: &ModelConfig,
    lcfg: &LangevinConfig,
    mode: BatchNormMode,
) -> Result<LatentPath<S>> {
    lcfg.validate()?;
    let latents = match init {
        Some(z) => z.clone(),
        None => LatentPath::zeros(cfg, video.transitions()),
    };
    let mut chain = ChainState::new(latents, Rng::new(lcfg.seed));
    run_chain(&mut chain, video, params, cfg, lcfg, mode)?;
    Ok(chain.latents)
}
