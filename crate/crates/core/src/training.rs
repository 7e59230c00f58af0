//! Alternating maximum-likelihood learning: Langevin inference on every
//! video's latents, then an Adam ascent step on the parameters.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::intrackability;
use crate::autodiff::{BatchNormMode, Tensor};
use crate::error::{Error, Result};
use crate::inference::{run_chain, ChainState, LangevinConfig};
use crate::model::{
    penalized_log_joint, unroll, DecompositionTrace, EvalOptions, LatentPath, ModelConfig, ModelParams,
};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::video::VideoSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub langevin: LangevinConfig,
    /// Epochs between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Epochs between log records; 0 disables logging.
    pub log_every: usize,
    /// Seeds parameter initialization.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            learning_rate: 1e-3,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            langevin: LangevinConfig::default(),
            checkpoint_every: 0,
            log_every: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, message: String| {
            Err(Error::Config {
                key: key.into(),
                message,
            })
        };
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate", format!("must be > 0, got {}", self.learning_rate));
        }
        for (key, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(key, format!("must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return fail("adam_epsilon", format!("must be > 0, got {}", self.adam_epsilon));
        }
        self.langevin.validate()
    }
}

/// Adam moments per named parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub m: BTreeMap<String, Tensor<S>>,
    pub v: BTreeMap<String, Tensor<S>>,
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ModelParams<S>) -> Self {
        let zeros: BTreeMap<_, _> = params
            .trainable()
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam step, ascending the objective.
pub fn adam_update<S: Scalar>(
    params: &mut ModelParams<S>,
    grads: &BTreeMap<String, Tensor<S>>,
    state: &mut AdamState<S>,
    cfg: &TrainConfig,
) -> Result<()> {
    for (name, p) in params.trainable() {
        match grads.get(name) {
            None => return Err(Error::invalid("adam_update", format!("missing gradient for `{name}`"))),
            Some(g) if g.shape() != p.shape() => {
                return Err(Error::shape("adam_update", format!("`{name}` {:?}", p.shape()), g.shape()))
            }
            Some(_) => {}
        }
        if !state.m.contains_key(name) || !state.v.contains_key(name) {
            return Err(Error::invalid("adam_update", format!("missing moments for `{name}`")));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 / (1.0 - b1.powi(t));
    let c2 = 1.0 / (1.0 - b2.powi(t));
    let [b1s, b2s, c1s, c2s, lr, eps] = [b1, b2, c1, c2, cfg.learning_rate, cfg.adam_epsilon].map(S::from_f64_lossy);
    let one = S::one();
    for (name, p) in params.trainable_mut() {
        let g = grads[name].data();
        let m = state.m.get_mut(name).expect("checked").data_mut();
        let v = state.v.get_mut(name).expect("checked").data_mut();
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1s * *mi + (one - b1s) * gi;
            *vi = b2s * *vi + (one - b2s) * gi * gi;
            let m_hat = *mi * c1s;
            let v_hat = *vi * c2s;
            *pi = *pi + lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Telemetry of one epoch, averaged over the training videos.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    /// Per-pixel reconstruction MSE on `[-1, 1]` frames.
    pub mse: f64,
    pub penalty_r: f64,
    pub penalty_smooth: f64,
    pub objective: f64,
    pub intrackability: f64,
    pub seconds: f64,
}

impl TrainRecord {
    /// Bitwise equality of every column except wall time.
    pub fn same_values(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && [self.mse, self.penalty_r, self.penalty_smooth, self.objective, self.intrackability]
                .iter()
                .zip([other.mse, other.penalty_r, other.penalty_smooth, other.objective, other.intrackability])
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,mse,penalty_r,penalty_smooth,objective,intrackability,seconds";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch, r.mse, r.penalty_r, r.penalty_smooth, r.objective, r.intrackability, r.seconds
            ));
        }
        out
    }

    /// Record-by-record [`TrainRecord::same_values`].
    pub fn same_values(&self, other: &Self) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| a.same_values(b))
    }
}

/// Complete training state; everything a checkpoint stores.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer<S> {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: ModelParams<S>,
    pub adam: AdamState<S>,
    /// One persistent chain per training video.
    pub chains: Vec<ChainState<S>>,
    /// Completed epochs.
    pub epoch: usize,
    pub log: TrainLog,
}

impl<S: Scalar> Trainer<S> {
    /// Fresh parameters from `train.seed`; chain `i` starts at zeros with
    /// noise stream `i + 1` of `train.langevin.seed`.
    pub fn new(model: ModelConfig, train: TrainConfig, videos: usize) -> Result<Self> {
        model.validate()?;
        train.validate()?;
        if videos == 0 {
            return Err(Error::invalid("trainer", "at least one training video is required"));
        }
        let params = ModelParams::init(&model, &mut Rng::with_stream(train.seed, 0))?;
        let chains = (0..videos)
            .map(|i| {
                ChainState::zeros(
                    &model,
                    model.transitions,
                    Rng::with_stream(train.langevin.seed, i as u64 + 1),
                )
            })
            .collect();
        Ok(Self {
            adam: AdamState::new(&params),
            model,
            train,
            params,
            chains,
            epoch: 0,
            log: TrainLog::default(),
        })
    }

    fn check_videos(&self, videos: &[VideoSequence<S>]) -> Result<()> {
        if videos.len() != self.chains.len() {
            return Err(Error::invalid(
                "trainer",
                format!("{} videos for {} chains", videos.len(), self.chains.len()),
            ));
        }
        let m = &self.model;
        let want = [m.transitions + 1, m.image_size, m.image_size, m.channels];
        for v in videos {
            if v.frames().shape() != want {
                return Err(Error::shape(
                    "trainer",
                    format!("video {want:?} (transitions + 1 frames of image_size x image_size x channels)"),
                    v.frames().shape(),
                ));
            }
        }
        Ok(())
    }

    /// One inference + update cycle over every video.
    pub fn train_epoch(&mut self, videos: &[VideoSequence<S>]) -> Result<TrainRecord> {
        self.check_videos(videos)?;
        let epoch = self.epoch + 1;
        let at_epoch = |source: Error| Error::Epoch {
            epoch,
            source: Box::new(source),
        };
        let start = Instant::now();
        let mode = BatchNormMode::Train;
        {
            let (model, params, lcfg) = (&self.model, &self.params, &self.train.langevin);
            self.chains
                .par_iter_mut()
                .zip(videos)
                .try_for_each(|(chain, video)| run_chain(chain, video, params, model, lcfg, mode))
                .map_err(at_epoch)?;
        }
        let mut sums = [0.0f64; 5];
        for (chain, video) in self.chains.iter().zip(videos) {
            let eval = penalized_log_joint(&self.model, &self.params, &chain.latents, video, EvalOptions::params(mode))
                .map_err(at_epoch)?;
            let grads = eval.param_grads.expect("parameter gradients requested");
            if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
                return Err(at_epoch(Error::NonFinite {
                    what: format!("gradient of parameter `{name}`"),
                }));
            }
            adam_update(&mut self.params, &grads, &mut self.adam, &self.train).map_err(at_epoch)?;
            self.params
                .update_running(&eval.batch_stats, self.model.bn_momentum)
                .map_err(at_epoch)?;
            let score = intrackability(&eval.trace, video).map_or(f64::NAN, |r| r.score);
            let t = eval.terms;
            for (s, v) in sums.iter_mut().zip([
                t.recon / video.frames().numel() as f64,
                t.penalty_r,
                t.penalty_smooth,
                t.objective,
                score,
            ]) {
                *s += v;
            }
        }
        let n = videos.len() as f64;
        let record = TrainRecord {
            epoch,
            mse: sums[0] / n,
            penalty_r: sums[1] / n,
            penalty_smooth: sums[2] / n,
            objective: sums[3] / n,
            intrackability: sums[4] / n,
            seconds: start.elapsed().as_secs_f64(),
        };
        self.epoch = epoch;
        if self.train.log_every > 0 && epoch % self.train.log_every == 0 {
            self.log.records.push(record);
        }
        Ok(record)
    }

    /// Trains until `self.train.epochs` epochs are complete, calling
    /// `after_epoch` after each one.
    pub fn run(
        &mut self,
        videos: &[VideoSequence<S>],
        mut after_epoch: impl FnMut(&Self, &TrainRecord) -> Result<()>,
    ) -> Result<()> {
        while self.epoch < self.train.epochs {
            let record = self.train_epoch(videos)?;
            after_epoch(self, &record)?;
        }
        Ok(())
    }

    /// Noise-free reconstruction of training video `index` from its chain.
    pub fn decompose(&self, index: usize, mode: BatchNormMode) -> Result<DecompositionTrace<S>> {
        let chain = self
            .chains
            .get(index)
            .ok_or_else(|| Error::invalid("decompose", format!("no chain {index}")))?;
        Ok(unroll(&self.model, &self.params, &chain.latents, mode)?.0)
    }
}

/// Draws every latent from the prior with `seed` and unrolls `length`
/// transitions with inference-mode batch norm.
pub fn synthesize<S: Scalar>(
    cfg: &ModelConfig,
    params: &ModelParams<S>,
    seed: u64,
    length: usize,
) -> Result<(VideoSequence<S>, DecompositionTrace<S>)> {
    if length == 0 {
        return Err(Error::invalid("synthesize", "length must be >= 1"));
    }
    let latents = LatentPath::sample_prior(cfg, length, &mut Rng::new(seed));
    let (trace, _) = unroll(cfg, params, &latents, BatchNormMode::Infer)?;
    Ok((VideoSequence::new(trace.frames.clone())?, trace))
}
