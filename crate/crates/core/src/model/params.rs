use std::collections::BTreeMap;

use crate::autodiff::norm::BatchStats;
use crate::autodiff::{RunningStats, Tensor};
use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, KERNEL_SIZE};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// The three deconvolution generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Generator {
    /// `f0`: first frame from the appearance vector.
    Appearance,
    /// `f2`: displacement field from the motion state.
    Flow,
    /// `f3`: residual image from the residual state.
    Residual,
}

impl Generator {
    pub fn name(self) -> &'static str {
        match self {
            Generator::Appearance => "appearance",
            Generator::Flow => "flow",
            Generator::Residual => "residual",
        }
    }

    /// Length of the seed vector fed to the ladder.
    pub fn seed_dim(self, cfg: &ModelConfig) -> usize {
        match self {
            Generator::Appearance => cfg.appearance_dim,
            Generator::Flow => cfg.motion_state_dim + cfg.seq_motion_dim,
            Generator::Residual => cfg.residual_state_dim + cfg.seq_residual_dim,
        }
    }

    pub fn out_channels(self, cfg: &ModelConfig) -> usize {
        match self {
            Generator::Flow => 2,
            _ => cfg.channels,
        }
    }

    /// Generators present under `cfg`.
    pub fn active(cfg: &ModelConfig) -> Vec<Generator> {
        let mut gens = vec![Generator::Appearance, Generator::Flow];
        if cfg.has_residuals() {
            gens.push(Generator::Residual);
        }
        gens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Gaussian,
    Zero,
    One,
}

/// Shapes of every trainable tensor, in name order.
pub fn trainable_layout(cfg: &ModelConfig) -> Result<BTreeMap<String, Vec<usize>>> {
    Ok(layout(cfg)?.into_iter().map(|(k, (s, _))| (k, s)).collect())
}

fn layout(cfg: &ModelConfig) -> Result<BTreeMap<String, (Vec<usize>, Init)>> {
    let mut out = BTreeMap::new();
    let mut width = cfg.state_dim + cfg.noise_dim + cfg.seq_dim();
    let widths: Vec<usize> = cfg.transition_hidden.iter().copied().chain([cfg.state_dim]).collect();
    for (i, &w) in widths.iter().enumerate() {
        out.insert(format!("transition.l{i}.weight"), (vec![width, w], Init::Gaussian));
        out.insert(format!("transition.l{i}.bias"), (vec![w], Init::Zero));
        width = w;
    }
    for gen in Generator::active(cfg) {
        let plan = cfg.ladder(gen.seed_dim(cfg), gen.out_channels(cfg))?;
        let last = plan.len() - 1;
        for (i, layer) in plan.iter().enumerate() {
            let p = format!("{}.l{i}", gen.name());
            out.insert(
                format!("{p}.kernel"),
                (
                    vec![KERNEL_SIZE, KERNEL_SIZE, layer.in_channels, layer.out_channels],
                    Init::Gaussian,
                ),
            );
            if i == last {
                out.insert(format!("{p}.bias"), (vec![layer.out_channels], Init::Zero));
            } else {
                out.insert(format!("{p}.bn.gamma"), (vec![layer.out_channels], Init::One));
                out.insert(format!("{p}.bn.beta"), (vec![layer.out_channels], Init::Zero));
            }
        }
    }
    Ok(out)
}

/// Named parameters of the transition MLP and the generators, plus the
/// batch-norm running statistics.
///
/// Running statistics live under `<layer>.bn.running_mean` and
/// `<layer>.bn.running_var`; they are buffers, not trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    trainable: BTreeMap<String, Tensor<S>>,
    buffers: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> ModelParams<S> {
    /// Gaussian weights with std `cfg.init_std`, zero biases, unit gains.
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut trainable = BTreeMap::new();
        for (name, (shape, init)) in layout(cfg)? {
            let t = match init {
                Init::Gaussian => {
                    let mut t = Tensor::zeros(&shape);
                    rng.fill_normal(t.data_mut(), cfg.init_std);
                    t
                }
                Init::Zero => Tensor::zeros(&shape),
                Init::One => Tensor::ones(&shape),
            };
            trainable.insert(name, t);
        }
        Ok(Self::with_buffers(trainable))
    }

    /// Every trainable tensor zero (including batch-norm gains).
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let trainable = trainable_layout(cfg)?
            .into_iter()
            .map(|(k, s)| (k, Tensor::zeros(&s)))
            .collect();
        Ok(Self::with_buffers(trainable))
    }

    fn with_buffers(trainable: BTreeMap<String, Tensor<S>>) -> Self {
        let mut buffers = BTreeMap::new();
        for (name, t) in &trainable {
            if let Some(layer) = name.strip_suffix(".gamma") {
                let c = t.numel();
                buffers.insert(format!("{layer}.running_mean"), Tensor::zeros(&[c]));
                buffers.insert(format!("{layer}.running_var"), Tensor::ones(&[c]));
            }
        }
        Self { trainable, buffers }
    }

    /// Builds from explicit maps, checking them against `cfg`.
    pub fn from_parts(
        cfg: &ModelConfig,
        trainable: BTreeMap<String, Tensor<S>>,
        buffers: BTreeMap<String, Tensor<S>>,
    ) -> Result<Self> {
        let p = Self { trainable, buffers };
        p.check(cfg)?;
        Ok(p)
    }

    /// Verifies names and shapes against `cfg`.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = Self::zeros(cfg)?;
        for (mine, theirs) in [(&self.trainable, &expected.trainable), (&self.buffers, &expected.buffers)] {
            for (name, t) in theirs {
                match mine.get(name) {
                    None => return Err(Error::invalid("model params", format!("missing tensor `{name}`"))),
                    Some(m) if m.shape() != t.shape() => {
                        return Err(Error::shape("model params", format!("`{name}` {:?}", t.shape()), m.shape()))
                    }
                    _ => {}
                }
            }
            if let Some(extra) = mine.keys().find(|k| !theirs.contains_key(*k)) {
                return Err(Error::invalid("model params", format!("unexpected tensor `{extra}`")));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.trainable.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.trainable.get_mut(name)
    }

    pub fn trainable(&self) -> &BTreeMap<String, Tensor<S>> {
        &self.trainable
    }

    pub fn trainable_mut(&mut self) -> &mut BTreeMap<String, Tensor<S>> {
        &mut self.trainable
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor<S>> {
        &self.buffers
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.trainable.keys().map(String::as_str)
    }

    pub fn num_scalars(&self) -> usize {
        self.trainable.values().map(Tensor::numel).sum()
    }

    /// Running statistics of the batch-norm layer `layer` (e.g. `flow.l0`).
    pub fn running(&self, layer: &str) -> Option<RunningStats<S>> {
        Some(RunningStats {
            mean: self.buffers.get(&format!("{layer}.bn.running_mean"))?.clone(),
            var: self.buffers.get(&format!("{layer}.bn.running_var"))?.clone(),
        })
    }

    /// Folds per-layer batch statistics into the running estimates.
    pub fn update_running(&mut self, stats: &BTreeMap<String, BatchStats<S>>, momentum: f64) -> Result<()> {
        for (layer, batch) in stats {
            let mut r = self
                .running(layer)
                .ok_or_else(|| Error::invalid("update_running", format!("no batch-norm layer `{layer}`")))?;
            r.update(batch, momentum);
            self.buffers.insert(format!("{layer}.bn.running_mean"), r.mean);
            self.buffers.insert(format!("{layer}.bn.running_var"), r.var);
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        let conv = |m: &BTreeMap<String, Tensor<S>>| m.iter().map(|(k, v)| (k.clone(), v.cast())).collect();
        ModelParams {
            trainable: conv(&self.trainable),
            buffers: conv(&self.buffers),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.trainable.values().chain(self.buffers.values()).all(Tensor::is_finite)
    }
}
