//! The unrolled generator and the penalized log joint, built on [`Graph`].

use std::collections::BTreeMap;

use crate::autodiff::sample;
use crate::autodiff::{BatchNormMode, BatchStats, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::model::config::{LayerKind, ModelConfig};
use crate::model::latent::LatentPath;
use crate::model::params::{Generator, ModelParams};
use crate::model::trace::DecompositionTrace;
use crate::scalar::{lit, Scalar};
use crate::video::VideoSequence;

/// What an evaluation differentiates and how batch norm behaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub mode: BatchNormMode,
    pub grad_latents: bool,
    pub grad_params: bool,
}

impl EvalOptions {
    /// Objective only.
    pub fn value(mode: BatchNormMode) -> Self {
        Self {
            mode,
            grad_latents: false,
            grad_params: false,
        }
    }

    pub fn latents(mode: BatchNormMode) -> Self {
        Self {
            grad_latents: true,
            ..Self::value(mode)
        }
    }

    pub fn params(mode: BatchNormMode) -> Self {
        Self {
            grad_params: true,
            ..Self::value(mode)
        }
    }

    pub fn all(mode: BatchNormMode) -> Self {
        Self {
            mode,
            grad_latents: true,
            grad_params: true,
        }
    }
}

/// The pieces of the penalized log joint, in double precision.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveTerms {
    /// `‖latents‖²`.
    pub prior: f64,
    /// `Σ_t ‖observed_t - mean_t‖²`.
    pub recon: f64,
    /// `Σ_t ‖R_t‖²`.
    pub penalty_r: f64,
    /// `Σ_t ‖∇M_t‖²`.
    pub penalty_smooth: f64,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation<S> {
    pub terms: ObjectiveTerms,
    pub trace: DecompositionTrace<S>,
    pub latent_grad: Option<LatentPath<S>>,
    pub param_grads: Option<BTreeMap<String, Tensor<S>>>,
    /// Batch statistics per normalized layer (train mode only).
    pub batch_stats: BTreeMap<String, BatchStats<S>>,
}

struct LatentNodes {
    c: NodeId,
    s0: NodeId,
    h: NodeId,
    a: Option<NodeId>,
}

struct Unrolled {
    states: NodeId,
    flows: NodeId,
    residuals: Option<NodeId>,
    trackables: NodeId,
    frames: NodeId,
}

struct Net<'a, S: Scalar> {
    cfg: &'a ModelConfig,
    params: &'a ModelParams<S>,
    mode: BatchNormMode,
    g: Graph<S>,
    nodes: BTreeMap<String, NodeId>,
    stats: BTreeMap<String, BatchStats<S>>,
}

impl<'a, S: Scalar> Net<'a, S> {
    fn new(cfg: &'a ModelConfig, params: &'a ModelParams<S>, mode: BatchNormMode, grad_params: bool) -> Self {
        let mut g = Graph::new();
        let nodes = params
            .trainable()
            .iter()
            .map(|(k, v)| (k.clone(), g.input(v.clone(), grad_params)))
            .collect();
        Self {
            cfg,
            params,
            mode,
            g,
            nodes,
            stats: BTreeMap::new(),
        }
    }

    fn p(&self, name: &str) -> Result<NodeId> {
        self.nodes
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid("model", format!("missing parameter `{name}`")))
    }

    fn latents(&mut self, z: &LatentPath<S>, grad: bool) -> LatentNodes {
        LatentNodes {
            c: self.g.input(z.c.clone(), grad),
            s0: self.g.input(z.s0.clone(), grad),
            h: self.g.input(z.h.clone(), grad),
            a: z.a.as_ref().map(|a| self.g.input(a.clone(), grad)),
        }
    }

    /// `s_t = tanh(s_prev + MLP([s_prev, h_t, a]))` on `1 x d` rows.
    fn transition(&mut self, s_prev: NodeId, h_t: NodeId, a: Option<NodeId>) -> Result<NodeId> {
        let mut parts = vec![s_prev, h_t];
        parts.extend(a);
        let mut x = self.g.concat(&parts)?;
        let layers = self.cfg.transition_hidden.len() + 1;
        for i in 0..layers {
            let w = self.p(&format!("transition.l{i}.weight"))?;
            let b = self.p(&format!("transition.l{i}.bias"))?;
            x = self.g.matmul(x, w)?;
            x = self.g.add_bias(x, b)?;
            if i + 1 < layers {
                x = self.g.relu(x);
            }
        }
        let sum = self.g.add(s_prev, x)?;
        Ok(self.g.tanh(sum))
    }

    /// Deconvolution ladder from `N x d` seeds to `N x H x W x C_out`, tanh output.
    fn generator(&mut self, gen: Generator, seeds: NodeId) -> Result<NodeId> {
        let plan = self.cfg.ladder(gen.seed_dim(self.cfg), gen.out_channels(self.cfg))?;
        let s = self.g.shape(seeds).to_vec();
        if s.len() != 2 || s[1] != gen.seed_dim(self.cfg) {
            return Err(Error::shape(gen.name(), format!("N x {}", gen.seed_dim(self.cfg)), &s));
        }
        let mut x = self.g.reshape(seeds, &[s[0], 1, 1, s[1]])?;
        let last = plan.len() - 1;
        for (i, layer) in plan.iter().enumerate() {
            let prefix = format!("{}.l{i}", gen.name());
            let kernel = self.p(&format!("{prefix}.kernel"))?;
            let bias = if i == last {
                Some(self.p(&format!("{prefix}.bias"))?)
            } else {
                None
            };
            x = match layer.kind {
                LayerKind::Seed => self.g.conv_transpose2d(x, kernel, 1, 0, bias)?,
                LayerKind::Double => self.g.conv_transpose2d(x, kernel, 2, 1, bias)?,
                LayerKind::Same => {
                    self.g
                        .conv_transpose2d_cropped(x, kernel, 1, 1, (layer.size, layer.size), bias)?
                }
            };
            if i < last {
                let gamma = self.p(&format!("{prefix}.bn.gamma"))?;
                let beta = self.p(&format!("{prefix}.bn.beta"))?;
                let eps = self.cfg.bn_epsilon;
                x = match self.mode {
                    BatchNormMode::Train => {
                        let (y, stats) = self.g.batch_norm_train(x, gamma, beta, eps)?;
                        self.stats.insert(prefix, stats);
                        y
                    }
                    BatchNormMode::Infer => {
                        let running = self
                            .params
                            .running(&prefix)
                            .ok_or_else(|| Error::invalid("model", format!("missing running stats for `{prefix}`")))?;
                        self.g.batch_norm_infer(x, gamma, beta, &running, eps)?
                    }
                };
                x = self.g.relu(x);
            }
        }
        Ok(self.g.tanh(x))
    }

    /// Repeats a `d` vector into `n x d` rows.
    fn tile(&mut self, v: NodeId, n: usize) -> Result<NodeId> {
        let d = self.g.value(v).numel();
        let row = self.g.reshape(v, &[1, d])?;
        let rows = self.g.stack(&vec![row; n])?;
        self.g.reshape(rows, &[n, d])
    }

    /// Appends the sequence-vector slice `[start, start+len)` to `n x d` seeds.
    fn with_seq(&mut self, seeds: NodeId, a: Option<NodeId>, start: usize, len: usize) -> Result<NodeId> {
        match a {
            Some(a) if len > 0 => {
                let n = self.g.shape(seeds)[0];
                let part = self.g.narrow(a, start, len)?;
                let tiled = self.tile(part, n)?;
                self.g.concat(&[seeds, tiled])
            }
            _ => Ok(seeds),
        }
    }

    fn unroll(&mut self, z: &LatentNodes) -> Result<Unrolled> {
        let cfg = self.cfg;
        let (hh, ww, cc) = (cfg.image_size, cfg.image_size, cfg.channels);
        let t_len = self.g.shape(z.h)[0];
        let (d_m, d_r) = (cfg.motion_state_dim, cfg.residual_state_dim);

        let a_row = match z.a {
            Some(a) => Some(self.g.reshape(a, &[1, cfg.seq_dim()])?),
            None => None,
        };
        let s0 = self.g.reshape(z.s0, &[1, cfg.state_dim])?;
        let mut rows = vec![s0];
        for t in 0..t_len {
            let h_t = self.g.select(z.h, t)?;
            let h_t = self.g.reshape(h_t, &[1, cfg.noise_dim])?;
            let s = self.transition(*rows.last().unwrap(), h_t, a_row)?;
            rows.push(s);
        }
        let all = self.g.stack(&rows)?;
        let all = self.g.reshape(all, &[t_len + 1, cfg.state_dim])?;
        let later = self.g.stack(&rows[1..])?;
        let states = self.g.reshape(later, &[t_len, cfg.state_dim])?;

        let flow_seeds = self.g.narrow(states, 0, d_m)?;
        let flow_seeds = self.with_seq(flow_seeds, z.a, 0, cfg.seq_motion_dim)?;
        let raw = self.generator(Generator::Flow, flow_seeds)?;
        let flows = self.g.scale(raw, lit(cfg.flow_scale));

        let residuals = if cfg.has_residuals() {
            let seeds = self.g.narrow(all, d_m, d_r)?;
            let seeds = self.with_seq(seeds, z.a, cfg.seq_motion_dim, cfg.seq_residual_dim)?;
            Some(self.generator(Generator::Residual, seeds)?)
        } else {
            None
        };

        let c = self.g.reshape(z.c, &[1, cfg.appearance_dim])?;
        let first = self.generator(Generator::Appearance, c)?;
        let mut trackable = self.g.reshape(first, &[hh, ww, cc])?;
        let grid = self.g.constant(Tensor::from_vec(&[hh, ww, 2], sample::identity_grid(hh, ww))?);

        let mut trackables = Vec::with_capacity(t_len + 1);
        let mut means = Vec::with_capacity(t_len + 1);
        for t in 0..=t_len {
            if t > 0 {
                let m = self.g.select(flows, t - 1)?;
                let coords = self.g.add(grid, m)?;
                trackable = self.g.bilinear_sample(trackable, coords)?;
            }
            trackables.push(trackable);
            means.push(match residuals {
                Some(r) => {
                    let r_t = self.g.select(r, t)?;
                    self.g.add(trackable, r_t)?
                }
                None => trackable,
            });
        }
        Ok(Unrolled {
            states,
            flows,
            residuals,
            trackables: self.g.stack(&trackables)?,
            frames: self.g.stack(&means)?,
        })
    }

    fn trace(&self, u: &Unrolled) -> DecompositionTrace<S> {
        let frames = self.g.value(u.frames).clone();
        DecompositionTrace {
            states: self.g.value(u.states).clone(),
            flows: self.g.value(u.flows).clone(),
            residuals: match u.residuals {
                Some(r) => self.g.value(r).clone(),
                None => Tensor::zeros(frames.shape()),
            },
            trackables: self.g.value(u.trackables).clone(),
            frames,
        }
    }
}

/// Noise-free unroll of `latents`; also returns the batch statistics used
/// by every normalized layer in train mode.
pub fn unroll<S: Scalar>(
    cfg: &ModelConfig,
    params: &ModelParams<S>,
    latents: &LatentPath<S>,
    mode: BatchNormMode,
) -> Result<(DecompositionTrace<S>, BTreeMap<String, BatchStats<S>>)> {
    latents.check(cfg)?;
    let mut net = Net::new(cfg, params, mode, false);
    let z = net.latents(latents, false);
    let u = net.unroll(&z)?;
    let trace = net.trace(&u);
    Ok((trace, net.stats))
}

/// Penalized log joint
/// `-½(‖latents‖² + Σ‖obs - mean‖²/σ²) - λ1 Σ‖R_t‖² - λ2 Σ‖∇M_t‖²`
/// with the requested gradients.
pub fn penalized_log_joint<S: Scalar>(
    cfg: &ModelConfig,
    params: &ModelParams<S>,
    latents: &LatentPath<S>,
    video: &VideoSequence<S>,
    options: EvalOptions,
) -> Result<Evaluation<S>> {
    latents.check(cfg)?;
    let t_len = latents.transitions();
    let want = [t_len + 1, cfg.image_size, cfg.image_size, cfg.channels];
    if video.frames().shape() != want {
        return Err(Error::shape("penalized_log_joint", format!("video {want:?}"), video.frames().shape()));
    }
    let mut net = Net::new(cfg, params, options.mode, options.grad_params);
    let z = net.latents(latents, options.grad_latents);
    let u = net.unroll(&z)?;
    let g = &mut net.g;

    let mut prior = g.sum_sq(z.c);
    for part in [Some(z.s0), Some(z.h), z.a].into_iter().flatten() {
        let sq = g.sum_sq(part);
        prior = g.add(prior, sq)?;
    }
    let obs = g.constant(video.frames().clone());
    let diff = g.sub(obs, u.frames)?;
    let recon = g.sum_sq(diff);
    let smooth = g.smoothness_sq(u.flows)?;

    let sigma2 = cfg.sigma * cfg.sigma;
    let a = g.scale(prior, lit(-0.5));
    let b = g.scale(recon, lit(-0.5 / sigma2));
    let mut root = g.add(a, b)?;
    let penalty_r = match u.residuals {
        Some(r) => {
            let pr = g.sum_sq(r);
            let term = g.scale(pr, lit(-cfg.lambda1));
            root = g.add(root, term)?;
            Some(pr)
        }
        None => None,
    };
    let term = g.scale(smooth, lit(-cfg.lambda2));
    root = g.add(root, term)?;

    let val = |id: NodeId| g.value(id).item().to_f64_lossy();
    let terms = ObjectiveTerms {
        prior: val(prior),
        recon: val(recon),
        penalty_r: penalty_r.map_or(0.0, val),
        penalty_smooth: val(smooth),
        objective: val(root),
    };
    if !terms.objective.is_finite() {
        return Err(Error::NonFinite {
            what: "penalized log joint".into(),
        });
    }

    let (latent_grad, param_grads) = if options.grad_latents || options.grad_params {
        let mut grads = net.g.backward(root)?;
        let latent_grad = if options.grad_latents {
            let mut take = |id: NodeId| grads.take(id).expect("latent gradient present");
            Some(LatentPath {
                c: take(z.c),
                s0: take(z.s0),
                h: take(z.h),
                a: z.a.map(take),
            })
        } else {
            None
        };
        let param_grads = if options.grad_params {
            Some(
                net.nodes
                    .iter()
                    .map(|(k, &id)| (k.clone(), grads.take(id).expect("parameter gradient present")))
                    .collect(),
            )
        } else {
            None
        };
        (latent_grad, param_grads)
    } else {
        (None, None)
    };

    Ok(Evaluation {
        terms,
        trace: net.trace(&u),
        latent_grad,
        param_grads,
        batch_stats: net.stats,
    })
}

/// One transition `s_t` from `s_prev` (`d_s`), `h_t` (`d_h`) and `a`.
pub fn transition_step<S: Scalar>(
    cfg: &ModelConfig,
    params: &ModelParams<S>,
    s_prev: &Tensor<S>,
    h_t: &Tensor<S>,
    a: Option<&Tensor<S>>,
) -> Result<Tensor<S>> {
    let mut net = Net::new(cfg, params, BatchNormMode::Infer, false);
    let mut row = |t: &Tensor<S>, d: usize, what: &str| -> Result<NodeId> {
        if t.numel() != d {
            return Err(Error::shape("transition_step", format!("{what} [{d}]"), t.shape()));
        }
        Ok(net.g.constant(t.clone().reshape(&[1, d])?))
    };
    let s = row(s_prev, cfg.state_dim, "s_prev")?;
    let h = row(h_t, cfg.noise_dim, "h_t")?;
    let a = match a {
        Some(a) => Some(row(a, cfg.seq_dim(), "a")?),
        None => None,
    };
    let out = net.transition(s, h, a)?;
    net.g.value(out).clone().reshape(&[cfg.state_dim])
}

fn emit<S: Scalar>(
    cfg: &ModelConfig,
    params: &ModelParams<S>,
    gen: Generator,
    seeds: &Tensor<S>,
    mode: BatchNormMode,
) -> Result<Tensor<S>> {
    let mut net = Net::new(cfg, params, mode, false);
    let d = gen.seed_dim(cfg);
    let rows = if seeds.rank() == 1 { 1 } else { seeds.shape()[0] };
    if seeds.numel() != rows * d || seeds.rank() > 2 {
        return Err(Error::shape(gen.name(), format!("N x {d} seeds"), seeds.shape()));
    }
    let x = net.g.constant(seeds.clone().reshape(&[rows, d])?);
    let out = net.generator(gen, x)?;
    Ok(net.g.value(out).clone())
}

/// Displacement fields `N x H x W x 2` (pixels) for `N x (d_M + d_aM)` seeds.
pub fn emit_flow<S: Scalar>(
    cfg: &ModelConfig,
    params: &ModelParams<S>,
    seeds: &Tensor<S>,
    mode: BatchNormMode,
) -> Result<Tensor<S>> {
    let scale: S = lit(cfg.flow_scale);
    Ok(emit(cfg, params, Generator::Flow, seeds, mode)?.map(|v| v * scale))
}

/// Residual images `N x H x W x C` for `N x (d_R + d_aR)` seeds; zeros when
/// the model is trackable-only.
pub fn emit_residual<S: Scalar>(
    cfg: &ModelConfig,
    params: &ModelParams<S>,
    seeds: &Tensor<S>,
    mode: BatchNormMode,
) -> Result<Tensor<S>> {
    if !cfg.has_residuals() {
        let rows = if seeds.rank() == 1 { 1 } else { seeds.shape()[0] };
        return Ok(Tensor::zeros(&[rows, cfg.image_size, cfg.image_size, cfg.channels]));
    }
    emit(cfg, params, Generator::Residual, seeds, mode)
}

/// First frame `H x W x C` from an appearance vector.
pub fn emit_appearance<S: Scalar>(
    cfg: &ModelConfig,
    params: &ModelParams<S>,
    c: &Tensor<S>,
    mode: BatchNormMode,
) -> Result<Tensor<S>> {
    let out = emit(cfg, params, Generator::Appearance, c, mode)?;
    out.reshape(&[cfg.image_size, cfg.image_size, cfg.channels])
}

/// Backward warp: `out(p) = prev(p + flow(p))`, bilinear with edge clamp.
pub fn warp<S: Scalar>(prev: &Tensor<S>, flow: &Tensor<S>) -> Result<Tensor<S>> {
    let s = prev.shape();
    if s.len() != 3 || flow.shape() != [s[0], s[1], 2] {
        return Err(Error::shape(
            "warp",
            format!("image H x W x C with flow H x W x 2, image {s:?}"),
            flow.shape(),
        ));
    }
    Tensor::from_vec(s, sample::warp(prev.data(), (s[0], s[1], s[2]), flow.data()))
}
