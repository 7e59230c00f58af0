//! Finite-difference verification of the penalized log joint.

use crate::autodiff::{compare_gradient_steps, BatchNormMode, GradCheckReport, Tensor};
use crate::error::Result;
use crate::model::{penalized_log_joint, EvalOptions, LatentPath, ModelConfig, ModelParams};
use crate::rng::Rng;
use crate::video::VideoSequence;

/// Default central-difference steps for double precision.
pub const DEFAULT_STEPS: [f64; 2] = [2e-5, 5e-6];

/// Tolerance on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;

/// Per-tensor results of a full-model gradient check.
#[derive(Debug, Clone)]
pub struct ModelGradCheck {
    /// `latent.<component>` and parameter names, in a fixed order.
    pub entries: Vec<(String, GradCheckReport)>,
}

impl ModelGradCheck {
    pub fn worst(&self) -> Option<&(String, GradCheckReport)> {
        self.entries
            .iter()
            .fold(None, |acc: Option<&(String, GradCheckReport)>, e| match acc {
                Some(a) if a.1.max_rel_err >= e.1.max_rel_err => Some(a),
                _ => Some(e),
            })
    }

    pub fn max_rel_err(&self) -> f64 {
        self.worst().map_or(0.0, |w| w.1.max_rel_err)
    }

    pub fn coordinates(&self) -> usize {
        self.entries.iter().map(|e| e.1.coordinates).sum()
    }
}

/// Problem instance used by [`check_model_gradients`]: seeded parameters,
/// prior latents, and a video near the model's own mean.
pub fn gradcheck_problem(
    cfg: &ModelConfig,
    seed: u64,
) -> Result<(ModelParams<f64>, LatentPath<f64>, VideoSequence<f64>)> {
    cfg.validate()?;
    let mut rng = Rng::new(seed);
    let params = ModelParams::<f64>::init(cfg, &mut rng)?;
    let latents = LatentPath::sample_prior(cfg, cfg.transitions, &mut rng);
    let (trace, _) = crate::model::unroll(cfg, &params, &latents, BatchNormMode::Train)?;
    let mut frames = trace.frames;
    for v in frames.data_mut() {
        *v = (*v + 0.1 * rng.normal()).clamp(-1.0, 1.0);
    }
    Ok((params, latents, VideoSequence::new(frames)?))
}

/// Compares reverse-mode gradients of the penalized log joint (train-mode
/// batch norm, double precision) against central differences for every
/// latent component and every trainable tensor, trying each step in
/// `steps` per coordinate.
pub fn check_model_gradients(cfg: &ModelConfig, seed: u64, steps: &[f64]) -> Result<ModelGradCheck> {
    let (params, latents, video) = gradcheck_problem(cfg, seed)?;
    let mode = BatchNormMode::Train;
    let eval = penalized_log_joint(cfg, &params, &latents, &video, EvalOptions::all(mode))?;
    let latent_grad = eval.latent_grad.expect("latent gradients requested");
    let param_grads = eval.param_grads.expect("parameter gradients requested");
    let objective = |p: &ModelParams<f64>, z: &LatentPath<f64>| -> Result<f64> {
        Ok(penalized_log_joint(cfg, p, z, &video, EvalOptions::value(mode))?.terms.objective)
    };

    let mut entries = Vec::new();
    for ((name, point), (_, grad)) in latents.components().into_iter().zip(latent_grad.components()) {
        let report = compare_gradient_steps(
            |x| {
                let mut z = latents.clone();
                replace(&mut z, name, x)?;
                objective(&params, &z)
            },
            point.data(),
            grad.data(),
            steps,
        )?;
        entries.push((format!("latent.{name}"), report));
    }
    for (name, point) in params.trainable() {
        let report = compare_gradient_steps(
            |x| {
                let mut p = params.clone();
                let t = p.get_mut(name).expect("parameter exists");
                *t = Tensor::from_vec(point.shape(), x.to_vec())?;
                objective(&p, &latents)
            },
            point.data(),
            param_grads[name].data(),
            steps,
        )?;
        entries.push((name.clone(), report));
    }
    Ok(ModelGradCheck { entries })
}

fn replace(z: &mut LatentPath<f64>, name: &str, values: &[f64]) -> Result<()> {
    for (n, t) in z.components_mut() {
        if n == name {
            t.data_mut().copy_from_slice(values);
        }
    }
    Ok(())
}
