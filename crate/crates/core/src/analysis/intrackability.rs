use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DecompositionTrace, ModelConfig};
use crate::scalar::Scalar;
use crate::video::VideoSequence;

/// Share of a video left unexplained by motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrackabilityReport {
    /// `‖R_t‖₂` for `t = 0..=T`.
    pub residual_norms: Vec<f64>,
    /// `‖I_t‖₂` of the observed frames.
    pub observed_norms: Vec<f64>,
    /// `mean_t ‖R_t‖ / mean_t ‖I_t‖`.
    pub score: f64,
    pub lambda1: Option<f64>,
    pub config_hash: Option<String>,
}

impl IntrackabilityReport {
    /// Attaches `λ1` and the configuration hash.
    pub fn with_config(mut self, cfg: &ModelConfig) -> Self {
        self.lambda1 = Some(cfg.lambda1);
        self.config_hash = Some(config_hash(cfg));
        self
    }

    /// One row per frame: `frame,residual_norm,observed_norm`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,residual_norm,observed_norm\n");
        for (t, (r, o)) in self.residual_norms.iter().zip(&self.observed_norms).enumerate() {
            out.push_str(&format!("{t},{r},{o}\n"));
        }
        out
    }
}

/// FNV-1a (64-bit) of the configuration's JSON encoding, as 16 hex digits.
pub fn config_hash(cfg: &ModelConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn frame_norms<S: Scalar>(frames: &[S], frame_len: usize) -> Vec<f64> {
    frames
        .chunks_exact(frame_len)
        .map(|f| f.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>().sqrt())
        .collect()
}

/// Ratio of the time-averaged residual norm to the time-averaged norm of
/// the observed frames.
pub fn intrackability<S: Scalar>(
    trace: &DecompositionTrace<S>,
    observed: &VideoSequence<S>,
) -> Result<IntrackabilityReport> {
    if trace.residuals.shape() != observed.frames().shape() {
        return Err(Error::shape(
            "intrackability",
            format!("observed frames {:?}", trace.residuals.shape()),
            observed.frames().shape(),
        ));
    }
    let n = observed.frame_len();
    let residual_norms = frame_norms(trace.residuals.data(), n);
    let observed_norms = frame_norms(observed.frames().data(), n);
    let frames = residual_norms.len() as f64;
    let mean_r = residual_norms.iter().sum::<f64>() / frames;
    let mean_o = observed_norms.iter().sum::<f64>() / frames;
    if mean_o == 0.0 {
        return Err(Error::Analysis(
            "intrackability is undefined for an all-zero observed video".into(),
        ));
    }
    Ok(IntrackabilityReport {
        residual_norms,
        observed_norms,
        score: mean_r / mean_o,
        lambda1: None,
        config_hash: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn trace_with(residuals: Tensor<f64>) -> DecompositionTrace<f64> {
        let t = residuals.shape()[0] - 1;
        let s = residuals.shape().to_vec();
        DecompositionTrace {
            states: Tensor::zeros(&[t.max(1), 1]),
            flows: Tensor::zeros(&[t.max(1), s[1], s[2], 2]),
            trackables: Tensor::zeros(&s),
            frames: residuals.clone(),
            residuals,
        }
    }

    fn frames(norms: &[f64]) -> Tensor<f64> {
        // A frame [x, 0] has norm |x|.
        let data = norms.iter().flat_map(|&n| [n, 0.0]).collect();
        Tensor::from_vec(&[norms.len(), 1, 2, 1], data).unwrap()
    }

    #[test]
    fn ratio_of_averages() {
        let tr = trace_with(frames(&[1.0, 3.0]));
        let obs = VideoSequence::new(frames(&[2.0, 4.0])).unwrap();
        let r = intrackability(&tr, &obs).unwrap();
        assert!((r.score - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.residual_norms, vec![1.0, 3.0]);
        assert!(r.to_csv().starts_with("frame,residual_norm,observed_norm\n0,1,2\n"));
    }

    #[test]
    fn zero_and_full_residuals() {
        let obs = VideoSequence::new(frames(&[2.0, 4.0, 1.0])).unwrap();
        assert_eq!(intrackability(&trace_with(frames(&[0.0; 3])), &obs).unwrap().score, 0.0);
        assert_eq!(intrackability(&trace_with(frames(&[2.0, 4.0, 1.0])), &obs).unwrap().score, 1.0);
        let zero = VideoSequence::new(frames(&[0.0; 3])).unwrap();
        assert!(intrackability(&trace_with(frames(&[1.0; 3])), &zero).is_err());
    }

    #[test]
    fn hash_tracks_config() {
        let a = ModelConfig::default();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.lambda1 = 2.0;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 16);
    }
}
