use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Latent variables of one video: appearance `c`, initial state `s0`, the
/// per-transition noise `h` (`T x d_h`) and the optional sequence vector `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPath<S> {
    pub c: Tensor<S>,
    pub s0: Tensor<S>,
    pub h: Tensor<S>,
    pub a: Option<Tensor<S>>,
}

impl<S: Scalar> LatentPath<S> {
    pub fn zeros(cfg: &ModelConfig, transitions: usize) -> Self {
        Self {
            c: Tensor::zeros(&[cfg.appearance_dim]),
            s0: Tensor::zeros(&[cfg.state_dim]),
            h: Tensor::zeros(&[transitions.max(1), cfg.noise_dim]),
            a: (cfg.seq_dim() > 0).then(|| Tensor::zeros(&[cfg.seq_dim()])),
        }
    }

    /// Independent standard-normal draws for every component.
    pub fn sample_prior(cfg: &ModelConfig, transitions: usize, rng: &mut Rng) -> Self {
        let mut out = Self::zeros(cfg, transitions);
        for t in out.components_mut() {
            rng.fill_normal(t.1.data_mut(), 1.0);
        }
        out
    }

    pub fn transitions(&self) -> usize {
        self.h.shape()[0]
    }

    /// Components in a fixed order: `c`, `s0`, `h`, then `a` if present.
    pub fn components(&self) -> Vec<(&'static str, &Tensor<S>)> {
        let mut v = vec![("c", &self.c), ("s0", &self.s0), ("h", &self.h)];
        if let Some(a) = &self.a {
            v.push(("a", a));
        }
        v
    }

    pub fn components_mut(&mut self) -> Vec<(&'static str, &mut Tensor<S>)> {
        let mut v = vec![("c", &mut self.c), ("s0", &mut self.s0), ("h", &mut self.h)];
        if let Some(a) = &mut self.a {
            v.push(("a", a));
        }
        v
    }

    pub fn sq_norm(&self) -> S {
        self.components().iter().map(|(_, t)| t.sum_sq()).sum()
    }

    pub fn num_scalars(&self) -> usize {
        self.components().iter().map(|(_, t)| t.numel()).sum()
    }

    /// All components concatenated in [`components`](Self::components) order.
    pub fn flatten(&self) -> Vec<S> {
        self.components().iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    /// Inverse of [`flatten`](Self::flatten) onto this path's shapes.
    pub fn unflatten(&self, values: &[S]) -> Result<Self> {
        if values.len() != self.num_scalars() {
            return Err(Error::shape("latent path", format!("{} values", self.num_scalars()), &[values.len()]));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for (_, t) in out.components_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(out)
    }

    /// Verifies shapes against `cfg`; `h` may have any number of rows.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let expect = Self::zeros(cfg, self.transitions());
        if self.a.is_some() != expect.a.is_some() {
            return Err(Error::invalid(
                "latent path",
                format!("sequence vector present: {}, config expects {}", self.a.is_some(), expect.a.is_some()),
            ));
        }
        for ((name, mine), (_, want)) in self.components().into_iter().zip(expect.components()) {
            if mine.shape() != want.shape() {
                return Err(Error::shape("latent path", format!("`{name}` {:?}", want.shape()), mine.shape()));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|(_, t)| t.is_finite())
    }

    pub fn cast<T: Scalar>(&self) -> LatentPath<T> {
        LatentPath {
            c: self.c.cast(),
            s0: self.s0.cast(),
            h: self.h.cast(),
            a: self.a.as_ref().map(Tensor::cast),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_flatten_roundtrip() {
        let mut cfg = ModelConfig::toy();
        cfg.seq_motion_dim = 2;
        cfg.seq_residual_dim = 1;
        let z = LatentPath::<f64>::sample_prior(&cfg, 3, &mut Rng::new(1));
        z.check(&cfg).unwrap();
        assert_eq!(z.num_scalars(), 4 + 8 + 3 * 6 + 3);
        let back = z.unflatten(&z.flatten()).unwrap();
        assert_eq!(back, z);
        assert!(z.unflatten(&[0.0]).is_err());
        assert!(LatentPath::<f64>::zeros(&ModelConfig::toy(), 3).check(&cfg).is_err());
    }

    #[test]
    fn prior_draws_are_standard_normal() {
        let mut cfg = ModelConfig::toy();
        cfg.noise_dim = 100;
        let z = LatentPath::<f64>::sample_prior(&cfg, 400, &mut Rng::new(5));
        let xs = z.h.data();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02 && (var - 1.0).abs() < 0.03, "{mean} {var}");
    }
}
