//! Linear dynamic system baseline: SVD frame reduction plus a first-order
//! linear autoregression of the reduced states. Solved in double precision.

use nalgebra::{DMatrix, DVector};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::video::VideoSequence;

/// Ridge added to singular normal equations.
pub const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LdsModel {
    /// Temporal mean frame (zeros when fitted without centering), length `D`.
    pub mean: DVector<f64>,
    /// Observation basis `C`, `D x n`, orthonormal columns.
    pub basis: DMatrix<f64>,
    /// Transition `A`, `n x n`.
    pub transition: DMatrix<f64>,
    /// Noise factor `B`, `n x n`, the symmetric square root of the
    /// residual covariance.
    pub noise: DMatrix<f64>,
    /// Fitted states `x_0..x_T`, `n x (T+1)`.
    pub states: DMatrix<f64>,
    /// `[H, W, C]` of one frame.
    pub frame_shape: [usize; 3],
}

impl LdsModel {
    pub fn state_dim(&self) -> usize {
        self.basis.ncols()
    }

    fn render(&self, x: &DVector<f64>, clamp: bool) -> Vec<f64> {
        let y = &self.mean + &self.basis * x;
        y.iter().map(|&v| if clamp { v.clamp(-1.0, 1.0) } else { v }).collect()
    }

    fn video(&self, frames: Vec<Vec<f64>>) -> Result<VideoSequence<f64>> {
        let [h, w, c] = self.frame_shape;
        let n = frames.len();
        VideoSequence::new(Tensor::from_vec(&[n, h, w, c], frames.concat())?)
    }

    /// Projection of the training frames onto the fitted subspace,
    /// `mean + C x_t`, unclamped.
    pub fn reconstruct(&self) -> Result<VideoSequence<f64>> {
        let frames = self.states.column_iter().map(|x| self.render(&x.into_owned(), false)).collect();
        self.video(frames)
    }
}

/// Makes the largest-magnitude entry of every column positive.
fn fix_signs(u: &mut DMatrix<f64>, vt: &mut DMatrix<f64>) {
    for j in 0..u.ncols() {
        let col = u.column(j);
        let pivot = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if pivot < 0.0 {
            u.column_mut(j).neg_mut();
            vt.row_mut(j).neg_mut();
        }
    }
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fits an `n`-dimensional LDS to `video`.
pub fn lds_fit<S: Scalar>(video: &VideoSequence<S>, n: usize, center: bool) -> Result<LdsModel> {
    let frames = video.num_frames();
    let d = video.frame_len();
    let t = frames - 1;
    if n == 0 || n > t || n > d {
        return Err(Error::Analysis(format!(
            "LDS state dimension {n} must lie in 1..={} (frames - 1 = {t}, pixels = {d})",
            t.min(d)
        )));
    }
    let mut y = DMatrix::from_fn(d, frames, |i, j| video.frame_data(j)[i].to_f64_lossy());
    let mean = if center {
        y.column_mean()
    } else {
        DVector::zeros(d)
    };
    for mut col in y.column_iter_mut() {
        col -= &mean;
    }
    let svd = y.svd(true, true);
    let mut u = svd.u.expect("left vectors requested");
    let mut vt = svd.v_t.expect("right vectors requested");
    // nalgebra does not sort singular values.
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let keep = &order[..n];
    let mut basis = DMatrix::from_fn(d, n, |i, j| u[(i, keep[j])]);
    let mut vt_n = DMatrix::from_fn(n, frames, |i, j| vt[(keep[i], j)]);
    fix_signs(&mut basis, &mut vt_n);
    u = basis;
    vt = vt_n;
    let sigma = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| svd.singular_values[keep[i]]));
    let states = &sigma * &vt;

    let x0 = states.columns(0, t).into_owned();
    let x1 = states.columns(1, t).into_owned();
    let gram = &x0 * x0.transpose();
    let rhs = &x1 * x0.transpose();
    let ridge = |g: &DMatrix<f64>| g + DMatrix::identity(n, n) * RIDGE;
    // A = X1 X0ᵀ (X0 X0ᵀ)⁻¹, i.e. Aᵀ solves the symmetric system G Aᵀ = (X1 X0ᵀ)ᵀ.
    let solve = |g: DMatrix<f64>| g.cholesky().map(|c| c.solve(&rhs.transpose()).transpose());
    let transition = match (gram.rank(1e-12 * gram.norm().max(1e-300)) == n)
        .then(|| solve(gram.clone()))
        .flatten()
    {
        Some(a) => a,
        None => {
            log::warn!("LDS normal equations are singular; adding a {RIDGE:e} ridge");
            solve(ridge(&gram)).ok_or_else(|| Error::Analysis("LDS normal equations could not be solved".into()))?
        }
    };
    let resid = &x1 - &transition * &x0;
    let cov = &resid * resid.transpose() / t as f64;
    let [h, w, c] = [video.height(), video.width(), video.channels()];
    Ok(LdsModel {
        mean,
        basis: u,
        transition,
        noise: sym_sqrt(&cov),
        states,
        frame_shape: [h, w, c],
    })
}

/// Noise-free rollout from the fitted `x_0`: `length` transitions, `length + 1`
/// frames, unclamped.
pub fn lds_rollout(model: &LdsModel, length: usize) -> Result<VideoSequence<f64>> {
    let mut x = model.states.column(0).into_owned();
    let mut frames = vec![model.render(&x, false)];
    for _ in 0..length {
        x = &model.transition * x;
        frames.push(model.render(&x, false));
    }
    model.video(frames)
}

/// `x_{t+1} = A x_t + B v_t` from the fitted `x_0`, frames clamped to `[-1, 1]`.
pub fn lds_synthesize(model: &LdsModel, length: usize, seed: u64) -> Result<VideoSequence<f64>> {
    let mut rng = Rng::new(seed);
    let n = model.state_dim();
    let mut x = model.states.column(0).into_owned();
    let mut frames = vec![model.render(&x, true)];
    for _ in 0..length {
        let v = DVector::from_fn(n, |_, _| rng.normal());
        x = &model.transition * x + &model.noise * v;
        frames.push(model.render(&x, true));
    }
    model.video(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::metrics::mse;

    fn video(shape: &[usize], data: Vec<f64>) -> VideoSequence<f64> {
        VideoSequence::new(Tensor::from_vec(shape, data).unwrap()).unwrap()
    }

    #[test]
    fn one_pixel_by_hand() {
        let v = video(&[3, 1, 1, 1], vec![1.0, 0.5, 0.25]);
        let m = lds_fit(&v, 1, false).unwrap();
        let states: Vec<f64> = m.states.iter().copied().collect();
        for (s, y) in states.iter().zip([1.0, 0.5, 0.25]) {
            assert!((s - y).abs() < 1e-12, "{states:?}");
        }
        assert!((m.transition[(0, 0)] - 0.5).abs() < 1e-12);
        assert!(m.noise[(0, 0)].abs() < 1e-12);
        assert!(lds_fit(&v, 3, false).is_err());
    }

    #[test]
    fn constant_video_centered() {
        let v = video(&[4, 2, 2, 1], [0.3, -0.2, 0.1, 0.7].repeat(4));
        let m = lds_fit(&v, 2, true).unwrap();
        assert!(m.states.iter().all(|s| s.abs() < 1e-12));
        assert!(mse(m.reconstruct().unwrap().frames(), v.frames()).unwrap() < 1e-24);
    }

    #[test]
    fn basis_orthonormal_and_seeded() {
        let mut rng = Rng::new(3);
        let data: Vec<f64> = (0..8 * 12).map(|_| 0.5 * rng.normal()).collect();
        let v = video(&[8, 3, 4, 1], data);
        let m = lds_fit(&v, 3, true).unwrap();
        let gram = m.basis.transpose() * &m.basis;
        assert!((gram - DMatrix::identity(3, 3)).norm() < 1e-10);
        assert_eq!(lds_synthesize(&m, 5, 1).unwrap(), lds_synthesize(&m, 5, 1).unwrap());
        assert_ne!(lds_synthesize(&m, 5, 1).unwrap(), lds_synthesize(&m, 5, 2).unwrap());
    }
}
