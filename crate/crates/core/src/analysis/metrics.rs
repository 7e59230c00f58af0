use serde::Serialize;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Peak-to-peak range of `[-1, 1]` frames.
pub const PSNR_PEAK: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameMetrics {
    pub mse: f64,
    /// Infinite for identical inputs.
    pub psnr: f64,
}

/// MSE over all pixels and PSNR with peak 2.
pub fn metrics<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<FrameMetrics> {
    let mse = mse(a, b)?;
    Ok(FrameMetrics {
        mse,
        psnr: 10.0 * (PSNR_PEAK * PSNR_PEAK / mse).log10(),
    })
}

pub fn mse<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("metrics", format!("{:?}", a.shape()), b.shape()));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.to_f64_lossy() - y.to_f64_lossy()).powi(2))
        .sum();
    Ok(sum / a.numel() as f64)
}

/// Mean endpoint error in pixels between two `... x 2` flow tensors.
pub fn flow_epe<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    if a.shape() != b.shape() || a.shape().last() != Some(&2) {
        return Err(Error::shape("flow_epe", format!("{:?} ending in 2", a.shape()), b.shape()));
    }
    let pixels = a.numel() / 2;
    let sum: f64 = a
        .data()
        .chunks_exact(2)
        .zip(b.data().chunks_exact(2))
        .map(|(p, q)| {
            let dx = p[0].to_f64_lossy() - q[0].to_f64_lossy();
            let dy = p[1].to_f64_lossy() - q[1].to_f64_lossy();
            dx.hypot(dy)
        })
        .sum();
    Ok(sum / pixels as f64)
}
