//! Per-channel batch normalization over every axis except the last.

use crate::autodiff::Tensor;
use crate::scalar::Scalar;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchNormMode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormOptions {
    pub epsilon: f64,
    pub momentum: f64,
}

impl Default for BatchNormOptions {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
        }
    }
}

/// Biased per-channel statistics of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

/// Running estimates consumed in inference mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<S> {
    pub mean: Tensor<S>,
    pub var: Tensor<S>,
}

impl<S: Scalar> RunningStats<S> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::ones(&[channels]),
        }
    }

    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn update(&mut self, batch: &BatchStats<S>, momentum: f64) {
        blend(self.mean.data_mut(), &batch.mean, momentum);
        blend(self.var.data_mut(), &batch.var, momentum);
    }
}

pub(crate) fn blend<S: Scalar>(running: &mut [S], batch: &[S], momentum: f64) {
    let m = S::from_f64_lossy(momentum);
    let rest = S::one() - m;
    for (r, &b) in running.iter_mut().zip(batch) {
        *r = m * *r + rest * b;
    }
}

pub(crate) struct Normalized<S> {
    pub out: Vec<S>,
    pub xhat: Vec<S>,
    pub inv_std: Vec<S>,
}

pub(crate) fn batch_statistics<S: Scalar>(x: &[S], channels: usize) -> BatchStats<S> {
    let rows = x.len() / channels;
    let inv_rows = S::one() / S::from_usize(rows).unwrap();
    let mut mean = vec![S::zero(); channels];
    for row in x.chunks_exact(channels) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m = *m + v;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m * inv_rows);
    let mut var = vec![S::zero(); channels];
    for row in x.chunks_exact(channels) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *s = *s + d * d;
        }
    }
    var.iter_mut().for_each(|s| *s = *s * inv_rows);
    BatchStats { mean, var }
}

pub(crate) fn normalize<S: Scalar>(
    x: &[S],
    gamma: &[S],
    beta: &[S],
    mean: &[S],
    var: &[S],
    epsilon: f64,
) -> Normalized<S> {
    let eps = S::from_f64_lossy(epsilon);
    let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
    let c = gamma.len();
    let mut xhat = vec![S::zero(); x.len()];
    let mut out = vec![S::zero(); x.len()];
    for ((row, xh_row), o_row) in x.chunks_exact(c).zip(xhat.chunks_exact_mut(c)).zip(out.chunks_exact_mut(c)) {
        for ch in 0..c {
            let xh = (row[ch] - mean[ch]) * inv_std[ch];
            xh_row[ch] = xh;
            o_row[ch] = gamma[ch] * xh + beta[ch];
        }
    }
    Normalized { out, xhat, inv_std }
}

/// `(d_gamma, d_beta)` shared by both modes.
pub(crate) fn affine_grads<S: Scalar>(grad_out: &[S], xhat: &[S], c: usize) -> (Vec<S>, Vec<S>) {
    let mut dg = vec![S::zero(); c];
    let mut db = vec![S::zero(); c];
    for (g_row, x_row) in grad_out.chunks_exact(c).zip(xhat.chunks_exact(c)) {
        for ch in 0..c {
            dg[ch] = dg[ch] + g_row[ch] * x_row[ch];
            db[ch] = db[ch] + g_row[ch];
        }
    }
    (dg, db)
}

/// Input gradient in training mode, flowing through the batch statistics.
pub(crate) fn train_input_grad<S: Scalar>(
    grad_out: &[S],
    xhat: &[S],
    inv_std: &[S],
    gamma: &[S],
) -> Vec<S> {
    let c = gamma.len();
    let rows = S::from_usize(grad_out.len() / c).unwrap();
    let (sum_gx, sum_g) = affine_grads(grad_out, xhat, c);
    // dx = a * g + b * xhat + d per channel.
    let a: Vec<S> = gamma.iter().zip(inv_std).map(|(&g, &s)| g * s).collect();
    let b: Vec<S> = a.iter().zip(&sum_gx).map(|(&a, &s)| -a * s / rows).collect();
    let d: Vec<S> = a.iter().zip(&sum_g).map(|(&a, &s)| -a * s / rows).collect();
    let mut dx = vec![S::zero(); grad_out.len()];
    for ((g_row, x_row), dx_row) in grad_out.chunks_exact(c).zip(xhat.chunks_exact(c)).zip(dx.chunks_exact_mut(c)) {
        for ch in 0..c {
            dx_row[ch] = a[ch] * g_row[ch] + b[ch] * x_row[ch] + d[ch];
        }
    }
    dx
}
