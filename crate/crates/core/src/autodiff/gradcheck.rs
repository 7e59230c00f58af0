//! Central finite-difference verification of reverse-mode gradients.

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Floor of the relative-error denominator.
pub const REL_ERR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Coordinate where the maximum was attained.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

impl GradCheckReport {
    fn empty() -> Self {
        Self {
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            coordinates: 0,
        }
    }

    /// Combines two reports, keeping the worse coordinate.
    pub fn merge(self, other: Self) -> Self {
        let coordinates = self.coordinates + other.coordinates;
        let mut worst = if other.max_rel_err > self.max_rel_err { other } else { self };
        worst.coordinates = coordinates;
        worst
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares `analytic` against central differences of `eval` around `point`.
///
/// `eval` receives a perturbed copy of the point. Coordinates are visited
/// in order, so the report is deterministic.
pub fn compare_gradient<S: Scalar>(
    eval: impl FnMut(&[S]) -> Result<S>,
    point: &[S],
    analytic: &[S],
    eps: f64,
) -> Result<GradCheckReport> {
    compare_gradient_steps(eval, point, analytic, &[eps])
}

/// Like [`compare_gradient`], trying each step in `steps` per coordinate
/// and keeping the closest estimate.
///
/// A piecewise-smooth function (ReLU, clamped sampling) can put a kink
/// inside one step's stencil; a correct gradient still matches at a
/// smaller step, while a wrong one fails at every step.
pub fn compare_gradient_steps<S: Scalar>(
    mut eval: impl FnMut(&[S]) -> Result<S>,
    point: &[S],
    analytic: &[S],
    steps: &[f64],
) -> Result<GradCheckReport> {
    if steps.is_empty() || steps.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::invalid("finite_diff_check", format!("eps must be > 0, got {steps:?}")));
    }
    if point.len() != analytic.len() {
        return Err(Error::shape("finite_diff_check", format!("{} gradient entries", point.len()), &[analytic.len()]));
    }
    let mut x = point.to_vec();
    let mut report = GradCheckReport::empty();
    report.coordinates = point.len();
    for i in 0..x.len() {
        let orig = x[i];
        let a = analytic[i].to_f64_lossy();
        let mut best: Option<(f64, f64)> = None;
        for &eps in steps {
            let step = S::from_f64_lossy(eps);
            x[i] = orig + step;
            let plus = eval(&x)?;
            x[i] = orig - step;
            let minus = eval(&x)?;
            x[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("function value at perturbed coordinate {i}"),
                });
            }
            let numeric = (plus.to_f64_lossy() - minus.to_f64_lossy()) / (2.0 * eps);
            let err = relative_error(a, numeric);
            if best.map_or(true, |(e, _)| err < e) {
                best = Some((err, numeric));
            }
        }
        let (err, numeric) = best.expect("at least one step");
        if err > report.max_rel_err || i == 0 {
            report.max_rel_err = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

/// Checks `backward` for a scalar function built on a fresh graph.
///
/// `build` receives the graph and the leaf holding the point, and returns
/// the scalar root.
pub fn finite_diff_check<S: Scalar>(
    build: impl Fn(&mut Graph<S>, NodeId) -> Result<NodeId>,
    point: &Tensor<S>,
    eps: f64,
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let leaf = g.leaf(point.clone());
    let root = build(&mut g, leaf)?;
    let grads = g.backward(root)?;
    let analytic = grads.get(leaf).expect("leaf gradient present").data().to_vec();
    let shape = point.shape().to_vec();
    compare_gradient(
        |x| {
            let mut g = Graph::new();
            let leaf = g.leaf(Tensor::from_vec(&shape, x.to_vec())?);
            let root = build(&mut g, leaf)?;
            Ok(g.value(root).item())
        },
        point.data(),
        &analytic,
        eps,
    )
}
