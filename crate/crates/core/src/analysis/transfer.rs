use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{warp, DecompositionTrace};
use crate::scalar::Scalar;
use crate::video::VideoSequence;

/// Animates `appearance` (`H x W x C`) with `flows` (`T x H x W x 2`):
/// `I_0 = appearance`, `I_t = warp(I_{t-1}, M_t)`. Residuals are not used.
pub fn transfer_motion<S: Scalar>(flows: &Tensor<S>, appearance: &Tensor<S>) -> Result<VideoSequence<S>> {
    let fs = flows.shape();
    let a = appearance.shape();
    if fs.len() != 4 || fs[3] != 2 || a.len() != 3 || a[0] != fs[1] || a[1] != fs[2] {
        return Err(Error::shape(
            "transfer_motion",
            format!("appearance H x W x C matching flows {fs:?}"),
            a,
        ));
    }
    let mut frames = vec![appearance.clone()];
    for t in 0..fs[0] {
        let next = warp(frames.last().unwrap(), &flows.index_axis0(t))?;
        frames.push(next);
    }
    VideoSequence::from_frames(&frames)
}

/// Swaps the motion of two decompositions: A's appearance with B's flows,
/// and B's appearance with A's flows.
pub fn exchange_motion<S: Scalar>(
    trace_a: &DecompositionTrace<S>,
    trace_b: &DecompositionTrace<S>,
    appearance_a: &Tensor<S>,
    appearance_b: &Tensor<S>,
) -> Result<(VideoSequence<S>, VideoSequence<S>)> {
    if trace_a.flows.shape() != trace_b.flows.shape() {
        return Err(Error::shape(
            "exchange_motion",
            format!("flows {:?}", trace_a.flows.shape()),
            trace_b.flows.shape(),
        ));
    }
    Ok((
        transfer_motion(&trace_b.flows, appearance_a)?,
        transfer_motion(&trace_a.flows, appearance_b)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut t = Tensor::zeros(shape);
        Rng::new(seed).fill_normal(t.data_mut(), 1.0);
        t
    }

    fn trace(flows: Tensor<f64>, first: &Tensor<f64>) -> DecompositionTrace<f64> {
        let v = transfer_motion(&flows, first).unwrap().into_tensor();
        DecompositionTrace {
            states: Tensor::zeros(&[flows.shape()[0], 1]),
            flows,
            residuals: Tensor::zeros(v.shape()),
            trackables: v.clone(),
            frames: v,
        }
    }

    #[test]
    fn zero_flow_repeats_appearance() {
        let app = random(&[4, 5, 3], 1);
        let v = transfer_motion(&Tensor::zeros(&[3, 4, 5, 2]), &app).unwrap();
        for t in 0..4 {
            assert_eq!(v.frame(t), app);
        }
        assert!(transfer_motion(&Tensor::zeros(&[3, 4, 4, 2]), &app).is_err());
    }

    #[test]
    fn output_stays_in_value_range() {
        let app = random(&[6, 6, 3], 2);
        let flows = random(&[4, 6, 6, 2], 3).map(|v| 2.0 * v);
        let v = transfer_motion(&flows, &app).unwrap();
        let lo = app.data().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = app.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(v.frames().data().iter().all(|&x| x >= lo - 1e-12 && x <= hi + 1e-12));
    }

    #[test]
    fn exchange_examples() {
        let (app_a, app_b) = (random(&[5, 5, 1], 4), random(&[5, 5, 1], 5));
        let moving = Tensor::from_vec(&[2, 5, 5, 2], [1.0, 0.0].repeat(50)).unwrap();
        let a = trace(Tensor::zeros(&[2, 5, 5, 2]), &app_a);
        let b = trace(moving, &app_b);

        let (self_a, _) = exchange_motion(&a, &a, &app_a, &app_a).unwrap();
        assert_eq!(self_a.frames(), &a.trackables);

        let (a_moves, b_frozen) = exchange_motion(&a, &b, &app_a, &app_b).unwrap();
        assert_eq!(a_moves.frame(1).get(&[2, 1, 0]), app_a.get(&[2, 2, 0]));
        for t in 0..3 {
            assert_eq!(b_frozen.frame(t), app_b);
        }

        let ta = trace(b.flows.clone(), &app_a);
        let tb = trace(a.flows.clone(), &app_b);
        let (back_a, back_b) = exchange_motion(&ta, &tb, &app_a, &app_b).unwrap();
        assert_eq!(back_a.frames(), &a.trackables);
        assert_eq!(back_b.frames(), &b.trackables);
    }
}
