use crate::autodiff::Tensor;
use crate::scalar::Scalar;

/// Disentangled output of one unroll.
///
/// `states` is `T x d_s` (`s_1..s_T`), `flows` is `T x H x W x 2`
/// (`M_1..M_T`, pixels), and `residuals`, `trackables` and `frames` are
/// `(T+1) x H x W x C`. `frames[t] == trackables[t] + residuals[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionTrace<S> {
    pub states: Tensor<S>,
    pub flows: Tensor<S>,
    pub residuals: Tensor<S>,
    pub trackables: Tensor<S>,
    pub frames: Tensor<S>,
}

impl<S: Scalar> DecompositionTrace<S> {
    pub fn transitions(&self) -> usize {
        self.flows.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[3]
    }

    /// `M_t` for `t` in `1..=T`.
    pub fn flow(&self, t: usize) -> Tensor<S> {
        self.flows.index_axis0(t - 1)
    }

    pub fn residual(&self, t: usize) -> Tensor<S> {
        self.residuals.index_axis0(t)
    }

    pub fn trackable(&self, t: usize) -> Tensor<S> {
        self.trackables.index_axis0(t)
    }

    pub fn frame(&self, t: usize) -> Tensor<S> {
        self.frames.index_axis0(t)
    }

    pub fn cast<T: Scalar>(&self) -> DecompositionTrace<T> {
        DecompositionTrace {
            states: self.states.cast(),
            flows: self.flows.cast(),
            residuals: self.residuals.cast(),
            trackables: self.trackables.cast(),
            frames: self.frames.cast(),
        }
    }
}
