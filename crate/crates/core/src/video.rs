use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Frames `0..=T` on an `H x W` lattice, channel-last, values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence<S> {
    frames: Tensor<S>,
}

impl<S: Scalar> VideoSequence<S> {
    /// Wraps an `N x H x W x C` tensor.
    pub fn new(frames: Tensor<S>) -> Result<Self> {
        if frames.rank() != 4 {
            return Err(Error::shape("video", "frames x H x W x C", frames.shape()));
        }
        Ok(Self { frames })
    }

    pub fn from_frames(frames: &[Tensor<S>]) -> Result<Self> {
        let stacked = Tensor::stack(frames)?;
        Self::new(stacked)
    }

    pub fn frames(&self) -> &Tensor<S> {
        &self.frames
    }

    pub fn into_tensor(self) -> Tensor<S> {
        self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    /// Number of transitions `T` (frames minus one).
    pub fn transitions(&self) -> usize {
        self.num_frames() - 1
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

    pub fn frame_len(&self) -> usize {
        self.height() * self.width() * self.channels()
    }

    pub fn frame(&self, t: usize) -> Tensor<S> {
        self.frames.index_axis0(t)
    }

    pub fn frame_data(&self, t: usize) -> &[S] {
        let n = self.frame_len();
        &self.frames.data()[t * n..(t + 1) * n]
    }

    pub fn cast<T: Scalar>(&self) -> VideoSequence<T> {
        VideoSequence {
            frames: self.frames.cast(),
        }
    }
}
