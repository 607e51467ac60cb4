//! A small reverse-mode differentiation engine over a fixed layer vocabulary
//! (3x3 convolution, dense, bias, SiLU / leaky ReLU / sigmoid, 2x average
//! pooling, 2x nearest upsampling, channel concat, add), and the U-shaped
//! networks built from it.
//!
//! Everything is generic over [`Real`]: learned models run in `f32`, gradient
//! checks instantiate the same graphs in `f64`.

mod optim;
mod tape;
mod tensor;
pub mod train;
mod unet;

pub use optim::{Optimizer, OptimizerKind, OptimizerState};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;
pub use train::{TrainConfig, TrainLog, TrainState};
pub use unet::{sinusoidal_embedding, UNet, UNetConfig};

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, NumAssign};

pub trait Real: Float + NumAssign + Sum + Default + Debug + Send + Sync + 'static {
    fn lit(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// `sum a[i] * b[i]` with eight independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = F::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `dst[i] += k * src[i]`.
#[inline]
pub(crate) fn axpy<F: Real>(dst: &mut [F], k: F, src: &[F]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * *s;
    }
}
