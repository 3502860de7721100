//! Neural-network layer primitives: convolution, pooling, batch norm,
//! linear, dropout, LSTM, and additive attention.
//!
//! Layers own their parameter tensors (tracked leaves) and expose
//! `forward(&self, x, ctx)`. The [`ForwardCtx`] carries the train/eval phase
//! and, in training, the RNG that dropout masks are drawn from. Only batch
//! norm running statistics and dropout draws are stateful; everything else
//! is pure in the parameters.

use crate::rng::RngState;

mod attention;
mod conv;
mod dropout;
mod linear;
mod lstm;
mod norm;
mod pool;

pub use attention::AttentionPool;
pub use conv::Conv2d;
pub use dropout::Dropout;
pub use linear::Linear;
pub use lstm::Lstm;
pub use norm::BatchNorm2d;
pub use pool::{Pool2d, PoolKind};

/// Execution phase of a forward pass.
pub enum ForwardCtx<'a> {
    /// Training: batch norm uses batch statistics, dropout samples masks.
    Train(&'a mut RngState),
    /// Evaluation: running statistics, dropout is the identity.
    Eval,
}

impl ForwardCtx<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, ForwardCtx::Train(_))
    }
}

/// Spatial output extent of a convolution/pooling window:
/// `floor((in + 2*pad - dilation*(k-1) - 1) / stride) + 1`,
/// or `None` when the window does not fit.
pub fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize, dilation: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    let effective = dilation * (k - 1) + 1;
    if k == 0 || stride == 0 || padded < effective {
        return None;
    }
    Some((padded - effective) / stride + 1)
}
