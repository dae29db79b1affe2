//! Layers with explicit forward and backward passes.
//!
//! Each layer owns its parameters (with their gradients and optimizer slots)
//! and the cache of the most recent forward pass. Calling `backward` without
//! a preceding `forward` is a usage error.

mod batchnorm;
mod conv;
mod iea;
mod linear;
mod loss;
mod pool;
mod relu;

pub use batchnorm::{BatchNorm, BN_EPS, BN_MOMENTUM};
pub use conv::{conv_backward, conv_forward, Conv2d, ConvCache, ConvGrads, ConvParams};
pub use iea::{iea_backward, iea_forward, IeaCache, IeaGrads, IeaLayer, IeaParams};
pub use linear::Linear;
pub use loss::{softmax, softmax_cross_entropy};
pub use pool::{
    adaptive_avgpool_backward, adaptive_avgpool_forward, global_avgpool, global_avgpool_backward, maxpool_backward,
    maxpool_forward, AvgPool, MaxPool, MaxPoolCache,
};
pub use relu::{relu_backward, relu_forward, Relu};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

/// A trainable tensor with its gradient and momentum buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub velocity: Tensor,
    /// Whether weight decay applies (false for biases and BN affine terms).
    pub decay: bool,
}

impl Param {
    pub fn new(value: Tensor, decay: bool) -> Self {
        let grad = Tensor::zeros(value.shape());
        let velocity = Tensor::zeros(value.shape());
        Self {
            value,
            grad,
            velocity,
            decay,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}
