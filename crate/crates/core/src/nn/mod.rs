//! Hand-written forward/backward operators for the ConvNet layer set.
//!
//! Backprop is written per layer; there is no general autograd. Each layer's
//! `forward_train` returns whatever its `backward` needs.

mod batchnorm;
mod conv;
mod init;
mod layers;
mod loss;
mod optim;

pub use batchnorm::{BatchNorm2d, BnCache, BnOutput, DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM};
pub use conv::{conv_output_size, Conv2d, ConvCache, ConvGrads};
pub use init::{kaiming_normal, normal_tensor};
pub use layers::{avgpool2d, avgpool2d_backward, relu, relu_backward, Linear, LinearGrads};
pub use loss::cross_entropy_loss;
pub use optim::Sgd;

/// Whether batch normalization uses batch statistics (and updates its
/// running averages) or the stored running averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
