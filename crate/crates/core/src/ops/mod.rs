//! Forward and backward passes for the fixed set of layers the network
//! uses, the SGD update and a central-difference gradient checker.
//!
//! Convolution is cross-correlation: the kernel is applied as stored, with
//! no flip. Kernels are therefore written in the orientation they are
//! applied in.

mod activation;
mod batchnorm;
mod conv;
pub mod gradcheck;
mod linear;
mod loss;
mod pool;
mod sgd;

pub use activation::{relu, relu_backward};
pub use batchnorm::{
    batch_norm, batch_norm_backward, batch_norm_infer, batch_norm_train, BnCache, BnGrads,
    BnState, Mode,
};
pub use conv::{
    conv2d_backward, conv2d_backward_params, conv2d_forward, output_dim, ConvGrads, ConvSpec,
};
pub use linear::{linear, linear_backward, LinearGrads};
pub use loss::{argmax_rows, softmax as softmax_probs, softmax_cross_entropy, LossOutput};
pub use pool::{avg_pool2d, avg_pool2d_backward, PoolSpec};
pub use sgd::{sgd_update, SgdState};
