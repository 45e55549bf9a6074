//! Minimal neural-network engine: convolution, activations, losses,
//! Adam and a plateau scheduler, all with hand-written backward passes.

pub mod conv;
mod gemm;
pub mod loss;
pub mod ops;
pub mod optim;
pub mod sched;
pub mod weights;

pub use conv::{Conv2d, ConvGrads, ConvLayer};
pub use loss::{l1_loss, masked_l1_loss, mse_loss, LossKind};
pub use ops::{
    concat_channels, relu, relu_backward, split_channels, upsample_nearest,
    upsample_nearest_backward, Relu,
};
pub use optim::{AdamConfig, AdamState, ParamBlock};
pub use sched::{PlateauConfig, PlateauScheduler};
