//! Deterministic CPU forward/backward engine for stride-2 3x3 convolutional
//! networks with dense heads, affine-free batch norm, and ReLU or polynomial
//! activations. All arithmetic is `f64`.

pub mod engine;
mod gemm;
pub mod loss;
pub mod snapshot;
pub mod spec;

pub use engine::{
    backward, forward, forward_trace, gradients, loss_and_gradients, recalibrate_batch_norm,
    update_running_stats, BatchStats, ForwardTrace, LossGrad, Mode,
};
pub use loss::{loss, loss_and_output_grad, predictions, Targets};
pub use snapshot::{
    GradientSet, ParamArray, PerturbMode, PerturbationRecord, SnapshotMeta, WeightSnapshot,
};
pub use spec::{Activation, Layer, LossKind, NetworkSpec, ParamRole};
