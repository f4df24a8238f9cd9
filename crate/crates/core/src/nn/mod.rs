//! Minimal network engine: NHWC tensors, layers with hand-written backward
//! passes, the four segmentation variants, losses, Adam, training and
//! weight files.

pub mod blocks;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use layers::{Layer, TrainCtx};
pub use model::{LossKind, NetConfig, Network, Variant, Weights};
pub use tensor::{Param, Tensor};
pub use train::{evaluate, train, EvalMetrics, TrainConfig, TrainReport};
