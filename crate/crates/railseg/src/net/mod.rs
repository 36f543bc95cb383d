//! Hierarchical point-cloud segmentation network, built from first
//! principles: geometric kernels, shared MLPs with hand-written gradients,
//! Adam training, patch-averaged prediction, and a portable checkpoint
//! format.

pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
mod model;
mod optim;
pub mod tensor;
mod train;

pub use checkpoint::Checkpoint;
pub use model::{loss_ce, Mlp, NetConfig, SaConfig, SegNetwork, Trace};
pub use optim::{Adam, AdamState};
pub use tensor::Tensor;
pub use train::{predict, train, TrainOptions, TrainReport};
