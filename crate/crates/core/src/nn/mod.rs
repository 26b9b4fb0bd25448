//! Minimal neural engine for the two-layer ego-graph classifier.

pub mod batch;
pub mod checkpoint;
pub mod model;
pub mod optim;
pub mod tape;
pub mod train;

pub use batch::{ego_block, Csr, GraphBatch};
pub use model::{gradient_check, nll_loss, Arch, Forward, Model, ModelConfig, ParamSet, NUM_CLASSES};
pub use optim::{Adam, TrainConfig};
pub use train::{Learner, Regularizer};
