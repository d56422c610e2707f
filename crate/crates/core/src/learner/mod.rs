//! Decentralized policy learning: the shared policy network, objective-policy
//! construction from equilibrium responses, and the training loop.

pub mod checkpoint;
pub mod network;
mod objective;
mod train;

use thiserror::Error;

pub use network::{NetConfig, Optimizer, OptimizerKind, PolicyNetwork, Sample};
pub use objective::{objective_policy, profile_targets, scale_invariance_check};
pub use train::{train, train_from, EpisodeLog, Stage, TrainConfig, TrainError, TrainLog};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("loss is not finite ({0})")]
    NonFiniteLoss(f64),
}
