//! Scenarios, evaluation, and the experiment drivers built on them.

mod eval;
mod experiments;
mod scenario;

use thiserror::Error;

pub use eval::{evaluate, invalid_attack_ratio, AttackTally, BattleRecord, EvalReport};
pub use experiments::{
    cross_validation_run, load_train_config, run_ablation, AblationReport, CrossValConfig, CrossValReport,
    DirectionReport, Modality,
};
pub use scenario::{Roster, Scenario};

use crate::demonstrators::{DemoError, PolicyError};
use crate::engine::EngineError;
use crate::learner::TrainError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("config: {0}")]
    Config(String),
    #[error("battle count must be at least 1")]
    NoBattles,
    #[error("report has no per-battle attack logs")]
    MissingLogs,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Demo(#[from] DemoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
