use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{evaluate, EvalReport, HarnessError, Scenario};
use crate::demonstrators::{fit_imitation, record_demonstration, Heuristic, ImitationConfig, ImitationReport, PolicyHandle};
use crate::learner::{train, PolicyNetwork, TrainConfig, TrainLog};
use crate::value::QMode;

/// Parses a TOML training config; absent fields take their defaults.
pub fn load_train_config(path: &Path) -> Result<TrainConfig, HarnessError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    let cfg: TrainConfig = toml::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?;
    cfg.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(cfg)
}

/// How the demonstration policy reaches the learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    /// The heuristic itself is the demonstration policy.
    #[default]
    Heuristic,
    /// The heuristic's recorded play is fitted by imitation first.
    Observed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossValConfig {
    pub train: TrainConfig,
    pub modality: Modality,
    pub imitation: ImitationConfig,
    /// Episodes recorded per demonstrator for the observed modality.
    pub demo_episodes: usize,
    pub eval_battles: usize,
    pub eval_seed: u64,
}

impl Default for CrossValConfig {
    fn default() -> Self {
        CrossValConfig {
            train: TrainConfig::default(),
            modality: Modality::Heuristic,
            imitation: ImitationConfig::default(),
            demo_episodes: 100,
            eval_battles: 100,
            eval_seed: 1,
        }
    }
}

/// One training direction: learn from `demonstrator`, fight `opponent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    pub demonstrator: Heuristic,
    pub opponent: Heuristic,
    pub modality: Modality,
    pub trained: EvalReport,
    /// The demonstrator itself against the same opponent and seeds.
    pub baseline: EvalReport,
    pub imitation: Option<ImitationReport>,
    pub train_steps: usize,
    pub train_seconds: f64,
    #[serde(skip)]
    pub log: TrainLog,
    #[serde(skip)]
    pub network: Option<PolicyNetwork>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub scenario: String,
    pub directions: Vec<DirectionReport>,
}

/// Trains on demonstrator `c` against `w` and on `w` against `c`, evaluating
/// each trained policy and each bare demonstrator on the same battle seeds.
pub fn cross_validation_run(scenario: &Scenario, cfg: &CrossValConfig) -> Result<CrossValReport, HarnessError> {
    let mut directions = Vec::new();
    for (demo, opp) in [
        (Heuristic::AttackClosest, Heuristic::AttackWeakest),
        (Heuristic::AttackWeakest, Heuristic::AttackClosest),
    ] {
        directions.push(run_direction(scenario, cfg, demo, opp)?);
    }
    Ok(CrossValReport { scenario: scenario.name.clone(), directions })
}

pub(crate) fn run_direction(
    scenario: &Scenario,
    cfg: &CrossValConfig,
    demo: Heuristic,
    opp: Heuristic,
) -> Result<DirectionReport, HarnessError> {
    let start = Instant::now();
    let (fitted, imitation) = match cfg.modality {
        Modality::Heuristic => (None, None),
        Modality::Observed => {
            let data = record_demonstration(scenario, &demo, &opp, cfg.demo_episodes, cfg.train.seed ^ 0xd3)?;
            let (net, report) = fit_imitation(&data, &cfg.train.network, &cfg.imitation)?;
            (Some(net), Some(report))
        }
    };
    let demo_policy: &dyn PolicyHandle = match &fitted {
        Some(n) => n,
        None => &demo,
    };
    let (net, log) = train(scenario, demo_policy, &opp, &cfg.train)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let trained = evaluate(&net, &opp, scenario, cfg.eval_battles, cfg.eval_seed)?;
    let baseline = evaluate(&demo, &opp, scenario, cfg.eval_battles, cfg.eval_seed)?;
    Ok(DirectionReport {
        demonstrator: demo,
        opponent: opp,
        modality: cfg.modality,
        trained,
        baseline,
        imitation,
        train_steps: log.env_steps,
        train_seconds,
        log,
        network: Some(net),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub scenario: String,
    pub full: EvalReport,
    pub q_demo_only: EvalReport,
    pub q_theta_only: EvalReport,
}

impl AblationReport {
    pub fn get(&self, mode: QMode) -> &EvalReport {
        match mode {
            QMode::Combined => &self.full,
            QMode::DemoOnly => &self.q_demo_only,
            QMode::ThetaOnly => &self.q_theta_only,
        }
    }
}

/// Trains three models that differ only in the training value (combined,
/// demonstration-only, network-only) and evaluates each on the same seeds.
/// `reuse_full` may supply an already evaluated full-mode report.
pub fn run_ablation(
    scenario: &Scenario,
    cfg: &CrossValConfig,
    demo: Heuristic,
    opp: Heuristic,
    reuse_full: Option<EvalReport>,
) -> Result<AblationReport, HarnessError> {
    let mut reports = Vec::new();
    for mode in [QMode::Combined, QMode::DemoOnly, QMode::ThetaOnly] {
        if mode == QMode::Combined {
            if let Some(r) = &reuse_full {
                reports.push(r.clone());
                continue;
            }
        }
        let mut c = cfg.clone();
        c.train.q_mode = mode;
        reports.push(run_direction(scenario, &c, demo, opp)?.trained);
    }
    let q_theta_only = reports.pop().expect("three reports");
    let q_demo_only = reports.pop().expect("three reports");
    let full = reports.pop().expect("three reports");
    Ok(AblationReport { scenario: scenario.name.clone(), full, q_demo_only, q_theta_only })
}
