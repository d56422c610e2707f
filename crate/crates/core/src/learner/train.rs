use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::network::{NetConfig, Optimizer, OptimizerKind, PolicyNetwork, Sample};
use super::objective::profile_targets;
use super::LearnerError;
use crate::demonstrators::{joint_greedy, joint_sample, PolicyError, PolicyHandle, Tempered};
use crate::engine::{self, features, feature_len, normalized_reward, terminal_reward, GameState, Team};
use crate::game_theory::{best_response_dynamics, GameError, DEFAULT_ITERATIONS};
use crate::harness::Scenario;
use crate::value::{MemoQ, QMode, TrainingQ};

/// Training settings. Every field has a default so config files may be partial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Environment steps (joint decisions) to train for.
    pub total_steps: usize,
    /// Fraction of `total_steps` during which the environment follows the
    /// equilibrium joint action; afterwards it follows sampled network actions.
    pub early_stage_fraction: f64,
    pub lambda: f64,
    pub brd_iterations: usize,
    /// Stop best-response sweeps at the first fixed point.
    pub early_exit: bool,
    /// Decision steps per parameter update; 0 means one update per episode.
    pub minibatch_size: usize,
    pub seed: u64,
    /// Softmax temperature for the sampled-action stage.
    pub temperature: f64,
    pub q_mode: QMode,
    pub optimizer: OptimizerKind,
    pub network: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            total_steps: 2000,
            early_stage_fraction: 0.5,
            lambda: 1.0,
            brd_iterations: DEFAULT_ITERATIONS,
            early_exit: false,
            minibatch_size: 0,
            seed: 0,
            temperature: 1.0,
            q_mode: QMode::Combined,
            optimizer: OptimizerKind::Sgd,
            network: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.early_stage_fraction) {
            return bad("early_stage_fraction must be in [0, 1]");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if self.brd_iterations == 0 {
            return bad("brd_iterations must be at least 1");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if self.network.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        Ok(())
    }

    /// First environment step of the sampled-action stage.
    pub fn stage_flip_step(&self) -> usize {
        (self.early_stage_fraction * self.total_steps as f64).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Environment advanced by the equilibrium joint action.
    Equilibrium,
    /// Environment advanced by actions sampled from the network.
    Sampled,
}

/// One finished training episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub steps: u32,
    /// Stage in effect at the episode's first step.
    pub stage: Stage,
    pub win: bool,
    pub reward: f64,
    pub normalized_reward: f64,
    /// Mean per-sample loss over the episode's decisions.
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub episodes: Vec<EpisodeLog>,
    pub env_steps: usize,
    pub updates: usize,
    /// Configured step at which sampling starts.
    pub stage_flip_step: usize,
    /// Step at which a sampled action was first taken, if any.
    pub first_sampled_step: Option<usize>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        for e in &self.episodes {
            out.serialize(e)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    /// The loss became non-finite; `network` holds the parameters from before
    /// the failing update.
    #[error("training diverged after {} updates (loss {loss})", log.updates)]
    Diverged { loss: f64, network: Box<PolicyNetwork>, log: TrainLog },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Engine(#[from] engine::EngineError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("scenario: {0}")]
    Scenario(String),
}

/// Trains the shared policy network.
///
/// Each decision solves best-response dynamics over the rollout value selected
/// by `cfg.q_mode`, initialized from the demonstration. The per-agent response
/// vectors become target distributions, and the summed log-likelihood gradient
/// of those targets is ascended once per minibatch.
pub fn train(
    scenario: &Scenario,
    demo: &dyn PolicyHandle,
    opponent: &dyn PolicyHandle,
    cfg: &TrainConfig,
) -> Result<(PolicyNetwork, TrainLog), TrainError> {
    train_from(scenario, demo, opponent, cfg, None)
}

/// As [`train`], optionally continuing from an existing network.
pub fn train_from(
    scenario: &Scenario,
    demo: &dyn PolicyHandle,
    opponent: &dyn PolicyHandle,
    cfg: &TrainConfig,
    init: Option<PolicyNetwork>,
) -> Result<(PolicyNetwork, TrainLog), TrainError> {
    cfg.validate()?;
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    let probe = spawn(scenario, 0)?;
    let mut net = match init {
        Some(n) => n,
        None => PolicyNetwork::new(
            feature_len(&probe, Team::Allied),
            probe.action_space(Team::Allied),
            &cfg.network,
            seeds.next_u64(),
        ),
    };
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut sampler = ChaCha8Rng::seed_from_u64(seeds.next_u64());
    let flip = cfg.stage_flip_step();
    let mut log = TrainLog { stage_flip_step: flip, ..TrainLog::default() };
    let mut steps = 0usize;
    let mut episode = 0usize;

    while steps < cfg.total_steps {
        let initial = spawn(scenario, seeds.next_u64())?;
        let mut state = initial.clone();
        let start_stage = if steps < flip { Stage::Equilibrium } else { Stage::Sampled };
        let mut batch: Vec<Sample> = Vec::new();
        let mut decisions = 0usize;
        let mut loss_sum = 0.0;
        let mut loss_rows = 0usize;

        while !state.is_terminal() && steps < cfg.total_steps {
            let profile = {
                let q = MemoQ::new(TrainingQ {
                    demo,
                    learned: &net,
                    opponent,
                    lambda: cfg.lambda,
                    mode: cfg.q_mode,
                });
                best_response_dynamics(&state, &q, demo, cfg.brd_iterations, cfg.early_exit)?
            };
            let a = state.action_space(Team::Allied);
            for r in &profile.agents {
                batch.push(Sample { features: features(&state, r.unit)?, target: profile_targets(r, a) });
            }

            let allied = if steps < flip {
                profile.joint.clone()
            } else {
                log.first_sampled_step.get_or_insert(steps);
                let policy = Tempered { net: &net, temperature: cfg.temperature };
                joint_sample(&policy, &state, Team::Allied, &mut sampler)?
            };
            let enemy = joint_greedy(opponent, &state, Team::Enemy)?;
            state = engine::step(&state, &allied, &enemy)?;
            steps += 1;
            decisions += 1;

            let episode_over = state.is_terminal() || steps >= cfg.total_steps;
            let full = cfg.minibatch_size > 0 && decisions % cfg.minibatch_size == 0;
            if (full || episode_over) && !batch.is_empty() {
                let rows = batch.len();
                let loss = update(&mut net, &mut opt, &batch).map_err(|loss| TrainError::Diverged {
                    loss,
                    network: Box::new(net.clone()),
                    log: log.clone(),
                })?;
                log.updates += 1;
                loss_sum += loss;
                loss_rows += rows;
                batch.clear();
            }
        }

        if state.is_terminal() {
            let reward = terminal_reward(&state)?;
            log.episodes.push(EpisodeLog {
                episode,
                steps: state.step_count(),
                stage: start_stage,
                win: reward > 0.0,
                reward,
                normalized_reward: normalized_reward(&state, &initial)?,
                mean_loss: if loss_rows > 0 { loss_sum / loss_rows as f64 } else { 0.0 },
            });
        }
        episode += 1;
    }
    log.env_steps = steps;
    Ok((net, log))
}

/// One ascent step; returns the pre-update loss, or the offending loss value if
/// it is not finite (parameters are then left untouched).
fn update(net: &mut PolicyNetwork, opt: &mut Optimizer, batch: &[Sample]) -> Result<f64, f64> {
    let (grad, loss) = match net.policy_gradient(batch) {
        Ok(v) => v,
        Err(LearnerError::NonFiniteLoss(l)) => return Err(l),
        Err(LearnerError::DimensionMismatch { .. }) => unreachable!("features sized from the same roster"),
    };
    if !loss.is_finite() || !grad.norm().is_finite() {
        return Err(if loss.is_finite() { f64::NAN } else { loss });
    }
    let before = net.clone();
    opt.ascend(net, &grad);
    let feats: Vec<Vec<f64>> = batch.iter().map(|s| s.features.clone()).collect();
    if net.update_running_stats(&feats).is_err() || net.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
        *net = before;
        return Err(f64::NAN);
    }
    Ok(loss)
}

fn spawn(scenario: &Scenario, seed: u64) -> Result<GameState, TrainError> {
    scenario.spawn(seed).map_err(|e| TrainError::Scenario(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_step_is_floor_of_fraction() {
        let cfg = TrainConfig { total_steps: 7, early_stage_fraction: 0.5, ..TrainConfig::default() };
        assert_eq!(cfg.stage_flip_step(), 3);
        let cfg = TrainConfig { total_steps: 100, early_stage_fraction: 1.0, ..TrainConfig::default() };
        assert_eq!(cfg.stage_flip_step(), 100);
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { early_stage_fraction: 1.5, ..TrainConfig::default() },
            TrainConfig { lambda: -1.0, ..TrainConfig::default() },
            TrainConfig { brd_iterations: 0, ..TrainConfig::default() },
            TrainConfig { temperature: 0.0, ..TrainConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(TrainError::InvalidConfig(_))));
        }
    }
}
