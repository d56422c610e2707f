//! Rollout estimates of the shared state-action value.
//!
//! The engine and every continuation policy here are deterministic, so a
//! single rollout gives the exact value; no averaging is needed.

use std::cell::RefCell;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demonstrators::{joint_greedy, joint_sample, PolicyError, PolicyHandle};
use crate::engine::{self, legal_actions, terminal_reward, EngineError, GameState, JointAction, Team};
use crate::game_theory::{best_response_dynamics, GameError};
use crate::harness::Scenario;
use crate::learner::network::PolicyNetwork;

#[derive(Debug, Error)]
pub enum ValueError {
    #[error("state is terminal")]
    TerminalState,
    #[error("discount must be positive, got {0}")]
    BadDiscount(f64),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Game(Box<GameError>),
    #[error("scenario: {0}")]
    Scenario(String),
}

impl From<GameError> for ValueError {
    fn from(e: GameError) -> Self {
        ValueError::Game(Box::new(e))
    }
}

/// A shared value `Q(s, A)` of an allied joint action.
pub trait QFunction {
    fn evaluate(&self, state: &GameState, joint: &JointAction) -> Result<f64, ValueError>;
}

impl<F> QFunction for F
where
    F: Fn(&GameState, &JointAction) -> Result<f64, ValueError>,
{
    fn evaluate(&self, state: &GameState, joint: &JointAction) -> Result<f64, ValueError> {
        self(state, joint)
    }
}

/// How the continuation policy picks actions after the first step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Continuation {
    Greedy,
    Sampled { seed: u64 },
}

/// Applies `first` (with the opponent's greedy reply), then plays `policy`
/// against `opponent` until the episode ends. Returns
/// `lambda^(T - 1 - t0) * R(s_T)` where `t0` is the starting step.
pub fn rollout_return(
    state: &GameState,
    first: &JointAction,
    policy: &dyn PolicyHandle,
    opponent: &dyn PolicyHandle,
    lambda: f64,
    continuation: Continuation,
) -> Result<f64, ValueError> {
    let terminal = rollout_terminal(state, first, policy, opponent, continuation)?;
    Ok(discounted(&terminal, state.step_count(), lambda)?)
}

/// Terminal state reached by [`rollout_return`].
pub fn rollout_terminal(
    state: &GameState,
    first: &JointAction,
    policy: &dyn PolicyHandle,
    opponent: &dyn PolicyHandle,
    continuation: Continuation,
) -> Result<GameState, ValueError> {
    if state.is_terminal() {
        return Err(ValueError::TerminalState);
    }
    let enemy = joint_greedy(opponent, state, Team::Enemy)?;
    let mut s = engine::step(state, first, &enemy)?;
    let mut rng = match continuation {
        Continuation::Sampled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Continuation::Greedy => None,
    };
    while !s.is_terminal() {
        let allied = match &mut rng {
            Some(rng) => joint_sample(policy, &s, Team::Allied, rng)?,
            None => joint_greedy(policy, &s, Team::Allied)?,
        };
        let enemy = joint_greedy(opponent, &s, Team::Enemy)?;
        s = engine::step(&s, &allied, &enemy)?;
    }
    Ok(s)
}

/// `lambda^(T - 1 - t0) * R(s_T)`.
pub fn discounted(terminal: &GameState, t0: u32, lambda: f64) -> Result<f64, ValueError> {
    if !(lambda > 0.0) {
        return Err(ValueError::BadDiscount(lambda));
    }
    let r = terminal_reward(terminal)?;
    let exponent = terminal.step_count() as i32 - 1 - t0 as i32;
    Ok(if lambda == 1.0 { r } else { lambda.powi(exponent) * r })
}

/// Greedy-continuation rollout value under a fixed policy pair.
pub struct RolloutQ<'a> {
    pub continuation: &'a dyn PolicyHandle,
    pub opponent: &'a dyn PolicyHandle,
    pub lambda: f64,
}

impl QFunction for RolloutQ<'_> {
    fn evaluate(&self, state: &GameState, joint: &JointAction) -> Result<f64, ValueError> {
        rollout_return(state, joint, self.continuation, self.opponent, self.lambda, Continuation::Greedy)
    }
}

/// Value of `joint` when the demonstration policy continues the episode.
pub fn q_demo(
    state: &GameState,
    joint: &JointAction,
    demo: &dyn PolicyHandle,
    opponent: &dyn PolicyHandle,
    lambda: f64,
) -> Result<f64, ValueError> {
    RolloutQ { continuation: demo, opponent, lambda }.evaluate(state, joint)
}

/// Value of `joint` when the learned policy's greedy actions continue the episode.
pub fn q_theta(
    state: &GameState,
    joint: &JointAction,
    learned: &dyn PolicyHandle,
    opponent: &dyn PolicyHandle,
    lambda: f64,
) -> Result<f64, ValueError> {
    RolloutQ { continuation: learned, opponent, lambda }.evaluate(state, joint)
}

/// `max(q_theta, q_demo)`.
pub fn q_combined(
    state: &GameState,
    joint: &JointAction,
    demo: &dyn PolicyHandle,
    learned: &dyn PolicyHandle,
    opponent: &dyn PolicyHandle,
    lambda: f64,
) -> Result<f64, ValueError> {
    let d = q_demo(state, joint, demo, opponent, lambda)?;
    let t = q_theta(state, joint, learned, opponent, lambda)?;
    Ok(d.max(t))
}

/// Which rollout backs the training value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QMode {
    #[default]
    Combined,
    DemoOnly,
    ThetaOnly,
}

impl QMode {
    pub fn name(self) -> &'static str {
        match self {
            QMode::Combined => "full",
            QMode::DemoOnly => "q_demo_only",
            QMode::ThetaOnly => "q_theta_only",
        }
    }
}

/// The value used during training, backed by the demonstration policy, the
/// current network, or the pointwise max of both.
pub struct TrainingQ<'a> {
    pub demo: &'a dyn PolicyHandle,
    pub learned: &'a PolicyNetwork,
    pub opponent: &'a dyn PolicyHandle,
    pub lambda: f64,
    pub mode: QMode,
}

impl QFunction for TrainingQ<'_> {
    fn evaluate(&self, state: &GameState, joint: &JointAction) -> Result<f64, ValueError> {
        match self.mode {
            QMode::Combined => q_combined(state, joint, self.demo, self.learned, self.opponent, self.lambda),
            QMode::DemoOnly => q_demo(state, joint, self.demo, self.opponent, self.lambda),
            QMode::ThetaOnly => q_theta(state, joint, self.learned, self.opponent, self.lambda),
        }
    }
}

/// Caches values of an inner deterministic `QFunction` for one state at a time.
/// Evaluating a different state clears the cache.
pub struct MemoQ<Q> {
    inner: Q,
    state: RefCell<Option<GameState>>,
    cache: RefCell<HashMap<JointAction, f64>>,
    misses: RefCell<usize>,
}

impl<Q: QFunction> MemoQ<Q> {
    pub fn new(inner: Q) -> Self {
        MemoQ { inner, state: RefCell::new(None), cache: RefCell::new(HashMap::new()), misses: RefCell::new(0) }
    }

    /// Number of evaluations forwarded to the inner function.
    pub fn misses(&self) -> usize {
        *self.misses.borrow()
    }
}

impl<Q: QFunction> QFunction for MemoQ<Q> {
    fn evaluate(&self, state: &GameState, joint: &JointAction) -> Result<f64, ValueError> {
        {
            let mut cur = self.state.borrow_mut();
            if cur.as_ref() != Some(state) {
                *cur = Some(state.clone());
                self.cache.borrow_mut().clear();
            }
        }
        if let Some(&v) = self.cache.borrow().get(joint) {
            return Ok(v);
        }
        let v = self.inner.evaluate(state, joint)?;
        *self.misses.borrow_mut() += 1;
        self.cache.borrow_mut().insert(joint.clone(), v);
        Ok(v)
    }
}

/// Value of `joint` when every later step re-solves best-response dynamics with
/// the demonstration-continuation value as payoff.
pub fn q_nash(
    state: &GameState,
    joint: &JointAction,
    demo: &dyn PolicyHandle,
    opponent: &dyn PolicyHandle,
    lambda: f64,
    iterations: usize,
) -> Result<f64, ValueError> {
    if state.is_terminal() {
        return Err(ValueError::TerminalState);
    }
    let t0 = state.step_count();
    let q = MemoQ::new(RolloutQ { continuation: demo, opponent, lambda });
    let enemy = joint_greedy(opponent, state, Team::Enemy)?;
    let mut s = engine::step(state, joint, &enemy)?;
    while !s.is_terminal() {
        let profile = best_response_dynamics(&s, &q, demo, iterations, true)?;
        let enemy = joint_greedy(opponent, &s, Team::Enemy)?;
        s = engine::step(&s, &profile.joint, &enemy)?;
    }
    discounted(&s, t0, lambda)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Sample {
    pub state_hash: String,
    pub step: u32,
    pub q_demo: f64,
    pub q_nash: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub samples: Vec<Lemma1Sample>,
    pub violations: usize,
    /// Largest `q_demo - q_nash` over violating samples, 0 when none.
    pub max_violation: f64,
}

/// Draws `samples` seeded reachable states (by playing the demonstration
/// against the opponent for a random number of steps) with a uniformly random
/// legal allied joint action each, and compares the per-step equilibrium
/// continuation value against the demonstration continuation value.
pub fn check_lemma1(
    scenario: &Scenario,
    demo: &dyn PolicyHandle,
    opponent: &dyn PolicyHandle,
    samples: usize,
    seed: u64,
    lambda: f64,
    iterations: usize,
) -> Result<Lemma1Report, ValueError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(samples);
    while out.len() < samples {
        let mut s = scenario.spawn(rng.gen()).map_err(|e| ValueError::Scenario(e.to_string()))?;
        let depth = rng.gen_range(0..scenario.max_steps.min(30));
        for _ in 0..depth {
            if s.is_terminal() {
                break;
            }
            let allied = joint_greedy(demo, &s, Team::Allied)?;
            let enemy = joint_greedy(opponent, &s, Team::Enemy)?;
            s = engine::step(&s, &allied, &enemy)?;
        }
        if s.is_terminal() {
            continue;
        }
        let joint = random_joint(&s, &mut rng)?;
        let qd = q_demo(&s, &joint, demo, opponent, lambda)?;
        let qn = q_nash(&s, &joint, demo, opponent, lambda, iterations)?;
        out.push(Lemma1Sample {
            state_hash: s.content_hash(),
            step: s.step_count(),
            q_demo: qd,
            q_nash: qn,
            violation: qn < qd,
        });
    }
    let violations = out.iter().filter(|s| s.violation).count();
    let max_violation = out.iter().map(|s| s.q_demo - s.q_nash).fold(0.0, f64::max);
    Ok(Lemma1Report { samples: out, violations, max_violation })
}

/// Uniformly random legal action for every living allied unit.
pub fn random_joint(state: &GameState, rng: &mut impl Rng) -> Result<JointAction, EngineError> {
    let mut joint = JointAction::empty(Team::Allied, state.team_size(Team::Allied));
    for (local, unit) in state.team_range(Team::Allied).enumerate() {
        if state.units()[unit].alive() {
            let legal = legal_actions(state, unit)?;
            joint.set(local, legal[rng.gen_range(0..legal.len())]);
        }
    }
    Ok(joint)
}
