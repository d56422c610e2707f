//! Rule-based demonstrators, recorded demonstrations, and imitation fitting.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    self, features, legal_actions, legal_mask, target_list, Action, Direction, EngineError, GameState, JointAction,
    Team,
};
use crate::harness::Scenario;
use crate::learner::network::{masked_argmax, masked_softmax, NetConfig, OptimizerKind, PolicyNetwork, Sample};
use crate::learner::{LearnerError, Optimizer};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

/// A decentralized policy `p(a | unit, state)` over the flat action space.
///
/// Distributions may put mass on illegal actions; `greedy` and `sample`
/// restrict to the legal set.
pub trait PolicyHandle {
    fn distribution(&self, state: &GameState, unit: usize) -> Result<Vec<f64>, PolicyError>;

    /// Legal action of maximum probability (ties: lowest action index).
    fn greedy(&self, state: &GameState, unit: usize) -> Result<Action, PolicyError> {
        let p = self.distribution(state, unit)?;
        let mask = legal_mask(state, unit)?;
        let i = masked_argmax(&p, &mask).expect("legal set is never empty");
        Ok(Action::from_index(i, p.len() - engine::NUM_DIRECTIONS).expect("index within action space"))
    }

    /// Draw from the distribution renormalized over legal actions.
    fn sample(&self, state: &GameState, unit: usize, rng: &mut dyn RngCore) -> Result<Action, PolicyError> {
        let p = self.distribution(state, unit)?;
        let mask = legal_mask(state, unit)?;
        let mass: f64 = p.iter().zip(&mask).filter(|(_, &ok)| ok).map(|(v, _)| v).sum();
        if mass <= 0.0 {
            return self.greedy(state, unit);
        }
        let mut u = rng.gen::<f64>() * mass;
        let mut last = 0;
        for (i, (&v, &ok)) in p.iter().zip(&mask).enumerate() {
            if ok {
                last = i;
                if u < v {
                    break;
                }
                u -= v;
            }
        }
        Ok(Action::from_index(last, p.len() - engine::NUM_DIRECTIONS).expect("index within action space"))
    }

    fn name(&self) -> String {
        "policy".into()
    }
}

impl<P: PolicyHandle + ?Sized> PolicyHandle for &P {
    fn distribution(&self, state: &GameState, unit: usize) -> Result<Vec<f64>, PolicyError> {
        (**self).distribution(state, unit)
    }
    fn greedy(&self, state: &GameState, unit: usize) -> Result<Action, PolicyError> {
        (**self).greedy(state, unit)
    }
    fn sample(&self, state: &GameState, unit: usize, rng: &mut dyn RngCore) -> Result<Action, PolicyError> {
        (**self).sample(state, unit, rng)
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

impl PolicyHandle for PolicyNetwork {
    fn distribution(&self, state: &GameState, unit: usize) -> Result<Vec<f64>, PolicyError> {
        Ok(self.forward(&features(state, unit)?)?)
    }

    fn greedy(&self, state: &GameState, unit: usize) -> Result<Action, PolicyError> {
        let z = self.logits(&features(state, unit)?)?;
        let mask = legal_mask(state, unit)?;
        if mask.len() != z.len() {
            return Err(LearnerError::DimensionMismatch { expected: z.len(), got: mask.len() }.into());
        }
        let i = masked_argmax(&z, &mask).expect("legal set is never empty");
        Ok(Action::from_index(i, z.len() - engine::NUM_DIRECTIONS).expect("index within action space"))
    }

    fn name(&self) -> String {
        "network".into()
    }
}

/// Network policy sampled at a temperature over the legal actions.
pub struct Tempered<'a> {
    pub net: &'a PolicyNetwork,
    pub temperature: f64,
}

impl PolicyHandle for Tempered<'_> {
    fn distribution(&self, state: &GameState, unit: usize) -> Result<Vec<f64>, PolicyError> {
        let z = self.net.logits(&features(state, unit)?)?;
        let mask = legal_mask(state, unit)?;
        Ok(masked_softmax(&z, &mask, self.temperature))
    }

    fn greedy(&self, state: &GameState, unit: usize) -> Result<Action, PolicyError> {
        self.net.greedy(state, unit)
    }
}

/// The two rule-based demonstrators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heuristic {
    /// Attack the closest enemy in range, else move toward the closest enemy.
    AttackClosest,
    /// Attack the weakest enemy in range, else move toward the closest enemy.
    AttackWeakest,
}

impl Heuristic {
    pub fn short_name(self) -> &'static str {
        match self {
            Heuristic::AttackClosest => "c",
            Heuristic::AttackWeakest => "w",
        }
    }

    pub fn act(self, state: &GameState, unit: usize) -> Result<Action, EngineError> {
        match self {
            Heuristic::AttackClosest => attack_closest(state, unit),
            Heuristic::AttackWeakest => attack_weakest(state, unit),
        }
    }
}

impl PolicyHandle for Heuristic {
    fn distribution(&self, state: &GameState, unit: usize) -> Result<Vec<f64>, PolicyError> {
        let a = self.act(state, unit)?;
        let mut p = vec![0.0; state.action_space(state.unit(unit)?.team)];
        p[a.index()] = 1.0;
        Ok(p)
    }

    fn greedy(&self, state: &GameState, unit: usize) -> Result<Action, PolicyError> {
        Ok(self.act(state, unit)?)
    }

    fn sample(&self, state: &GameState, unit: usize, _rng: &mut dyn RngCore) -> Result<Action, PolicyError> {
        Ok(self.act(state, unit)?)
    }

    fn name(&self) -> String {
        format!("{self:?}")
    }
}

/// Attack the in-range enemy at minimal distance (ties: lower hp, then lower
/// index); otherwise step toward the closest living enemy.
pub fn attack_closest(state: &GameState, unit: usize) -> Result<Action, EngineError> {
    pick_attack(state, unit, |me, o, i| (me.pos.chebyshev(o.pos), o.hp, i))
}

/// Attack the in-range enemy with minimal hp (ties: closer, then lower index);
/// otherwise step toward the closest living enemy.
pub fn attack_weakest(state: &GameState, unit: usize) -> Result<Action, EngineError> {
    pick_attack(state, unit, |me, o, i| (o.hp, me.pos.chebyshev(o.pos), i))
}

fn pick_attack<K: Ord>(
    state: &GameState,
    unit: usize,
    key: impl Fn(&engine::UnitState, &engine::UnitState, usize) -> K,
) -> Result<Action, EngineError> {
    if state.is_terminal() {
        return Err(EngineError::AlreadyTerminal);
    }
    let me = *state.unit(unit)?;
    if !me.alive() {
        return Err(EngineError::DeadAgent(unit));
    }
    if me.cooldown == 0 {
        let targets = target_list(state, unit)?;
        let best = targets
            .iter()
            .enumerate()
            .filter_map(|(slot, t)| t.map(|t| (slot, t)))
            .filter(|&(_, t)| me.in_range(&state.units()[t]))
            .min_by_key(|&(_, t)| key(&me, &state.units()[t], t));
        if let Some((slot, _)) = best {
            return Ok(Action::Attack(slot));
        }
    }
    move_toward_closest(state, unit)
}

/// Closest living opponent by (Chebyshev distance, squared distance, index).
pub fn closest_enemy(state: &GameState, unit: usize) -> Result<Option<usize>, EngineError> {
    let me = state.unit(unit)?;
    Ok(state
        .living(me.team.opponent())
        .min_by_key(|&i| {
            let p = state.units()[i].pos;
            (me.pos.chebyshev(p), me.pos.dist2(p), i)
        }))
}

/// The legal move that most decreases squared distance to the closest enemy
/// (ties: left, right, up, down). A step into an occupied cell, including the
/// enemy's own, resolves as a hold. With velocity 1 some move always decreases
/// the distance; otherwise the first legal move in direction order is taken.
fn move_toward_closest(state: &GameState, unit: usize) -> Result<Action, EngineError> {
    let me = *state.unit(unit)?;
    let legal = legal_actions(state, unit)?;
    let target = match closest_enemy(state, unit)? {
        Some(t) => state.units()[t].pos,
        None => return Ok(legal[0]),
    };
    let here = me.pos.dist2(target);
    let mut best: Option<(i32, Direction)> = None;
    for d in Direction::ALL {
        if !legal.contains(&Action::Move(d)) {
            continue;
        }
        let there = me.pos.offset(d, me.spec.velocity).dist2(target);
        if there < here && best.map_or(true, |(b, _)| there < b) {
            best = Some((there, d));
        }
    }
    match best {
        Some((_, d)) => Ok(Action::Move(d)),
        None => Ok(legal.iter().copied().find(|a| matches!(a, Action::Move(_))).unwrap_or(legal[0])),
    }
}

/// Greedy joint action of `policy` for every living unit of `team`.
pub fn joint_greedy(policy: &dyn PolicyHandle, state: &GameState, team: Team) -> Result<JointAction, PolicyError> {
    let mut joint = JointAction::empty(team, state.team_size(team));
    for (local, unit) in state.team_range(team).enumerate() {
        if state.units()[unit].alive() {
            joint.set(local, policy.greedy(state, unit)?);
        }
    }
    Ok(joint)
}

pub fn joint_sample(
    policy: &dyn PolicyHandle,
    state: &GameState,
    team: Team,
    rng: &mut dyn RngCore,
) -> Result<JointAction, PolicyError> {
    let mut joint = JointAction::empty(team, state.team_size(team));
    for (local, unit) in state.team_range(team).enumerate() {
        if state.units()[unit].alive() {
            joint.set(local, policy.sample(state, unit, rng)?);
        }
    }
    Ok(joint)
}

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("requested zero episodes")]
    EmptyRequest,
    #[error("demonstration has no records")]
    EmptyDemonstration,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("malformed record on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One observed state with the demonstrator's action for every living allied unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub episode: usize,
    pub step: u32,
    pub state_hash: String,
    pub state: GameState,
    /// Flat action-space codes indexed by allied unit id; `None` for dead units.
    pub actions: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Demonstration {
    pub records: Vec<DemoRecord>,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Writes one JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), DemoError> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(|e| DemoError::Parse { line: 0, msg: e.to_string() })?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, DemoError> {
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DemoRecord =
                serde_json::from_str(&line).map_err(|e| DemoError::Parse { line: i + 1, msg: e.to_string() })?;
            if rec.state.content_hash() != rec.state_hash {
                return Err(DemoError::Parse { line: i + 1, msg: "state hash mismatch".into() });
            }
            records.push(rec);
        }
        Ok(Demonstration { records })
    }

    /// (features, one-hot target) rows for every recorded allied action.
    pub fn samples(&self) -> Result<Vec<Sample>, DemoError> {
        let mut out = Vec::new();
        for r in &self.records {
            let a = r.state.action_space(Team::Allied);
            for (local, code) in r.actions.iter().enumerate() {
                if let Some(code) = code {
                    let unit = r.state.global_index(Team::Allied, local);
                    let mut target = vec![0.0; a];
                    target[*code] = 1.0;
                    out.push(Sample { features: features(&r.state, unit)?, target });
                }
            }
        }
        Ok(out)
    }
}

/// Plays `episodes` seeded battles of `heuristic` (allied) against `opponent`,
/// logging every state and allied action.
pub fn record_demonstration(
    scenario: &Scenario,
    heuristic: &dyn PolicyHandle,
    opponent: &dyn PolicyHandle,
    episodes: usize,
    seed: u64,
) -> Result<Demonstration, DemoError> {
    if episodes == 0 {
        return Err(DemoError::EmptyRequest);
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for episode in 0..episodes {
        let mut state = scenario.spawn(seeds.next_u64()).map_err(|e| DemoError::Scenario(e.to_string()))?;
        while !state.is_terminal() {
            let allied = joint_greedy(heuristic, &state, Team::Allied)?;
            let enemy = joint_greedy(opponent, &state, Team::Enemy)?;
            records.push(DemoRecord {
                episode,
                step: state.step_count(),
                state_hash: state.content_hash(),
                state: state.clone(),
                actions: allied.actions.iter().map(|a| a.map(Action::index)).collect(),
            });
            state = engine::step(&state, &allied, &enemy)?;
        }
    }
    Ok(Demonstration { records })
}

/// Imitation training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImitationConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for ImitationConfig {
    fn default() -> Self {
        ImitationConfig { epochs: 60, batch_size: 32, learning_rate: 3e-3, optimizer: OptimizerKind::adam(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImitationReport {
    pub samples: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Fits the policy network to a demonstration by minimizing the summed
/// cross-entropy of the recorded actions. Reported losses are per-sample means.
pub fn fit_imitation(
    demo: &Demonstration,
    net_config: &NetConfig,
    cfg: &ImitationConfig,
) -> Result<(PolicyNetwork, ImitationReport), DemoError> {
    let first = demo.records.first().ok_or(DemoError::EmptyDemonstration)?;
    let samples = demo.samples()?;
    if samples.is_empty() {
        return Err(DemoError::EmptyDemonstration);
    }
    let input = engine::feature_len(&first.state, Team::Allied);
    let output = first.state.action_space(Team::Allied);
    let mut net = PolicyNetwork::new(input, output, net_config, cfg.seed);
    let n = samples.len() as f64;

    // Warm the normalization statistics before measuring the starting loss.
    let warm: Vec<Vec<f64>> = samples.iter().take(512).map(|s| s.features.clone()).collect();
    for _ in 0..(1.0 / net_config.norm_momentum.max(1e-3)).ceil() as usize {
        net.update_running_stats(&warm)?;
    }
    let initial_loss = net.kl_loss(&samples)? / n;

    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let batch_size = cfg.batch_size.max(1);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let (mut grad, loss) = net.policy_gradient(&batch)?;
            if !loss.is_finite() {
                return Err(LearnerError::NonFiniteLoss(loss).into());
            }
            // Mean over the minibatch keeps the step size independent of batch size.
            for t in &mut grad.tensors {
                t.iter_mut().for_each(|v| *v /= chunk.len() as f64);
            }
            opt.ascend(&mut net, &grad);
            let feats: Vec<Vec<f64>> = batch.into_iter().map(|s| s.features).collect();
            net.update_running_stats(&feats)?;
        }
    }
    let final_loss = net.kl_loss(&samples)? / n;
    if !final_loss.is_finite() {
        return Err(LearnerError::NonFiniteLoss(final_loss).into());
    }
    Ok((net, ImitationReport { samples: samples.len(), initial_loss, final_loss }))
}

/// Fraction of (state, allied unit) pairs in `demo` where `policy`'s greedy
/// action matches the recorded action.
pub fn agreement(policy: &dyn PolicyHandle, demo: &Demonstration) -> Result<f64, DemoError> {
    let mut total = 0usize;
    let mut hits = 0usize;
    for r in &demo.records {
        for (local, code) in r.actions.iter().enumerate() {
            if let Some(code) = code {
                let unit = r.state.global_index(Team::Allied, local);
                total += 1;
                hits += (policy.greedy(&r.state, unit)?.index() == *code) as usize;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}
