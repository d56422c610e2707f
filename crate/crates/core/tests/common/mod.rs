//! Oracles shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use nashpg::demonstrators::{PolicyError, PolicyHandle};
use nashpg::engine::{legal_actions, GameState, JointAction, Pos, Team, UnitSpec, UnitState};
use nashpg::game_theory::{best_response_dynamics, brute_force_pne, PayoffTensor};
use nashpg::learner::{objective_policy, NetConfig, PolicyNetwork, Sample};
use nashpg::value::ValueError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relative error between the analytic ascent direction and central finite
/// differences of the negated loss, over every parameter of a small network.
pub fn gradient_relative_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (input, output, rows) = (6, 5, 4);
    let cfg = NetConfig { hidden: vec![8, 8, 8], zero_final_layer: false, ..NetConfig::default() };
    let mut net = PolicyNetwork::new(input, output, &cfg, rng.gen());
    let warm: Vec<Vec<f64>> = (0..16).map(|_| (0..input).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    for _ in 0..30 {
        net.update_running_stats(&warm).unwrap();
    }
    let batch: Vec<Sample> = (0..rows)
        .map(|_| {
            let raw: Vec<f64> = (0..output).map(|_| rng.gen_range(0.0..1.0)).collect();
            let total: f64 = raw.iter().sum();
            Sample {
                features: (0..input).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                target: raw.iter().map(|v| v / total).collect(),
            }
        })
        .collect();

    let (grad, _) = net.policy_gradient(&batch).unwrap();
    let analytic = grad.flatten();
    let h = 1e-6;
    let mut numeric = Vec::with_capacity(analytic.len());
    let tensors = net.tensors().len();
    for t in 0..tensors {
        for i in 0..net.tensors()[t].len() {
            let mut plus = net.clone();
            plus.tensors_mut()[t][i] += h;
            let mut minus = net.clone();
            minus.tensors_mut()[t][i] -= h;
            let d = (plus.kl_loss(&batch).unwrap() - minus.kl_loss(&batch).unwrap()) / (2.0 * h);
            numeric.push(-d);
        }
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / scale(&analytic).max(scale(&numeric)).max(1e-12)
}

/// A random payoff tensor with 1..=3 agents and 2..=4 actions each. Half the
/// tensors draw from a few integer levels so ties are common.
pub fn random_tensor(rng: &mut ChaCha8Rng) -> PayoffTensor {
    let agents = rng.gen_range(1..=3);
    let actions: Vec<usize> = (0..agents).map(|_| rng.gen_range(2..=4)).collect();
    let coarse = rng.gen_bool(0.5);
    PayoffTensor::from_fn(actions, |_| if coarse { rng.gen_range(0..4) as f64 } else { rng.gen_range(-1.0..1.0) })
}

/// Allied units placed so their legal action counts match `actions`: a corner
/// leaves 2 moves, an edge 3, the interior 4. The lone enemy is out of range.
pub fn tensor_state(actions: &[usize]) -> GameState {
    let spec = UnitSpec { max_hp: 5, damage: 1, weapon_range: 1, velocity: 1, max_cooldown: 0 };
    let (w, h) = (20, 20);
    let mut units = Vec::new();
    for (g, &n) in actions.iter().enumerate() {
        let x = 1 + 4 * g as i32;
        let pos = match n {
            2 => Pos::new(if g == 0 { 0 } else { w - 1 }, if g == 2 { h - 1 } else { 0 }),
            3 => Pos::new(x + 1, 0),
            _ => Pos::new(x + 1, 5),
        };
        units.push(UnitState::new(spec, Team::Allied, g, pos));
    }
    units.push(UnitState::new(spec, Team::Enemy, 0, Pos::new(10, h - 1)));
    GameState::new(units, w, h, 50).unwrap()
}

/// Starts best-response dynamics from fixed positions in each legal list.
pub struct FixedStart(pub Vec<usize>);

impl PolicyHandle for FixedStart {
    fn distribution(&self, state: &GameState, unit: usize) -> Result<Vec<f64>, PolicyError> {
        let legal = legal_actions(state, unit)?;
        let pick = legal[self.0[unit].min(legal.len() - 1)];
        let mut p = vec![0.0; state.action_space(Team::Allied)];
        p[pick.index()] = 1.0;
        Ok(p)
    }
}

pub struct PneCheck {
    pub converged: bool,
    /// Converged and the result is one of the enumerated equilibria.
    pub member: bool,
    pub monotone: bool,
}

/// Runs the state-level dynamics on `tensor` through a table-lookup value and
/// compares against exhaustive enumeration.
pub fn pne_check(tensor: &PayoffTensor, init: &[usize], iterations: usize) -> PneCheck {
    let state = tensor_state(tensor.actions());
    let legal: Vec<_> = (0..tensor.num_agents()).map(|g| legal_actions(&state, g).unwrap()).collect();
    for (g, l) in legal.iter().enumerate() {
        assert_eq!(l.len(), tensor.actions()[g], "placement for agent {g}");
    }
    let picks = |joint: &JointAction| -> Vec<usize> {
        legal.iter().enumerate().map(|(g, l)| l.iter().position(|&a| Some(a) == joint.get(g)).unwrap()).collect()
    };
    let q = |_: &GameState, joint: &JointAction| -> Result<f64, ValueError> { Ok(tensor.get(&picks(joint))) };
    let profile = best_response_dynamics(&state, &q, &FixedStart(init.to_vec()), iterations, false).unwrap();
    let pne = brute_force_pne(tensor);
    let values: Vec<f64> = profile.trace.iter().map(|(_, v)| *v).collect();
    PneCheck {
        converged: profile.converged,
        member: profile.converged && pne.contains(&picks(&profile.joint)),
        monotone: values.windows(2).all(|w| w[1] >= w[0]),
    }
}

/// Whether the objective policy of `values` survives `c * v + b` to 1e-9.
pub fn affine_invariant(values: &[f64], c: f64, b: f64) -> bool {
    let moved: Vec<f64> = values.iter().map(|v| c * v + b).collect();
    objective_policy(values).iter().zip(objective_policy(&moved)).all(|(x, y)| (x - y).abs() <= 1e-9)
}

/// Fits the imitation network to the first 2000 attack_closest records on
/// m2v2 and returns its argmax agreement on a separately seeded held-out set.
pub fn imitation_holdout() -> (f64, nashpg::demonstrators::ImitationReport) {
    use nashpg::demonstrators::{agreement, fit_imitation, record_demonstration, Heuristic, ImitationConfig};
    use nashpg::harness::Scenario;
    let sc = Scenario::resolve("m2v2").unwrap();
    let (c, w) = (Heuristic::AttackClosest, Heuristic::AttackWeakest);
    let mut train = record_demonstration(&sc, &c, &w, 800, 1).unwrap();
    assert!(train.len() >= 2000, "only {} records", train.len());
    train.records.truncate(2000);
    let held_out = record_demonstration(&sc, &c, &w, 120, 2).unwrap();
    let (net, report) = fit_imitation(&train, &NetConfig::default(), &ImitationConfig::default()).unwrap();
    (agreement(&net, &held_out).unwrap(), report)
}
