use nashpg::demonstrators::{Heuristic, PolicyHandle};
use nashpg::engine::{feature_len, Action, Team};
use nashpg::harness::Scenario;
use nashpg::learner::{train, train_from, NetConfig, OptimizerKind, PolicyNetwork, Stage, TrainConfig, TrainError};

const DUEL: &str = r#"
name = "duel"
width = 6
height = 5
max_steps = 20
[allied]
count = 1
base = [2, 2]
radius = 0
[enemy]
count = 1
base = [3, 2]
radius = 1
"#;

fn m2v2() -> Scenario {
    Scenario::resolve("m2v2").unwrap()
}

#[test]
fn zero_budget_returns_the_initial_network() {
    let sc = m2v2();
    let s = sc.spawn(0).unwrap();
    let init = PolicyNetwork::new(feature_len(&s, Team::Allied), s.action_space(Team::Allied), &NetConfig::default(), 4);
    let cfg = TrainConfig { total_steps: 0, ..TrainConfig::default() };
    let (net, log) =
        train_from(&sc, &Heuristic::AttackClosest, &Heuristic::AttackWeakest, &cfg, Some(init.clone())).unwrap();
    assert_eq!(net, init);
    assert_eq!((log.env_steps, log.updates), (0, 0));
    assert!(log.episodes.is_empty());

    let (fresh, _) = train(&sc, &Heuristic::AttackClosest, &Heuristic::AttackWeakest, &cfg).unwrap();
    let p = fresh.distribution(&s, 0).unwrap();
    assert!(p.iter().all(|&v| (v - p[0]).abs() < 1e-12), "untrained policy is uniform");
}

#[test]
fn stage_flips_at_the_floor_of_the_fraction() {
    let sc = m2v2();
    let cfg = TrainConfig { total_steps: 7, early_stage_fraction: 0.5, ..TrainConfig::default() };
    let (_, log) = train(&sc, &Heuristic::AttackClosest, &Heuristic::AttackWeakest, &cfg).unwrap();
    assert_eq!(log.stage_flip_step, 3);
    assert_eq!(log.first_sampled_step, Some(3));
    assert_eq!(log.env_steps, 7);

    let cfg = TrainConfig { total_steps: 40, early_stage_fraction: 1.0, ..TrainConfig::default() };
    let (_, log) = train(&sc, &Heuristic::AttackClosest, &Heuristic::AttackWeakest, &cfg).unwrap();
    assert_eq!(log.first_sampled_step, None);
    assert!(log.episodes.iter().all(|e| e.stage == Stage::Equilibrium));
}

#[test]
fn training_is_reproducible() {
    let sc = m2v2();
    let cfg = TrainConfig { total_steps: 60, seed: 3, ..TrainConfig::default() };
    let a = train(&sc, &Heuristic::AttackClosest, &Heuristic::AttackWeakest, &cfg).unwrap();
    let b = train(&sc, &Heuristic::AttackClosest, &Heuristic::AttackWeakest, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn duel_learns_to_attack_within_500_steps() {
    let sc = Scenario::from_toml(DUEL).unwrap();
    let cfg = TrainConfig {
        total_steps: 500,
        learning_rate: 1e-3,
        optimizer: OptimizerKind::adam(),
        ..TrainConfig::default()
    };
    let (net, log) = train(&sc, &Heuristic::AttackClosest, &Heuristic::AttackWeakest, &cfg).unwrap();
    assert_eq!(log.env_steps, 500);
    let mut attacks = 0;
    for seed in 0..50 {
        let s = sc.spawn(1000 + seed).unwrap();
        attacks += matches!(net.greedy(&s, 0).unwrap(), Action::Attack(_)) as usize;
    }
    assert_eq!(attacks, 50);
}

#[test]
fn invalid_config_is_rejected_before_training() {
    let cfg = TrainConfig { learning_rate: f64::NAN, ..TrainConfig::default() };
    let r = train(&m2v2(), &Heuristic::AttackClosest, &Heuristic::AttackWeakest, &cfg);
    assert!(matches!(r, Err(TrainError::InvalidConfig(_))));
}

#[test]
fn huge_step_size_reports_divergence_with_last_good_network() {
    let cfg = TrainConfig { total_steps: 400, learning_rate: 1e200, ..TrainConfig::default() };
    match train(&m2v2(), &Heuristic::AttackClosest, &Heuristic::AttackWeakest, &cfg) {
        Err(TrainError::Diverged { network, .. }) => {
            assert!(network.tensors().iter().all(|t| t.iter().all(|v| v.is_finite())));
        }
        other => panic!("expected divergence, got {:?}", other.map(|(_, l)| l.updates)),
    }
}
