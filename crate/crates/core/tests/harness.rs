use nashpg::demonstrators::Heuristic;
use nashpg::engine::Team;
use nashpg::harness::{cross_validation_run, evaluate, run_ablation, CrossValConfig, Scenario};
use nashpg::learner::checkpoint::{load_file, save_file};
use nashpg::learner::{train, TrainConfig};

fn quick_net(sc: &Scenario) -> nashpg::learner::PolicyNetwork {
    let cfg = TrainConfig { total_steps: 80, seed: 2, ..TrainConfig::default() };
    train(sc, &Heuristic::AttackClosest, &Heuristic::AttackWeakest, &cfg).unwrap().0
}

#[test]
fn evaluation_json_is_byte_identical_across_runs() {
    let sc = Scenario::resolve("m2v2").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_file(&quick_net(&sc), &path).unwrap();
    let run = || {
        let net = load_file(&path).unwrap();
        evaluate(&net, &Heuristic::AttackWeakest, &sc, 30, 17).unwrap().to_json()
    };
    assert_eq!(run().as_bytes(), run().as_bytes());
}

#[test]
fn checkpoint_file_round_trip_preserves_behavior() {
    let sc = Scenario::resolve("m2v2").unwrap();
    let net = quick_net(&sc);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_file(&net, &path).unwrap();
    let back = load_file(&path).unwrap();
    assert_eq!(back, net);
    let s = sc.spawn(3).unwrap();
    for u in s.living(Team::Allied) {
        let f = nashpg::engine::features(&s, u).unwrap();
        assert_eq!(net.logits(&f).unwrap(), back.logits(&f).unwrap());
    }
}

#[test]
fn headline_metrics_recompute_from_records() {
    let sc = Scenario::resolve("m3v3").unwrap();
    let r = evaluate(&Heuristic::AttackClosest, &Heuristic::AttackWeakest, &sc, 50, 4).unwrap();
    let wins = r.records.iter().filter(|b| b.win).count() as f64 / 50.0;
    let mean = r.records.iter().map(|b| b.normalized_reward).sum::<f64>() / 50.0;
    assert_eq!(r.win_rate, wins);
    assert!((r.mean_normalized_reward - mean).abs() < 1e-12);
}

#[test]
fn self_play_is_balanced() {
    for name in ["m2v2", "m3v3", "m5v5"] {
        let sc = Scenario::resolve(name).unwrap();
        for h in [Heuristic::AttackClosest, Heuristic::AttackWeakest] {
            let r = evaluate(&h, &h, &sc, 2000, 8).unwrap();
            let losses = r.records.iter().filter(|b| b.reward < 0.0).count() as f64 / 2000.0;
            assert!((r.win_rate - losses).abs() <= 0.06, "{name} {h:?}: W {} vs L {losses}", r.win_rate);
            assert!(r.mean_normalized_reward.abs() <= 0.15, "{name} {h:?}: R {}", r.mean_normalized_reward);
        }
    }
}

#[test]
fn cross_validation_and_ablation_smoke() {
    let sc = Scenario::resolve("m2v2").unwrap();
    let cfg = CrossValConfig {
        train: TrainConfig { total_steps: 30, ..TrainConfig::default() },
        eval_battles: 4,
        ..CrossValConfig::default()
    };
    let cv = cross_validation_run(&sc, &cfg).unwrap();
    assert_eq!(cv.directions.len(), 2);
    for d in &cv.directions {
        assert_eq!(d.train_steps, 30);
        assert_eq!(d.baseline, evaluate(&d.demonstrator, &d.opponent, &sc, 4, cfg.eval_seed).unwrap());
    }
    let full = cv.directions[0].trained.clone();
    let ab = run_ablation(&sc, &cfg, Heuristic::AttackClosest, Heuristic::AttackWeakest, Some(full.clone())).unwrap();
    assert_eq!(ab.full, full);
    assert_eq!(ab.q_demo_only.battles, 4);
}
