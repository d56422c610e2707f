//! Acceptance runner: one PASS/FAIL line per criterion.
//!
//! Training criteria (5, 6, 7) read `configs/<scenario>.toml` from the
//! workspace root and take most of the runtime. Set
//! `NASHPG_ACCEPTANCE_SKIP_TRAINING=1` to report them as SKIP, and
//! `NASHPG_ACCEPTANCE_STRICT=1` to exit with status 3 when any criterion fails.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use nashpg::demonstrators::Heuristic;
use nashpg::harness::{
    cross_validation_run, evaluate, load_train_config, run_ablation, CrossValConfig, CrossValReport, DirectionReport,
    Scenario,
};
use nashpg::learner::checkpoint::{load_file, save_file};
use nashpg::learner::{objective_policy, train, TrainConfig};
use nashpg::value::check_lemma1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-4;
const GRAD_SEEDS: u64 = 20;
const TENSORS: usize = 100;
const LEMMA_STATES: usize = 20;
const AFFINE_VECTORS: usize = 1000;
const WIN_MARGIN: f64 = 0.15;
const ABLATION_SLACK: f64 = 0.05;
const ABLATION_GAP: f64 = 0.10;
const IMITATION_TARGET: f64 = 0.90;
const MAX_TRAIN_STEPS: usize = 200_000;
const MAX_TRAIN_SECONDS: f64 = 3600.0;
const EVAL_BATTLES: usize = 100;
const EVAL_SEED: u64 = 1;

struct Line {
    id: u32,
    name: &'static str,
    status: &'static str,
    detail: String,
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn crossval_config(scenario: &str) -> CrossValConfig {
    let path = workspace_root().join("configs").join(format!("{scenario}.toml"));
    let train = load_train_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    CrossValConfig { train, eval_battles: EVAL_BATTLES, eval_seed: EVAL_SEED, ..CrossValConfig::default() }
}

fn gradient_oracle() -> Line {
    let worst = (0..GRAD_SEEDS).map(common::gradient_relative_error).fold(0.0, f64::max);
    Line {
        id: 1,
        name: "gradient oracle",
        status: verdict(worst < GRAD_TOL),
        detail: format!("max relative error {worst:.2e} over {GRAD_SEEDS} seeds (tol {GRAD_TOL:e})"),
    }
}

fn pne_oracle() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut converged, mut members, mut monotone) = (0, 0, 0);
    for _ in 0..TENSORS {
        let t = common::random_tensor(&mut rng);
        let init: Vec<usize> = t.actions().iter().map(|&n| rng.gen_range(0..n)).collect();
        let c = common::pne_check(&t, &init, 10);
        converged += c.converged as usize;
        members += c.member as usize;
        monotone += c.monotone as usize;
    }
    Line {
        id: 2,
        name: "PNE oracle",
        status: verdict(members == converged && monotone == TENSORS),
        detail: format!("{members}/{converged} fixed points enumerated, {monotone}/{TENSORS} traces non-decreasing"),
    }
}

fn lemma1() -> Line {
    let sc = Scenario::resolve("m2v2").unwrap();
    let r = check_lemma1(&sc, &Heuristic::AttackClosest, &Heuristic::AttackWeakest, LEMMA_STATES, 5, 1.0, 10).unwrap();
    Line {
        id: 3,
        name: "equilibrium value dominates demonstration (Q^N >= Q^D)",
        status: verdict(r.samples.len() == LEMMA_STATES && r.violations == 0),
        detail: format!("{} violations on {} states, max gap {}", r.violations, r.samples.len(), r.max_violation),
    }
}

fn objective_algebra() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let invariant = (0..AFFINE_VECTORS)
        .filter(|_| {
            let n = rng.gen_range(1..=9);
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
            common::affine_invariant(&v, rng.gen_range(0.01..100.0), rng.gen_range(-100.0..100.0))
        })
        .count();
    let uniform = (1..8).all(|n| objective_policy(&vec![-2.5; n]) == vec![1.0 / n as f64; n]);
    Line {
        id: 4,
        name: "objective policy algebra",
        status: verdict(invariant == AFFINE_VECTORS && uniform),
        detail: format!("{invariant}/{AFFINE_VECTORS} affine-invariant, degenerate uniform: {uniform}"),
    }
}

fn improvement(d: &DirectionReport) -> bool {
    d.trained.win_rate >= d.baseline.win_rate + WIN_MARGIN
        && d.trained.mean_normalized_reward >= d.baseline.mean_normalized_reward
        && d.train_steps <= MAX_TRAIN_STEPS
}

fn describe(d: &DirectionReport) -> String {
    format!(
        "{}: W {:.2} vs {:.2}, R {:.3} vs {:.3}, {} steps, {:.0}s",
        d.demonstrator.short_name(),
        d.trained.win_rate,
        d.baseline.win_rate,
        d.trained.mean_normalized_reward,
        d.baseline.mean_normalized_reward,
        d.train_steps,
        d.train_seconds
    )
}

fn improvement_line(reports: &[CrossValReport]) -> Line {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in reports {
        let seconds: f64 = r.directions.iter().map(|d| d.train_seconds).sum();
        let ok = r.directions.iter().any(improvement) && seconds <= MAX_TRAIN_SECONDS;
        pass &= ok;
        let dirs: Vec<String> = r.directions.iter().map(describe).collect();
        parts.push(format!("{} [{}] {}", r.scenario, verdict(ok), dirs.join("; ")));
    }
    Line { id: 5, name: "improvement over demonstration", status: verdict(pass), detail: parts.join(" | ") }
}

fn ablation_line(m3v3: &CrossValReport, cfg: &CrossValConfig) -> Line {
    let sc = Scenario::resolve("m3v3").unwrap();
    let full = &m3v3.directions[0];
    let ab = run_ablation(&sc, cfg, full.demonstrator, full.opponent, Some(full.trained.clone())).unwrap();
    let (w_full, w_demo, w_theta) = (ab.full.win_rate, ab.q_demo_only.win_rate, ab.q_theta_only.win_rate);
    Line {
        id: 6,
        name: "ablation ordering",
        status: verdict(w_full >= w_demo - ABLATION_SLACK && w_demo >= w_theta + ABLATION_GAP),
        detail: format!(
            "demonstrator {}: W full {w_full:.2}, q_demo_only {w_demo:.2}, q_theta_only {w_theta:.2}",
            full.demonstrator.short_name()
        ),
    }
}

fn overkill_line(m5v5: &CrossValReport) -> Line {
    let d = m5v5
        .directions
        .iter()
        .find(|d| d.demonstrator == Heuristic::AttackWeakest)
        .expect("crossval covers both demonstrators");
    let (trained, baseline) = (d.trained.invalid_attack_ratio, d.baseline.invalid_attack_ratio);
    Line {
        id: 7,
        name: "overkill reduction",
        status: verdict(trained < baseline),
        detail: format!("m5v5 invalid-attack ratio: trained from w {trained:.3}, demonstrator w {baseline:.3}"),
    }
}

fn imitation_line() -> Line {
    let (acc, report) = common::imitation_holdout();
    Line {
        id: 8,
        name: "imitation fidelity",
        status: verdict(acc >= IMITATION_TARGET),
        detail: format!(
            "held-out agreement {acc:.3} (target {IMITATION_TARGET}), loss {:.3} -> {:.3}",
            report.initial_loss, report.final_loss
        ),
    }
}

fn determinism_line() -> Line {
    let sc = Scenario::resolve("m3v3").unwrap();
    let cfg = TrainConfig { total_steps: 200, seed: 9, ..TrainConfig::default() };
    let (net, _) = train(&sc, &Heuristic::AttackClosest, &Heuristic::AttackWeakest, &cfg).unwrap();
    let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-determinism.ckpt");
    save_file(&net, &path).unwrap();
    let run = || {
        let net = load_file(&path).unwrap();
        evaluate(&net, &Heuristic::AttackWeakest, &sc, EVAL_BATTLES, EVAL_SEED).unwrap().to_json()
    };
    let (a, b) = (run(), run());
    Line {
        id: 9,
        name: "evaluation determinism",
        status: verdict(a.as_bytes() == b.as_bytes()),
        detail: format!("{} bytes per report", a.len()),
    }
}

fn skipped(id: u32, name: &'static str) -> Line {
    Line { id, name, status: "SKIP", detail: "NASHPG_ACCEPTANCE_SKIP_TRAINING is set".into() }
}

fn timed(f: impl FnOnce() -> Line) -> Line {
    let start = Instant::now();
    let mut line = f();
    line.detail.push_str(&format!(" [{:.1}s]", start.elapsed().as_secs_f64()));
    println!("{:<4} C{} {}: {}", line.status, line.id, line.name, line.detail);
    line
}

fn main() {
    let skip_training = std::env::var_os("NASHPG_ACCEPTANCE_SKIP_TRAINING").is_some();
    let mut lines = vec![timed(gradient_oracle), timed(pne_oracle), timed(lemma1), timed(objective_algebra)];

    if skip_training {
        for (id, name) in [(5, "improvement over demonstration"), (6, "ablation ordering"), (7, "overkill reduction")] {
            lines.push(timed(|| skipped(id, name)));
        }
    } else {
        let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
        let mut reports = Vec::new();
        let mut configs = Vec::new();
        for name in ["m3v3", "m5v5"] {
            let sc = Scenario::resolve(name).unwrap();
            let cfg = crossval_config(name);
            let r = cross_validation_run(&sc, &cfg).unwrap();
            std::fs::write(out.join(format!("acceptance-crossval-{name}.json")), serde_json::to_string_pretty(&r).unwrap())
                .unwrap();
            reports.push(r);
            configs.push(cfg);
        }
        lines.push(timed(|| improvement_line(&reports)));
        lines.push(timed(|| ablation_line(&reports[0], &configs[0])));
        lines.push(timed(|| overkill_line(&reports[1])));
    }
    lines.push(timed(imitation_line));
    lines.push(timed(determinism_line));

    let failed = lines.iter().filter(|l| l.status == "FAIL").count();
    println!("acceptance: {} passed, {failed} failed, {} skipped", lines.iter().filter(|l| l.status == "PASS").count(),
        lines.iter().filter(|l| l.status == "SKIP").count());
    if failed > 0 && std::env::var_os("NASHPG_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(3);
    }
}
