use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nashpg::demonstrators::{
    agreement, fit_imitation, record_demonstration, Demonstration, Heuristic, ImitationConfig, PolicyHandle,
};
use nashpg::game_theory::{brute_force_pne, tensor_dynamics, PayoffTensor, DEFAULT_ITERATIONS};
use nashpg::harness::{
    cross_validation_run, evaluate, load_train_config, run_ablation, CrossValConfig, HarnessError, Modality,
    Scenario,
};
use nashpg::learner::{checkpoint, train, PolicyNetwork, TrainConfig, TrainError};
use nashpg::value::check_lemma1;

/// Exit status for a failed check (lemma or oracle disagreement).
const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "nashpg", version, about = "Equilibrium-guided multi-agent policy learning on grid skirmishes")]
struct Cli {
    /// Built-in scenario name (m2v2, m3v3, m5v5, m4v5) or a scenario TOML file.
    #[arg(long, global = true, default_value = "m3v3")]
    scenario: String,
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Training config TOML (fields of the training config; missing fields use defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Demo {
    /// attack-closest
    C,
    /// attack-weakest
    W,
}

impl Demo {
    fn heuristic(self) -> Heuristic {
        match self {
            Demo::C => Heuristic::AttackClosest,
            Demo::W => Heuristic::AttackWeakest,
        }
    }

    fn other(self) -> Demo {
        match self {
            Demo::C => Demo::W,
            Demo::W => Demo::C,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModalityArg {
    /// The heuristic is queried directly.
    H,
    /// The heuristic's recorded play is fitted by imitation first.
    O,
}

#[derive(Subcommand)]
enum Command {
    /// Record a heuristic's play as line-delimited JSON.
    DemoRecord {
        #[arg(long, value_enum, default_value = "c")]
        heuristic: Demo,
        /// Opponent heuristic (defaults to the other one).
        #[arg(long, value_enum)]
        opponent: Option<Demo>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
    },
    /// Fit a policy network to recorded play.
    Imitate {
        /// Demonstration file written by `demo-record`.
        #[arg(long)]
        demo: PathBuf,
        #[arg(long, default_value_t = ImitationConfig::default().epochs)]
        epochs: usize,
        /// Held-out demonstration to report argmax agreement on.
        #[arg(long)]
        holdout: Option<PathBuf>,
    },
    /// Train a policy and write its checkpoint and episode log.
    Train {
        #[arg(long, value_enum, default_value = "c")]
        demo: Demo,
        /// Use a fitted imitation checkpoint as the demonstration policy.
        #[arg(long)]
        demo_checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        opponent: Option<Demo>,
    },
    /// Evaluate a checkpoint or a heuristic against a heuristic.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Allied heuristic when no checkpoint is given.
        #[arg(long, value_enum, default_value = "c")]
        allied: Demo,
        #[arg(long, value_enum, default_value = "w")]
        enemy: Demo,
        /// Defaults to the scenario's battle count.
        #[arg(long)]
        battles: Option<usize>,
    },
    /// Train and evaluate the combined, demonstration-only and network-only value variants.
    Ablate {
        #[arg(long, value_enum, default_value = "c")]
        demo: Demo,
        #[arg(long)]
        battles: Option<usize>,
    },
    /// Train from each heuristic against the other and compare with the bare heuristics.
    Crossval {
        #[arg(long, value_enum, default_value = "h")]
        modality: ModalityArg,
        #[arg(long)]
        battles: Option<usize>,
    },
    /// Compare per-step equilibrium continuation values with demonstration continuation values.
    Lemma1 {
        #[arg(long, value_enum, default_value = "c")]
        demo: Demo,
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
    /// Check best-response dynamics against brute-force equilibrium enumeration.
    OraclePne {
        /// Payoff tensor text file; random tensors are generated when absent.
        #[arg(long)]
        tensor: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        random: usize,
        #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
        iterations: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(TrainError::Diverged { .. }) = cause.downcast_ref::<TrainError>() {
            return 2;
        }
        if let Some(HarnessError::Train(TrainError::Diverged { .. })) = cause.downcast_ref::<HarnessError>() {
            return 2;
        }
    }
    1
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let scenario = Scenario::resolve(&cli.scenario).with_context(|| format!("loading scenario {}", cli.scenario))?;
    let mut cfg = match &cli.config {
        Some(p) => load_train_config(p)?,
        None => TrainConfig::default(),
    };
    let seed = cli.seed.unwrap_or(scenario.seed);
    if cli.seed.is_some() {
        cfg.seed = seed;
    }
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let out = |name: &str| cli.out.join(name);

    match &cli.command {
        Command::DemoRecord { heuristic, opponent, episodes } => {
            let opp = opponent.unwrap_or(heuristic.other()).heuristic();
            let demo = record_demonstration(&scenario, &heuristic.heuristic(), &opp, *episodes, seed)?;
            let path = out("demo.jsonl");
            demo.write_jsonl(BufWriter::new(File::create(&path)?))?;
            println!("{} records -> {}", demo.len(), path.display());
        }
        Command::Imitate { demo, epochs, holdout } => {
            let data = read_demo(demo)?;
            let icfg = ImitationConfig { epochs: *epochs, seed, ..ImitationConfig::default() };
            let (net, report) = fit_imitation(&data, &cfg.network, &icfg)?;
            checkpoint::save_file(&net, &out("imitation.ckpt"))?;
            let mut json = serde_json::to_value(&report)?;
            if let Some(h) = holdout {
                json["holdout_agreement"] = agreement(&net, &read_demo(h)?)?.into();
            }
            write_json(&out("imitation.json"), &json)?;
            println!("{}", serde_json::to_string_pretty(&json)?);
        }
        Command::Train { demo, demo_checkpoint, opponent } => {
            let opp = opponent.unwrap_or(demo.other()).heuristic();
            let fitted = demo_checkpoint.as_deref().map(checkpoint::load_file).transpose()?;
            let demo_policy: &dyn PolicyHandle = match &fitted {
                Some(n) => n,
                None => &demo.heuristic(),
            };
            let (net, log) = match train(&scenario, demo_policy, &opp, &cfg) {
                Ok(v) => v,
                Err(TrainError::Diverged { loss, network, log }) => {
                    checkpoint::save_file(&network, &out("model.ckpt"))?;
                    log.write_csv(File::create(out("train_log.csv"))?)?;
                    return Err(TrainError::Diverged { loss, network, log }.into());
                }
                Err(e) => return Err(e.into()),
            };
            checkpoint::save_file(&net, &out("model.ckpt"))?;
            log.write_csv(File::create(out("train_log.csv"))?)?;
            println!(
                "{} env steps, {} episodes, {} updates -> {}",
                log.env_steps,
                log.episodes.len(),
                log.updates,
                out("model.ckpt").display()
            );
        }
        Command::Evaluate { checkpoint: ckpt, allied, enemy, battles } => {
            let battles = battles.unwrap_or(scenario.eval_battles);
            let net: Option<PolicyNetwork> = ckpt.as_deref().map(checkpoint::load_file).transpose()?;
            let policy: &dyn PolicyHandle = match &net {
                Some(n) => n,
                None => &allied.heuristic(),
            };
            let report = evaluate(policy, &enemy.heuristic(), &scenario, battles, seed)?;
            let json = report.to_json();
            fs::write(out("eval.json"), &json)?;
            println!("{json}");
        }
        Command::Ablate { demo, battles } => {
            let xcfg = crossval_config(&scenario, cfg, Modality::Heuristic, *battles, seed);
            let report = run_ablation(&scenario, &xcfg, demo.heuristic(), demo.other().heuristic(), None)?;
            write_json(&out("ablation.json"), &report)?;
            for (name, r) in [("full", &report.full), ("q_demo_only", &report.q_demo_only), ("q_theta_only", &report.q_theta_only)] {
                println!("{name:>13}: W {:.2}  R {:+.3}", r.win_rate, r.mean_normalized_reward);
            }
        }
        Command::Crossval { modality, battles } => {
            let modality = match modality {
                ModalityArg::H => Modality::Heuristic,
                ModalityArg::O => Modality::Observed,
            };
            let xcfg = crossval_config(&scenario, cfg, modality, *battles, seed);
            let report = cross_validation_run(&scenario, &xcfg)?;
            write_json(&out("crossval.json"), &report)?;
            for d in &report.directions {
                println!(
                    "{} vs {}: trained W {:.2} R {:+.3} | demonstrator W {:.2} R {:+.3}",
                    d.demonstrator.short_name(),
                    d.opponent.short_name(),
                    d.trained.win_rate,
                    d.trained.mean_normalized_reward,
                    d.baseline.win_rate,
                    d.baseline.mean_normalized_reward
                );
            }
        }
        Command::Lemma1 { demo, samples } => {
            let h = demo.heuristic();
            let report =
                check_lemma1(&scenario, &h, &demo.other().heuristic(), *samples, seed, cfg.lambda, cfg.brd_iterations)?;
            write_json(&out("lemma1.json"), &report)?;
            println!("{} samples, {} violations", report.samples.len(), report.violations);
            if report.violations > 0 {
                return Ok(ExitCode::from(EXIT_CHECK_FAILED));
            }
        }
        Command::OraclePne { tensor, random, iterations } => {
            let tensors = match tensor {
                Some(p) => vec![PayoffTensor::parse(&fs::read_to_string(p)?)?],
                None => random_tensors(*random, seed),
            };
            let mut disagreements = 0;
            let mut converged = 0;
            for t in &tensors {
                let pne = brute_force_pne(t);
                let init = vec![0; t.num_agents()];
                let d = tensor_dynamics(t, &init, *iterations, false);
                if d.converged {
                    converged += 1;
                    if !pne.contains(&d.joint) {
                        disagreements += 1;
                    }
                }
                if tensors.len() == 1 {
                    println!("equilibria: {pne:?}");
                    println!("dynamics: {:?} (converged: {})", d.joint, d.converged);
                }
            }
            println!("{} tensors, {converged} converged, {disagreements} disagreements", tensors.len());
            if disagreements > 0 {
                return Ok(ExitCode::from(EXIT_CHECK_FAILED));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn crossval_config(
    scenario: &Scenario,
    train: TrainConfig,
    modality: Modality,
    battles: Option<usize>,
    seed: u64,
) -> CrossValConfig {
    CrossValConfig {
        train,
        modality,
        eval_battles: battles.unwrap_or(scenario.eval_battles),
        eval_seed: seed,
        ..CrossValConfig::default()
    }
}

fn read_demo(path: &Path) -> Result<Demonstration> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let demo = Demonstration::read_jsonl(BufReader::new(file))?;
    if demo.is_empty() {
        bail!("{} has no records", path.display());
    }
    Ok(demo)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

/// Random games with 1..=3 agents and 2..=4 actions each, payoffs in [-1, 1).
fn random_tensors(n: usize, seed: u64) -> Vec<PayoffTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let agents = rng.gen_range(1..=3);
            let actions: Vec<usize> = (0..agents).map(|_| rng.gen_range(2..=4)).collect();
            PayoffTensor::from_fn(actions, |_| rng.gen_range(-1.0..1.0))
        })
        .collect()
}
