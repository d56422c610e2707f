use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HarnessError, Scenario};
use crate::demonstrators::{joint_greedy, PolicyHandle};
use crate::engine::{self, normalized_reward, terminal_reward, Team};

/// Allied attack counts over one battle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AttackTally {
    pub total: usize,
    /// Attacks on targets whose snapshot hp was already covered by damage from
    /// lower-index attackers in the same step.
    pub invalid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BattleRecord {
    pub battle: usize,
    pub seed: u64,
    pub steps: u32,
    pub reward: f64,
    pub normalized_reward: f64,
    pub win: bool,
    pub attacks: Option<AttackTally>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    pub allied: String,
    pub enemy: String,
    pub battles: usize,
    pub seed: u64,
    /// Wins over battles; draws count as losses.
    pub win_rate: f64,
    pub mean_normalized_reward: f64,
    pub invalid_attack_ratio: f64,
    pub records: Vec<BattleRecord>,
}

impl EvalReport {
    /// Recomputes the headline metrics from the per-battle records.
    pub fn from_records(
        scenario: &str,
        allied: String,
        enemy: String,
        seed: u64,
        records: Vec<BattleRecord>,
    ) -> Result<EvalReport, HarnessError> {
        let n = records.len();
        if n == 0 {
            return Err(HarnessError::NoBattles);
        }
        let wins = records.iter().filter(|r| r.win).count();
        let mean = records.iter().map(|r| r.normalized_reward).sum::<f64>() / n as f64;
        let mut report = EvalReport {
            scenario: scenario.into(),
            allied,
            enemy,
            battles: n,
            seed,
            win_rate: wins as f64 / n as f64,
            mean_normalized_reward: mean,
            invalid_attack_ratio: 0.0,
            records,
        };
        report.invalid_attack_ratio = invalid_attack_ratio(&report).unwrap_or(0.0);
        Ok(report)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Plays `battles` seeded battles with both sides acting greedily over their
/// legal actions. Battle `i` spawns from the `i`-th draw of a stream seeded
/// with `seed`.
pub fn evaluate(
    allied: &dyn PolicyHandle,
    enemy: &dyn PolicyHandle,
    scenario: &Scenario,
    battles: usize,
    seed: u64,
) -> Result<EvalReport, HarnessError> {
    if battles == 0 {
        return Err(HarnessError::NoBattles);
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(battles);
    for battle in 0..battles {
        let battle_seed = seeds.next_u64();
        let initial = scenario.spawn(battle_seed)?;
        let mut state = initial.clone();
        let mut tally = AttackTally::default();
        while !state.is_terminal() {
            let a = joint_greedy(allied, &state, Team::Allied)?;
            let e = joint_greedy(enemy, &state, Team::Enemy)?;
            let (next, events) = engine::step_with_events(&state, &a, &e)?;
            let (total, invalid) = events.team_attacks(&state, Team::Allied);
            tally.total += total;
            tally.invalid += invalid;
            state = next;
        }
        let reward = terminal_reward(&state)?;
        records.push(BattleRecord {
            battle,
            seed: battle_seed,
            steps: state.step_count(),
            reward,
            normalized_reward: normalized_reward(&state, &initial)?,
            win: reward > 0.0,
            attacks: Some(tally),
        });
    }
    EvalReport::from_records(&scenario.name, allied.name(), enemy.name(), seed, records)
}

/// Invalid allied attacks over all allied attacks across the report's battles.
pub fn invalid_attack_ratio(report: &EvalReport) -> Result<f64, HarnessError> {
    let mut total = 0;
    let mut invalid = 0;
    for r in &report.records {
        let t = r.attacks.ok_or(HarnessError::MissingLogs)?;
        total += t.total;
        invalid += t.invalid;
    }
    Ok(if total == 0 { 0.0 } else { invalid as f64 / total as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demonstrators::{Heuristic, PolicyError};
    use crate::engine::{Action, Direction, GameState};

    /// Prefers stepping left and never attacks.
    struct Drift;

    impl PolicyHandle for Drift {
        fn distribution(&self, state: &GameState, unit: usize) -> Result<Vec<f64>, PolicyError> {
            let mut p = vec![0.0; state.action_space(state.unit(unit)?.team)];
            p[Action::Move(Direction::Left).index()] = 1.0;
            Ok(p)
        }
    }

    #[test]
    fn passive_team_never_wins() {
        let s = Scenario::builtin("m2v2").unwrap();
        let r = evaluate(&Drift, &Heuristic::AttackClosest, &s, 10, 1).unwrap();
        assert_eq!(r.win_rate, 0.0);
        assert!(r.records.iter().all(|b| b.reward < 0.0));
    }

    #[test]
    fn headline_metrics_match_records() {
        let s = Scenario::builtin("m3v3").unwrap();
        let r = evaluate(&Heuristic::AttackClosest, &Heuristic::AttackWeakest, &s, 20, 5).unwrap();
        let again = EvalReport::from_records(&r.scenario, r.allied.clone(), r.enemy.clone(), r.seed, r.records.clone()).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn ratio_requires_logs() {
        let rec = BattleRecord { battle: 0, seed: 0, steps: 1, reward: 1.0, normalized_reward: 0.1, win: true, attacks: None };
        let r = EvalReport::from_records("x", "a".into(), "b".into(), 0, vec![rec]).unwrap();
        assert!(matches!(invalid_attack_ratio(&r), Err(HarnessError::MissingLogs)));
        assert!(matches!(evaluate(&Drift, &Drift, &Scenario::builtin("m2v2").unwrap(), 0, 0), Err(HarnessError::NoBattles)));
    }
}
