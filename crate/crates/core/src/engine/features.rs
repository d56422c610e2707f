use super::{target_list, EngineError, GameState, Pos, Team, UnitState};

/// Values in the acting unit's own block.
const OWN_BLOCK: usize = 9;
/// Values per other-unit block (enemies and allies).
const UNIT_BLOCK: usize = 11;
/// mean/min/max hp and center x/y, for each side.
const STATS_BLOCK: usize = 10;

/// Feature vector length for a unit of `team`. Depends only on roster sizes.
pub fn feature_len(state: &GameState, team: Team) -> usize {
    let own = state.team_size(team);
    let opp = state.team_size(team.opponent());
    OWN_BLOCK + UNIT_BLOCK * opp + UNIT_BLOCK * (own - 1) + STATS_BLOCK
}

/// Scale constants, derived from the unit specs so they never change within an episode.
struct Scale {
    hp: f64,
    pos: f64,
    cooldown: f64,
}

impl Scale {
    fn of(state: &GameState) -> Self {
        let units = state.units();
        Scale {
            hp: units.iter().map(|u| u.spec.max_hp).max().unwrap_or(1) as f64,
            pos: state.width().max(state.height()) as f64,
            cooldown: units.iter().map(|u| u.spec.max_cooldown).max().unwrap_or(0) as f64 + 1.0,
        }
    }
}

/// Agent-centric features of a living unit.
///
/// Layout: own properties (absolute position), opponents in target-list
/// order, allies by ascending distance, then per-side hp and center
/// statistics. Every position other than the unit's own is relative to it.
/// Dead units contribute all-zero blocks.
pub fn features(state: &GameState, unit: usize) -> Result<Vec<f64>, EngineError> {
    let me = *state.unit(unit)?;
    if !me.alive() {
        return Err(EngineError::DeadAgent(unit));
    }
    let sc = Scale::of(state);
    let mut out = Vec::with_capacity(feature_len(state, me.team));

    let s = me.spec;
    out.extend_from_slice(&[
        s.max_hp as f64 / sc.hp,
        s.velocity as f64,
        s.damage as f64 / sc.hp,
        s.max_cooldown as f64 / sc.cooldown,
        s.damage_per_frame() / sc.hp,
        me.hp as f64 / sc.hp,
        me.pos.x as f64 / sc.pos,
        me.pos.y as f64 / sc.pos,
        me.cooldown as f64 / sc.cooldown,
    ]);

    for t in target_list(state, unit)? {
        match t {
            Some(t) => push_unit(&mut out, &me, &state.units()[t], &sc),
            None => out.extend_from_slice(&[0.0; UNIT_BLOCK]),
        }
    }

    let mut allies: Vec<usize> = state.team_range(me.team).filter(|&i| i != unit).collect();
    allies.sort_by_key(|&i| {
        let u = &state.units()[i];
        (!u.alive(), me.pos.dist2(u.pos), i)
    });
    for i in allies {
        let u = &state.units()[i];
        if u.alive() {
            push_unit(&mut out, &me, u, &sc);
        } else {
            out.extend_from_slice(&[0.0; UNIT_BLOCK]);
        }
    }

    for team in [me.team, me.team.opponent()] {
        push_stats(&mut out, state, team, me.pos, &sc);
    }
    debug_assert_eq!(out.len(), feature_len(state, me.team));
    Ok(out)
}

fn push_unit(out: &mut Vec<f64>, me: &UnitState, u: &UnitState, sc: &Scale) {
    let s = u.spec;
    out.extend_from_slice(&[
        s.max_hp as f64 / sc.hp,
        s.velocity as f64,
        s.damage as f64 / sc.hp,
        s.max_cooldown as f64 / sc.cooldown,
        s.damage_per_frame() / sc.hp,
        u.hp as f64 / sc.hp,
        (u.pos.x - me.pos.x) as f64 / sc.pos,
        (u.pos.y - me.pos.y) as f64 / sc.pos,
        me.pos.chebyshev(u.pos) as f64 / sc.pos,
        u.cooldown as f64 / sc.cooldown,
        me.in_range(u) as i32 as f64,
    ]);
}

fn push_stats(out: &mut Vec<f64>, state: &GameState, team: Team, origin: Pos, sc: &Scale) {
    let living: Vec<&UnitState> = state.living(team).map(|i| &state.units()[i]).collect();
    if living.is_empty() {
        out.extend_from_slice(&[0.0; STATS_BLOCK / 2]);
        return;
    }
    let n = living.len() as f64;
    let hp = living.iter().map(|u| u.hp as f64);
    let mean = hp.clone().sum::<f64>() / n;
    let min = hp.clone().fold(f64::INFINITY, f64::min);
    let max = hp.fold(f64::NEG_INFINITY, f64::max);
    let cx = living.iter().map(|u| (u.pos.x - origin.x) as f64).sum::<f64>() / n;
    let cy = living.iter().map(|u| (u.pos.y - origin.y) as f64).sum::<f64>() / n;
    out.extend_from_slice(&[mean / sc.hp, min / sc.hp, max / sc.hp, cx / sc.pos, cy / sc.pos]);
}
