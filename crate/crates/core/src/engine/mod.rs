//! Deterministic grid micro-combat engine.
//!
//! Units live on an integer grid. Each step both teams submit one action per
//! living unit; attacks are resolved against a snapshot of the pre-step state,
//! damage is applied, then movement, then cooldowns tick. The reward is only
//! defined at the terminal state: surviving allied hp minus surviving enemy hp.

mod features;

pub use features::{feature_len, features};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of move directions in the action space.
pub const NUM_DIRECTIONS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("illegal action {action:?} for unit {unit}")]
    IllegalAction { unit: usize, action: Action },
    #[error("no action supplied for living unit {unit}")]
    MissingAction { unit: usize },
    #[error("action supplied for dead unit {unit}")]
    DeadUnitAction { unit: usize },
    #[error("joint action for {got:?} supplied where {expected:?} was expected")]
    WrongTeam { expected: Team, got: Team },
    #[error("joint action covers {got} units, team has {expected}")]
    JointActionSize { expected: usize, got: usize },
    #[error("state is already terminal")]
    AlreadyTerminal,
    #[error("state is not terminal")]
    NotTerminal,
    #[error("unit {0} is dead")]
    DeadAgent(usize),
    #[error("unit index {0} out of range")]
    NoSuchUnit(usize),
    #[error("invalid state: {0}")]
    InvalidState(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnitSpec {
    pub max_hp: i32,
    pub damage: i32,
    /// Chebyshev distance in cells.
    pub weapon_range: i32,
    /// Cells per move.
    pub velocity: i32,
    /// Steps a unit waits after attacking before it may attack again.
    pub max_cooldown: i32,
}

impl UnitSpec {
    /// The single archetype used by the built-in scenarios.
    pub const MARINE: UnitSpec = UnitSpec {
        max_hp: 8,
        damage: 4,
        weapon_range: 4,
        velocity: 1,
        max_cooldown: 1,
    };

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.max_hp < 1
            || self.damage < 1
            || self.weapon_range < 1
            || self.velocity < 1
            || self.max_cooldown < 0
        {
            return Err(EngineError::InvalidState(format!("bad unit spec {self:?}")));
        }
        Ok(())
    }

    pub fn damage_per_frame(&self) -> f64 {
        self.damage as f64 / (self.max_cooldown as f64 + 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Team {
    Allied,
    Enemy,
}

impl Team {
    pub fn opponent(self) -> Team {
        match self {
            Team::Allied => Team::Enemy,
            Team::Enemy => Team::Allied,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub x: i32,
    pub y: i32,
}

impl Pos {
    pub const fn new(x: i32, y: i32) -> Self {
        Pos { x, y }
    }

    pub fn chebyshev(self, other: Pos) -> i32 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }

    pub fn dist2(self, other: Pos) -> i32 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn offset(self, dir: Direction, cells: i32) -> Pos {
        let (dx, dy) = dir.delta();
        Pos::new(self.x + dx * cells, self.y + dy * cells)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnitState {
    pub spec: UnitSpec,
    pub hp: i32,
    pub pos: Pos,
    pub cooldown: i32,
    pub team: Team,
    /// Stable index within the unit's team.
    pub unit_id: usize,
}

impl UnitState {
    pub fn new(spec: UnitSpec, team: Team, unit_id: usize, pos: Pos) -> Self {
        UnitState { spec, hp: spec.max_hp, pos, cooldown: 0, team, unit_id }
    }

    pub fn alive(&self) -> bool {
        self.hp > 0
    }

    pub fn in_range(&self, other: &UnitState) -> bool {
        self.pos.chebyshev(other.pos) <= self.spec.weapon_range
    }
}

/// Move directions in action-index order. `Up` decreases `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Left,
    Right,
    Up,
    Down,
}

impl Direction {
    pub const ALL: [Direction; NUM_DIRECTIONS] =
        [Direction::Left, Direction::Right, Direction::Up, Direction::Down];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::Left => (-1, 0),
            Direction::Right => (1, 0),
            Direction::Up => (0, -1),
            Direction::Down => (0, 1),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// A single unit's action. `Attack` carries a slot into the acting unit's
/// ordered target list (see [`target_list`]), not a unit index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Move(Direction),
    Attack(usize),
}

impl Action {
    /// Position in the flat action space `[left, right, up, down, attack 0, attack 1, ...]`.
    pub fn index(self) -> usize {
        match self {
            Action::Move(d) => d.index(),
            Action::Attack(slot) => NUM_DIRECTIONS + slot,
        }
    }

    pub fn from_index(index: usize, target_slots: usize) -> Option<Action> {
        if index < NUM_DIRECTIONS {
            Some(Action::Move(Direction::ALL[index]))
        } else if index < NUM_DIRECTIONS + target_slots {
            Some(Action::Attack(index - NUM_DIRECTIONS))
        } else {
            None
        }
    }
}

/// One action per living unit of a team, indexed by team-local unit id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointAction {
    pub team: Team,
    pub actions: Vec<Option<Action>>,
}

impl JointAction {
    pub fn empty(team: Team, size: usize) -> Self {
        JointAction { team, actions: vec![None; size] }
    }

    pub fn get(&self, local: usize) -> Option<Action> {
        self.actions.get(local).copied().flatten()
    }

    pub fn set(&mut self, local: usize, action: Action) {
        self.actions[local] = Some(action);
    }
}

/// A resolved attack from one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackEvent {
    pub attacker: usize,
    pub target: usize,
    pub damage: i32,
    /// The target's snapshot hp was already covered by damage from
    /// lower-indexed attackers of the same step (overkill).
    pub invalid: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepEvents {
    pub attacks: Vec<AttackEvent>,
}

impl StepEvents {
    pub fn team_attacks(&self, state: &GameState, team: Team) -> (usize, usize) {
        let mut total = 0;
        let mut invalid = 0;
        for ev in self.attacks.iter().filter(|ev| state.units[ev.attacker].team == team) {
            total += 1;
            invalid += ev.invalid as usize;
        }
        (total, invalid)
    }
}

/// Full joint state. Allied units come first, then enemies; order never changes
/// and dead units stay in place with hp 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GameState {
    units: Vec<UnitState>,
    width: i32,
    height: i32,
    step: u32,
    max_steps: u32,
    num_allied: usize,
}

impl GameState {
    pub fn new(units: Vec<UnitState>, width: i32, height: i32, max_steps: u32) -> Result<Self, EngineError> {
        Self::with_step(units, width, height, 0, max_steps)
    }

    pub fn with_step(
        units: Vec<UnitState>,
        width: i32,
        height: i32,
        step: u32,
        max_steps: u32,
    ) -> Result<Self, EngineError> {
        let bad = |msg: String| Err(EngineError::InvalidState(msg));
        if width < 1 || height < 1 {
            return bad(format!("map extent {width}x{height}"));
        }
        if step > max_steps || max_steps == 0 {
            return bad(format!("step {step} with cap {max_steps}"));
        }
        let num_allied = units.iter().take_while(|u| u.team == Team::Allied).count();
        if units[num_allied..].iter().any(|u| u.team != Team::Enemy) {
            return bad("allied units must precede enemy units".into());
        }
        if num_allied == 0 || num_allied == units.len() {
            return bad("both rosters must be nonempty".into());
        }
        for (i, u) in units.iter().enumerate() {
            u.spec.validate()?;
            let local = if i < num_allied { i } else { i - num_allied };
            if u.unit_id != local {
                return bad(format!("unit {i} has id {} but position {local}", u.unit_id));
            }
            if !(0..=u.spec.max_hp).contains(&u.hp) || !(0..=u.spec.max_cooldown).contains(&u.cooldown) {
                return bad(format!("unit {i} hp/cooldown out of range"));
            }
            if u.pos.x < 0 || u.pos.y < 0 || u.pos.x >= width || u.pos.y >= height {
                return bad(format!("unit {i} off map at {:?}", u.pos));
            }
        }
        for (i, a) in units.iter().enumerate().filter(|(_, u)| u.alive()) {
            if units[i + 1..].iter().any(|b| b.alive() && b.pos == a.pos) {
                return bad(format!("unit {i} shares its cell with another living unit"));
            }
        }
        Ok(GameState { units, width, height, step, max_steps, num_allied })
    }

    pub fn units(&self) -> &[UnitState] {
        &self.units
    }

    pub fn unit(&self, index: usize) -> Result<&UnitState, EngineError> {
        self.units.get(index).ok_or(EngineError::NoSuchUnit(index))
    }

    pub fn width(&self) -> i32 {
        self.width
    }

    pub fn height(&self) -> i32 {
        self.height
    }

    pub fn step_count(&self) -> u32 {
        self.step
    }

    pub fn max_steps(&self) -> u32 {
        self.max_steps
    }

    pub fn team_size(&self, team: Team) -> usize {
        match team {
            Team::Allied => self.num_allied,
            Team::Enemy => self.units.len() - self.num_allied,
        }
    }

    /// Global index range of a team's units.
    pub fn team_range(&self, team: Team) -> std::ops::Range<usize> {
        match team {
            Team::Allied => 0..self.num_allied,
            Team::Enemy => self.num_allied..self.units.len(),
        }
    }

    pub fn global_index(&self, team: Team, local: usize) -> usize {
        self.team_range(team).start + local
    }

    pub fn living(&self, team: Team) -> impl Iterator<Item = usize> + '_ {
        self.team_range(team).filter(move |&i| self.units[i].alive())
    }

    pub fn team_hp(&self, team: Team) -> i64 {
        self.units[self.team_range(team)].iter().map(|u| u.hp as i64).sum()
    }

    pub fn team_alive(&self, team: Team) -> bool {
        self.units[self.team_range(team)].iter().any(UnitState::alive)
    }

    pub fn is_terminal(&self) -> bool {
        !self.team_alive(Team::Allied) || !self.team_alive(Team::Enemy) || self.step >= self.max_steps
    }

    pub fn on_map(&self, p: Pos) -> bool {
        p.x >= 0 && p.y >= 0 && p.x < self.width && p.y < self.height
    }

    /// Size of the flat action space for units of `team`.
    pub fn action_space(&self, team: Team) -> usize {
        NUM_DIRECTIONS + self.team_size(team.opponent())
    }

    /// Stable content hash (hex) used to identify states in logs and reports.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in [self.width, self.height, self.step as i32, self.max_steps as i32] {
            h.update(v.to_le_bytes());
        }
        for u in &self.units {
            let s = u.spec;
            for v in [
                s.max_hp,
                s.damage,
                s.weapon_range,
                s.velocity,
                s.max_cooldown,
                u.hp,
                u.pos.x,
                u.pos.y,
                u.cooldown,
                u.team as i32,
                u.unit_id as i32,
            ] {
                h.update(v.to_le_bytes());
            }
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    fn living_unit(&self, unit: usize) -> Result<&UnitState, EngineError> {
        let u = self.unit(unit)?;
        if !u.alive() {
            return Err(EngineError::DeadAgent(unit));
        }
        Ok(u)
    }
}

/// The attack-target list of `unit`: living opponents inside weapon range,
/// then living opponents outside it, each part ascending by remaining hp
/// (ties: closer first, then lower index). Dead opponents fill the tail as
/// `None` so the list length always equals the initial opponent count.
pub fn target_list(state: &GameState, unit: usize) -> Result<Vec<Option<usize>>, EngineError> {
    let me = state.living_unit(unit)?;
    let range = state.team_range(me.team.opponent());
    let mut living: Vec<usize> = range.clone().filter(|&i| state.units[i].alive()).collect();
    living.sort_by_key(|&i| {
        let o = &state.units[i];
        (!me.in_range(o), o.hp, me.pos.chebyshev(o.pos), i)
    });
    let mut out: Vec<Option<usize>> = living.into_iter().map(Some).collect();
    out.resize(range.len(), None);
    Ok(out)
}

/// Legal actions for a living unit, in action-index order.
///
/// Moves are legal when the destination is on the map. A move into an occupied
/// cell is legal and resolves as holding position; it is the engine's hold idiom.
/// Attacks are legal when the unit is off cooldown and the slot names a living
/// opponent inside weapon range. Never empty: if no move stays on the map and no
/// attack is available, all four moves are returned (each resolves as a hold).
pub fn legal_actions(state: &GameState, unit: usize) -> Result<Vec<Action>, EngineError> {
    let me = state.living_unit(unit)?;
    let mut out: Vec<Action> = Direction::ALL
        .iter()
        .filter(|&&d| state.on_map(me.pos.offset(d, me.spec.velocity)))
        .map(|&d| Action::Move(d))
        .collect();
    if me.cooldown == 0 {
        let targets = target_list(state, unit)?;
        for (slot, t) in targets.iter().enumerate() {
            match t {
                Some(t) if me.in_range(&state.units[*t]) => out.push(Action::Attack(slot)),
                _ => break,
            }
        }
    }
    if out.is_empty() {
        out.extend(Direction::ALL.iter().map(|&d| Action::Move(d)));
    }
    Ok(out)
}

/// Legality mask over the flat action space.
pub fn legal_mask(state: &GameState, unit: usize) -> Result<Vec<bool>, EngineError> {
    let me = state.unit(unit)?;
    let mut mask = vec![false; state.action_space(me.team)];
    for a in legal_actions(state, unit)? {
        mask[a.index()] = true;
    }
    Ok(mask)
}

pub fn is_legal(state: &GameState, unit: usize, action: Action) -> Result<bool, EngineError> {
    Ok(legal_actions(state, unit)?.contains(&action))
}

/// Advances the state by one simultaneous step.
pub fn step(state: &GameState, allied: &JointAction, enemy: &JointAction) -> Result<GameState, EngineError> {
    step_with_events(state, allied, enemy).map(|(s, _)| s)
}

pub fn step_with_events(
    state: &GameState,
    allied: &JointAction,
    enemy: &JointAction,
) -> Result<(GameState, StepEvents), EngineError> {
    if state.is_terminal() {
        return Err(EngineError::AlreadyTerminal);
    }
    let actions = validate_joint(state, allied, enemy)?;
    let order: Vec<usize> = (0..state.units.len()).collect();
    Ok(resolve(state, &actions, &order))
}

fn validate_joint(
    state: &GameState,
    allied: &JointAction,
    enemy: &JointAction,
) -> Result<Vec<Option<Action>>, EngineError> {
    let mut actions = vec![None; state.units.len()];
    for (team, joint) in [(Team::Allied, allied), (Team::Enemy, enemy)] {
        if joint.team != team {
            return Err(EngineError::WrongTeam { expected: team, got: joint.team });
        }
        if joint.actions.len() != state.team_size(team) {
            return Err(EngineError::JointActionSize {
                expected: state.team_size(team),
                got: joint.actions.len(),
            });
        }
        for (local, a) in joint.actions.iter().enumerate() {
            let unit = state.global_index(team, local);
            match (state.units[unit].alive(), a) {
                (true, Some(a)) => {
                    if !is_legal(state, unit, *a)? {
                        return Err(EngineError::IllegalAction { unit, action: *a });
                    }
                    actions[unit] = Some(*a);
                }
                (true, None) => return Err(EngineError::MissingAction { unit }),
                (false, Some(_)) => return Err(EngineError::DeadUnitAction { unit }),
                (false, None) => {}
            }
        }
    }
    Ok(actions)
}

/// Resolution core. `order` is the sequence in which units are visited; the
/// outcome must not depend on it (every tie-break is by global index).
pub(crate) fn resolve(state: &GameState, actions: &[Option<Action>], order: &[usize]) -> (GameState, StepEvents) {
    let snapshot = &state.units;
    let n = snapshot.len();

    // Attacks: targets and damage come from the snapshot.
    let mut attacks: Vec<(usize, usize, i32)> = Vec::new();
    for &i in order {
        if let Some(Action::Attack(slot)) = actions[i] {
            let target = target_list(state, i).ok().and_then(|t| t.get(slot).copied().flatten());
            if let Some(t) = target {
                attacks.push((i, t, snapshot[i].spec.damage));
            }
        }
    }
    attacks.sort_unstable_by_key(|&(a, _, _)| a);
    let mut assigned = vec![0i32; n];
    let mut events = StepEvents::default();
    for &(attacker, target, damage) in &attacks {
        let invalid = snapshot[target].hp <= assigned[target];
        assigned[target] += damage;
        events.attacks.push(AttackEvent { attacker, target, damage, invalid });
    }

    let mut units = snapshot.clone();
    for (u, dmg) in units.iter_mut().zip(&assigned) {
        u.hp = (u.hp - dmg).max(0);
    }

    // Moves: blocked by any unit alive after damage; contested cells go to the
    // lowest global index.
    let occupied: Vec<Pos> = units.iter().filter(|u| u.alive()).map(|u| u.pos).collect();
    let mut claims: Vec<(Pos, usize)> = Vec::new();
    for &i in order {
        if !units[i].alive() {
            continue;
        }
        if let Some(Action::Move(d)) = actions[i] {
            let dest = units[i].pos.offset(d, units[i].spec.velocity);
            if state.on_map(dest) && !occupied.contains(&dest) {
                claims.push((dest, i));
            }
        }
    }
    for &(dest, i) in &claims {
        let winner = claims.iter().filter(|(p, _)| *p == dest).map(|&(_, j)| j).min();
        if winner == Some(i) {
            units[i].pos = dest;
        }
    }

    for (i, u) in units.iter_mut().enumerate() {
        let attacked = attacks.iter().any(|&(a, _, _)| a == i);
        u.cooldown = if attacked { u.spec.max_cooldown } else { (u.cooldown - 1).max(0) };
    }

    let next = GameState { units, step: state.step + 1, ..state.clone() };
    (next, events)
}

/// Surviving allied hp minus surviving enemy hp. Only defined at terminal states.
pub fn terminal_reward(state: &GameState) -> Result<f64, EngineError> {
    if !state.is_terminal() {
        return Err(EngineError::NotTerminal);
    }
    Ok((state.team_hp(Team::Allied) - state.team_hp(Team::Enemy)) as f64)
}

/// Terminal reward divided by the allied team's initial total hp.
pub fn normalized_reward(state: &GameState, initial: &GameState) -> Result<f64, EngineError> {
    let r = terminal_reward(state)?;
    let denom = initial.team_hp(Team::Allied);
    if denom <= 0 {
        return Err(EngineError::InvalidState("initial allied hp is zero".into()));
    }
    Ok(r / denom as f64)
}
