//! Pure Nash equilibrium search: best-response dynamics over a shared payoff,
//! and an exhaustive-enumeration oracle over explicit payoff tensors.

use std::fmt::Write as _;

use thiserror::Error;

use crate::demonstrators::{PolicyError, PolicyHandle};
use crate::engine::{legal_actions, Action, GameState, JointAction, Team};
use crate::value::{QFunction, ValueError};

/// Sweep count used when none is configured.
pub const DEFAULT_ITERATIONS: usize = 10;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("state is terminal")]
    TerminalState,
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("payoff tensor is missing joint action {0:?}")]
    IncompleteTensor(Vec<usize>),
    #[error("payoff tensor line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Outcome of best-response dynamics over abstract per-agent choice lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Dynamics {
    /// Chosen position in each agent's choice list.
    pub joint: Vec<usize>,
    /// Per agent, the payoff of every choice against the others, from the
    /// agent's most recent update.
    pub responses: Vec<Vec<f64>>,
    /// True when the last sweep changed no agent's choice.
    pub converged: bool,
    /// Joint choice and its payoff after every single-agent update, in order.
    pub trace: Vec<(Vec<usize>, f64)>,
    pub evaluations: usize,
}

/// Best-response dynamics over `choices[g]` options per agent, starting from
/// `init`. Agents update in index order; each moves to the argmax of the payoff
/// with the others fixed, keeping its incumbent choice on ties and otherwise
/// taking the lowest position. With `early_exit`, stops after the first sweep
/// that changes nothing; for a deterministic payoff the result is unchanged.
pub fn best_response<E>(
    choices: &[usize],
    init: &[usize],
    iterations: usize,
    early_exit: bool,
    mut payoff: impl FnMut(&[usize]) -> Result<f64, E>,
) -> Result<Dynamics, E> {
    let mut joint = init.to_vec();
    let mut responses: Vec<Vec<f64>> = choices.iter().map(|&n| vec![f64::NAN; n]).collect();
    let mut trace = Vec::with_capacity(iterations * choices.len());
    let mut evaluations = 0;
    let mut converged = false;
    for _ in 0..iterations {
        let mut changed = false;
        for g in 0..choices.len() {
            let incumbent = joint[g];
            let mut probe = joint.clone();
            for a in 0..choices[g] {
                probe[g] = a;
                responses[g][a] = payoff(&probe)?;
                evaluations += 1;
            }
            let values = &responses[g];
            let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let pick = if values[incumbent] >= best {
                incumbent
            } else {
                values.iter().position(|&v| v >= best).expect("non-empty choice list")
            };
            changed |= pick != incumbent;
            joint[g] = pick;
            trace.push((joint.clone(), values[pick]));
        }
        converged = !changed;
        if converged && early_exit {
            break;
        }
    }
    Ok(Dynamics { joint, responses, converged, trace, evaluations })
}

/// One allied agent's response vector at the equilibrium candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentResponse {
    pub unit: usize,
    /// Position within the allied roster.
    pub local: usize,
    /// The agent's legal actions, in action-index order.
    pub actions: Vec<Action>,
    /// `Q(s, a, A^{-g})` for each entry of `actions`.
    pub values: Vec<f64>,
    pub chosen: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseProfile {
    pub joint: JointAction,
    pub agents: Vec<AgentResponse>,
    pub converged: bool,
    /// Joint action and its value after every single-agent update.
    pub trace: Vec<(JointAction, f64)>,
    pub evaluations: usize,
}

/// Runs best-response dynamics for the living allied agents of `state`,
/// scoring joint actions with `q` and initializing from `init`'s greedy actions.
pub fn best_response_dynamics(
    state: &GameState,
    q: &dyn QFunction,
    init: &dyn PolicyHandle,
    iterations: usize,
    early_exit: bool,
) -> Result<ResponseProfile, GameError> {
    if state.is_terminal() {
        return Err(GameError::TerminalState);
    }
    if iterations == 0 {
        return Err(GameError::NoIterations);
    }
    let size = state.team_size(Team::Allied);
    let mut units = Vec::new();
    let mut legal = Vec::new();
    let mut start = Vec::new();
    for (local, unit) in state.team_range(Team::Allied).enumerate() {
        if !state.units()[unit].alive() {
            continue;
        }
        let acts = legal_actions(state, unit).map_err(PolicyError::from)?;
        let first = init.greedy(state, unit)?;
        start.push(acts.iter().position(|&a| a == first).unwrap_or(0));
        units.push((unit, local));
        legal.push(acts);
    }
    let to_joint = |picks: &[usize]| {
        let mut joint = JointAction::empty(Team::Allied, size);
        for (g, &p) in picks.iter().enumerate() {
            joint.set(units[g].1, legal[g][p]);
        }
        joint
    };

    let counts: Vec<usize> = legal.iter().map(Vec::len).collect();
    let dynamics = best_response(&counts, &start, iterations, early_exit, |picks| {
        let joint = to_joint(picks);
        let v = q.evaluate(state, &joint)?;
        Ok::<_, GameError>(v)
    })?;
    let trace = dynamics.trace.iter().map(|(picks, v)| (to_joint(picks), *v)).collect();

    let agents = units
        .iter()
        .zip(&legal)
        .zip(&dynamics.responses)
        .enumerate()
        .map(|(g, ((&(unit, local), acts), values))| AgentResponse {
            unit,
            local,
            actions: acts.clone(),
            values: values.clone(),
            chosen: acts[dynamics.joint[g]],
        })
        .collect();
    Ok(ResponseProfile {
        joint: to_joint(&dynamics.joint),
        agents,
        converged: dynamics.converged,
        trace,
        evaluations: dynamics.evaluations,
    })
}

/// `(joint action, Q)` after every single-agent update of the full
/// `iterations`-sweep dynamics.
pub fn sweep_trace(
    state: &GameState,
    q: &dyn QFunction,
    init: &dyn PolicyHandle,
    iterations: usize,
) -> Result<Vec<(JointAction, f64)>, GameError> {
    Ok(best_response_dynamics(state, q, init, iterations, false)?.trace)
}

/// Explicit shared payoff over every joint action of a small game.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffTensor {
    actions: Vec<usize>,
    values: Vec<f64>,
}

impl PayoffTensor {
    /// Builds a tensor from `f` evaluated on every joint action.
    pub fn from_fn(actions: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut values = Vec::new();
        for joint in JointIter::new(&actions) {
            values.push(f(&joint));
        }
        PayoffTensor { actions, values }
    }

    /// Builds a tensor from explicit entries; every joint action must appear.
    pub fn from_entries(
        actions: Vec<usize>,
        entries: impl IntoIterator<Item = (Vec<usize>, f64)>,
    ) -> Result<Self, GameError> {
        let mut values: Vec<Option<f64>> = vec![None; actions.iter().product()];
        for (joint, v) in entries {
            let idx = flat_index(&actions, &joint)
                .ok_or_else(|| GameError::Parse { line: 0, msg: format!("joint action {joint:?} out of range") })?;
            values[idx] = Some(v);
        }
        let mut out = Vec::with_capacity(values.len());
        for (joint, v) in JointIter::new(&actions).zip(values) {
            out.push(v.ok_or(GameError::IncompleteTensor(joint))?);
        }
        Ok(PayoffTensor { actions, values: out })
    }

    pub fn num_agents(&self) -> usize {
        self.actions.len()
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn get(&self, joint: &[usize]) -> f64 {
        self.values[flat_index(&self.actions, joint).expect("joint action in range")]
    }

    /// Parses the text form: a header `num_agents n_1 .. n_k`, then one line
    /// per joint action `i_1 .. i_k payoff`. Blank lines and `#` comments are
    /// ignored.
    pub fn parse(text: &str) -> Result<Self, GameError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hl, header) = lines.next().ok_or(GameError::Parse { line: 0, msg: "empty input".into() })?;
        let nums = parse_usizes(header, hl)?;
        let (&k, actions) = nums.split_first().ok_or(GameError::Parse { line: hl, msg: "empty header".into() })?;
        if actions.len() != k || k == 0 || actions.contains(&0) {
            return Err(GameError::Parse { line: hl, msg: "header must be `num_agents` then that many positive counts".into() });
        }
        let mut entries = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (ln, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != k + 1 {
                return Err(GameError::Parse { line: ln, msg: format!("expected {} fields", k + 1) });
            }
            let joint = parse_usizes(&fields[..k].join(" "), ln)?;
            let v: f64 = fields[k].parse().map_err(|e| GameError::Parse { line: ln, msg: format!("{e}") })?;
            if !v.is_finite() {
                return Err(GameError::Parse { line: ln, msg: "payoff must be finite".into() });
            }
            if !seen.insert(joint.clone()) {
                return Err(GameError::Parse { line: ln, msg: format!("duplicate joint action {joint:?}") });
            }
            if flat_index(actions, &joint).is_none() {
                return Err(GameError::Parse { line: ln, msg: format!("joint action {joint:?} out of range") });
            }
            entries.push((joint, v));
        }
        Self::from_entries(actions.to_vec(), entries)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let header: Vec<String> = std::iter::once(self.actions.len()).chain(self.actions.iter().copied()).map(|n| n.to_string()).collect();
        writeln!(s, "{}", header.join(" ")).unwrap();
        for (joint, v) in JointIter::new(&self.actions).zip(&self.values) {
            let idx: Vec<String> = joint.iter().map(|i| i.to_string()).collect();
            writeln!(s, "{} {v:?}", idx.join(" ")).unwrap();
        }
        s
    }
}

fn parse_usizes(s: &str, line: usize) -> Result<Vec<usize>, GameError> {
    s.split_whitespace()
        .map(|t| t.parse().map_err(|e| GameError::Parse { line, msg: format!("`{t}`: {e}") }))
        .collect()
}

fn flat_index(actions: &[usize], joint: &[usize]) -> Option<usize> {
    if joint.len() != actions.len() {
        return None;
    }
    let mut idx = 0;
    for (&a, &n) in joint.iter().zip(actions) {
        if a >= n {
            return None;
        }
        idx = idx * n + a;
    }
    Some(idx)
}

/// Lexicographic enumeration of all joint actions.
struct JointIter<'a> {
    actions: &'a [usize],
    next: Option<Vec<usize>>,
}

impl<'a> JointIter<'a> {
    fn new(actions: &'a [usize]) -> Self {
        let next = (!actions.contains(&0)).then(|| vec![0; actions.len()]);
        JointIter { actions, next }
    }
}

impl Iterator for JointIter<'_> {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let cur = self.next.take()?;
        let mut succ = cur.clone();
        for g in (0..succ.len()).rev() {
            succ[g] += 1;
            if succ[g] < self.actions[g] {
                self.next = Some(succ);
                break;
            }
            succ[g] = 0;
        }
        Some(cur)
    }
}

/// Every joint action from which no single agent can strictly improve the
/// payoff by deviating alone, in lexicographic order.
pub fn brute_force_pne(payoffs: &PayoffTensor) -> Vec<Vec<usize>> {
    JointIter::new(&payoffs.actions)
        .filter(|joint| {
            let v = payoffs.get(joint);
            (0..joint.len()).all(|g| {
                let mut dev = joint.clone();
                (0..payoffs.actions[g]).all(|a| {
                    dev[g] = a;
                    payoffs.get(&dev) <= v
                })
            })
        })
        .collect()
}

/// Best-response dynamics directly on a payoff tensor.
pub fn tensor_dynamics(payoffs: &PayoffTensor, init: &[usize], iterations: usize, early_exit: bool) -> Dynamics {
    best_response(&payoffs.actions, init, iterations, early_exit, |j| Ok::<_, std::convert::Infallible>(payoffs.get(j)))
        .unwrap_or_else(|e| match e {})
}
