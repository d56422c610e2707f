use crate::engine::Action;
use crate::game_theory::AgentResponse;

/// Converts response values into a target distribution: each value minus the
/// minimum, divided by the sum of those differences. When every value is equal
/// the target is uniform. The minimum-valued action always gets zero mass.
pub fn objective_policy(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = values.iter().map(|v| v - min).collect();
    let total: f64 = shifted.iter().sum();
    if total <= 0.0 {
        return vec![1.0 / values.len() as f64; values.len()];
    }
    shifted.into_iter().map(|d| d / total).collect()
}

/// Whether scaling every response by `c > 0` leaves the target unchanged to 1e-9.
pub fn scale_invariance_check(values: &[f64], c: f64) -> bool {
    assert!(c > 0.0, "scale must be positive");
    let scaled: Vec<f64> = values.iter().map(|v| c * v).collect();
    objective_policy(values).iter().zip(objective_policy(&scaled)).all(|(a, b)| (a - b).abs() <= 1e-9)
}

/// Target distribution over the full action space for one agent; actions
/// outside the agent's legal set get zero mass.
pub fn profile_targets(response: &AgentResponse, action_space: usize) -> Vec<f64> {
    let mut out = vec![0.0; action_space];
    for (a, p) in response.actions.iter().zip(objective_policy(&response.values)) {
        out[Action::index(*a)] = p;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_actions_worst_gets_nothing() {
        assert_eq!(objective_policy(&[0.51, 0.49]), vec![1.0, 0.0]);
    }

    #[test]
    fn three_actions() {
        let p = objective_policy(&[3.0, 1.0, 0.0]);
        assert_eq!(p, vec![0.75, 0.25, 0.0]);
    }

    #[test]
    fn all_equal_is_uniform() {
        assert_eq!(objective_policy(&[2.0; 4]), vec![0.25; 4]);
        assert_eq!(objective_policy(&[-7.0]), vec![1.0]);
    }

    #[test]
    fn scaling_and_shift() {
        let v = [4.0, -2.0, 9.5, 0.0];
        assert!(scale_invariance_check(&v, 1.0));
        assert!(scale_invariance_check(&v, 0.37));
        let shifted: Vec<f64> = v.iter().map(|x| x + 11.0).collect();
        let (a, b) = (objective_policy(&v), objective_policy(&shifted));
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
    }
}
