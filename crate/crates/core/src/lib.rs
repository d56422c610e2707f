//! Multi-agent policy learning on a deterministic grid micro-combat engine.
//!
//! Each decision step solves a cooperative game among the allied units by
//! best-response dynamics over rollout-estimated joint-action values, then
//! trains one shared decentralized policy network toward the resulting
//! per-agent response distributions.
//!
//! - [`engine`]: state, simultaneous-step rules, legality, features.
//! - [`demonstrators`]: rule-based policies, recorded play, imitation.
//! - [`game_theory`]: best-response dynamics and a brute-force equilibrium oracle.
//! - [`value`]: rollout value estimates.
//! - [`learner`]: policy network, objective targets, training loop.
//! - [`harness`]: scenarios, evaluation, experiments.

pub mod demonstrators;
pub mod engine;
pub mod game_theory;
pub mod harness;
pub mod learner;
pub mod value;
