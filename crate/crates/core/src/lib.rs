//! Fair multi-agent reinforcement learning: maximize a concave function of
//! the per-agent long-run average rewards.
//!
//! - [`mdp`]: tabular MDPs, policies, occupancy measures, steady states
//! - [`objectives`]: fairness objectives and their gradients
//! - [`occupancy`]: the concave occupancy-measure program
//! - [`posterior`]: posterior-sampling learners
//! - [`policy_gradient`]: model-free joint policy gradient
//! - [`env`]: simulation environments
//! - [`baselines`]: comparison schedulers
//! - [`harness`]: experiment orchestration

pub mod baselines;
pub mod env;
pub mod harness;
pub mod mdp;
pub mod nn;
pub mod objectives;
pub mod occupancy;
pub mod policy_gradient;
pub mod posterior;
pub mod sampling;

pub use mdp::{OccupancyMeasure, TabularMdp, TabularPolicy};
pub use objectives::ObjectiveFunction;
pub use occupancy::{extract_policy, solve_occupancy, SolverConfig};
