//! Model-free joint policy gradient: REINFORCE estimates of every agent's
//! discounted return gradient, combined through the chain rule of the
//! objective and applied by gradient ascent.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, Environment};
use crate::mdp::sample_index;
use crate::nn::{MlpPolicy, NetworkError};
use crate::objectives::{ObjectiveError, ObjectiveFunction};
use crate::sampling::derive_seed;

#[derive(Debug, Error)]
pub enum PgError {
    #[error("policy expects {expected} inputs but the environment observes {got}")]
    ObservationDimMismatch { expected: usize, got: usize },
    #[error("policy has {outputs} outputs but the environment has {actions} actions")]
    ActionDimMismatch { outputs: usize, actions: usize },
    #[error("gradient estimate needs at least one trajectory")]
    EmptyBatch,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite gradient at epoch {epoch}: {detail}")]
    NonFiniteGradient { epoch: usize, detail: String },
    #[error("invalid policy-gradient configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("training log i/o: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub observation: Vec<f64>,
    pub action: usize,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    /// Steps per training trajectory.
    pub horizon: usize,
    pub optimizer: Optimizer,
    pub epochs: usize,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
}

impl Default for PgConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            learning_rate: 1e-3,
            gamma: 0.99,
            horizon: 1000,
            optimizer: Optimizer::default(),
            epochs: 100,
            hidden: vec![200],
        }
    }
}

impl PgConfig {
    pub fn validate(&self) -> Result<(), PgError> {
        if self.batch_size == 0 {
            return Err(PgError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(PgError::InvalidConfig(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(PgError::InvalidConfig(format!(
                "learning_rate {} must be finite and nonnegative",
                self.learning_rate
            )));
        }
        if self.horizon == 0 {
            return Err(PgError::InvalidConfig("horizon must be at least 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(PgError::InvalidConfig("hidden widths must be positive".into()));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return Err(PgError::InvalidConfig("adam needs beta1, beta2 in [0, 1) and eps > 0".into()));
            }
        }
        Ok(())
    }
}

/// Samples an action from the policy's softmax output.
pub fn sample_action<R: rand::Rng + ?Sized>(policy: &MlpPolicy, observation: &[f64], rng: &mut R) -> usize {
    sample_index(&policy.probabilities(observation), rng)
}

fn check_dims<E: Environment + ?Sized>(env: &E, policy: &MlpPolicy) -> Result<(), PgError> {
    if policy.input_dim() != env.observation_dim() {
        return Err(PgError::ObservationDimMismatch {
            expected: policy.input_dim(),
            got: env.observation_dim(),
        });
    }
    if policy.output_dim() != env.n_actions() {
        return Err(PgError::ActionDimMismatch {
            outputs: policy.output_dim(),
            actions: env.n_actions(),
        });
    }
    Ok(())
}

/// `n` independent rollouts of `horizon` steps. Rollout `i` runs on a clone
/// of `env` reseeded from `(rng_seed, 2i)` and samples actions from stream
/// `(rng_seed, 2i + 1)`, so results do not depend on scheduling.
pub fn collect_trajectories<E>(
    env: &E,
    policy: &MlpPolicy,
    n: usize,
    horizon: usize,
    rng_seed: u64,
) -> Result<Vec<Trajectory>, PgError>
where
    E: Environment + Clone + Send + Sync,
{
    check_dims(env, policy)?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut env = env.clone();
            env.reseed(derive_seed(rng_seed, 2 * i as u64));
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, 2 * i as u64 + 1));
            let mut observation = env.reset();
            let mut steps = Vec::with_capacity(horizon);
            for _ in 0..horizon {
                let action = sample_action(policy, &observation, &mut rng);
                let step = env.step(action)?;
                steps.push(TrajectoryStep {
                    observation: std::mem::replace(&mut observation, step.observation),
                    action,
                    rewards: step.rewards,
                });
            }
            Ok(Trajectory { steps })
        })
        .collect()
}

/// Batch estimate of every agent's return gradient and return.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    /// one parameter-sized gradient per agent
    pub per_agent: Vec<Vec<f64>>,
    /// discounted return per agent, averaged over the batch
    pub returns: Vec<f64>,
}

fn trajectory_terms(traj: &Trajectory, policy: &MlpPolicy, gamma: f64, n_agents: usize) -> GradientEstimate {
    let n_params = policy.n_params();
    let mut per_agent = vec![vec![0.0; n_params]; n_agents];
    let mut returns = vec![0.0; n_agents];
    // discounted reward-to-go, discount measured from the episode start
    let mut to_go = vec![vec![0.0; n_agents]; traj.len()];
    let discounts: Vec<f64> = std::iter::successors(Some(1.0), |d| Some(d * gamma))
        .take(traj.len())
        .collect();
    let mut running = vec![0.0; n_agents];
    for (t, step) in traj.steps.iter().enumerate().rev() {
        for k in 0..n_agents {
            running[k] += discounts[t] * step.rewards[k];
        }
        to_go[t].copy_from_slice(&running);
    }
    returns.copy_from_slice(&running);
    let mut grad = vec![0.0; n_params];
    for (step, weights) in traj.steps.iter().zip(&to_go) {
        if weights.iter().all(|w| *w == 0.0) {
            continue;
        }
        let cache = policy.forward(&step.observation);
        policy.grad_log_prob_into(&cache, step.action, &mut grad);
        for (acc, w) in per_agent.iter_mut().zip(weights) {
            if *w != 0.0 {
                for (a, g) in acc.iter_mut().zip(&grad) {
                    *a += w * g;
                }
            }
        }
    }
    GradientEstimate { per_agent, returns }
}

/// REINFORCE gradient of each agent's discounted return, with discounted
/// reward-to-go and no baseline.
pub fn estimate_grad_j(trajs: &[Trajectory], policy: &MlpPolicy, gamma: f64) -> Result<GradientEstimate, PgError> {
    let first = trajs.first().ok_or(PgError::EmptyBatch)?;
    let n_agents = first.steps.first().map_or(0, |s| s.rewards.len());
    if trajs
        .iter()
        .flat_map(|t| &t.steps)
        .any(|s| s.rewards.len() != n_agents)
    {
        return Err(PgError::DimensionMismatch("reward vectors differ in length".into()));
    }
    let terms: Vec<GradientEstimate> = trajs
        .par_iter()
        .map(|traj| trajectory_terms(traj, policy, gamma, n_agents))
        .collect();
    let n = trajs.len() as f64;
    let mut total = GradientEstimate {
        per_agent: vec![vec![0.0; policy.n_params()]; n_agents],
        returns: vec![0.0; n_agents],
    };
    for term in &terms {
        for (acc, g) in total.per_agent.iter_mut().zip(&term.per_agent) {
            acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        total.returns.iter_mut().zip(&term.returns).for_each(|(a, b)| *a += b);
    }
    total.per_agent.iter_mut().flatten().for_each(|v| *v /= n);
    total.returns.iter_mut().for_each(|v| *v /= n);
    Ok(total)
}

/// Chain rule through the objective evaluated at `(1 - gamma) * returns`:
/// `sum_k (1 - gamma) * df/dx_k * grad J^k`.
pub fn joint_gradient(
    f: &ObjectiveFunction,
    returns: &[f64],
    per_agent: &[Vec<f64>],
    gamma: f64,
) -> Result<Vec<f64>, PgError> {
    if returns.len() != per_agent.len() || returns.is_empty() {
        return Err(PgError::DimensionMismatch(format!(
            "{} returns for {} gradient rows",
            returns.len(),
            per_agent.len()
        )));
    }
    let n_params = per_agent[0].len();
    if per_agent.iter().any(|g| g.len() != n_params) {
        return Err(PgError::DimensionMismatch("gradient rows differ in length".into()));
    }
    let scale = 1.0 - gamma;
    let x: Vec<f64> = returns.iter().map(|j| scale * j).collect();
    let outer = f.gradient(&x)?;
    let mut out = vec![0.0; n_params];
    for (w, g) in outer.iter().zip(per_agent) {
        let w = scale * w;
        for (o, v) in out.iter_mut().zip(g) {
            *o += w * v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct AdamState {
    first: Vec<f64>,
    second: Vec<f64>,
    steps: i32,
}

fn ascend(params: &mut [f64], grad: &[f64], cfg: &PgConfig, adam: &mut AdamState) {
    if cfg.learning_rate == 0.0 {
        return;
    }
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (p, g) in params.iter_mut().zip(grad) {
                *p += cfg.learning_rate * g;
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            adam.steps += 1;
            let c1 = 1.0 - beta1.powi(adam.steps);
            let c2 = 1.0 - beta2.powi(adam.steps);
            for i in 0..params.len() {
                adam.first[i] = beta1 * adam.first[i] + (1.0 - beta1) * grad[i];
                adam.second[i] = beta2 * adam.second[i] + (1.0 - beta2) * grad[i] * grad[i];
                let m = adam.first[i] / c1;
                let v = adam.second[i] / c2;
                params[i] += cfg.learning_rate * m / (v.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `f((1 - gamma) * returns)`
    pub f_value: f64,
    pub returns: Vec<f64>,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    /// Columns `epoch, f_value, J1..JK, grad_norm`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), PgError> {
        let mut out = csv::Writer::from_writer(writer);
        let k = self.records.first().map_or(0, |r| r.returns.len());
        let mut header = vec!["epoch".to_string(), "f_value".into()];
        header.extend((1..=k).map(|i| format!("J{i}")));
        header.push("grad_norm".into());
        out.write_record(&header)?;
        for rec in &self.records {
            let mut row = vec![rec.epoch.to_string(), rec.f_value.to_string()];
            row.extend(rec.returns.iter().map(f64::to_string));
            row.push(rec.grad_norm.to_string());
            out.write_record(&row)?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedPolicy {
    pub policy: MlpPolicy,
    pub log: TrainingLog,
}

/// Runs `cfg.epochs` rounds of collect, estimate, chain rule and ascent.
/// The network is initialized from stream 0 of `rng_seed`; epoch `e`
/// collects its batch with stream `e + 1`.
pub fn train<E>(env: &E, f: &ObjectiveFunction, cfg: &PgConfig, rng_seed: u64) -> Result<TrainedPolicy, PgError>
where
    E: Environment + Clone + Send + Sync,
{
    cfg.validate()?;
    let mut layers = vec![env.observation_dim()];
    layers.extend(&cfg.hidden);
    layers.push(env.n_actions());
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, 0));
    let mut policy = MlpPolicy::new(layers, &mut init_rng)?;
    let n_params = policy.n_params();
    let mut adam = AdamState {
        first: vec![0.0; n_params],
        second: vec![0.0; n_params],
        steps: 0,
    };
    let mut log = TrainingLog::default();
    for epoch in 0..cfg.epochs {
        let batch = collect_trajectories(
            env,
            &policy,
            cfg.batch_size,
            cfg.horizon,
            derive_seed(rng_seed, epoch as u64 + 1),
        )?;
        let estimate = estimate_grad_j(&batch, &policy, cfg.gamma)?;
        let grad = joint_gradient(f, &estimate.returns, &estimate.per_agent, cfg.gamma)?;
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(PgError::NonFiniteGradient {
                epoch,
                detail: format!("component {i} is {}; returns {:?}", grad[i], estimate.returns),
            });
        }
        let x: Vec<f64> = estimate.returns.iter().map(|j| (1.0 - cfg.gamma) * j).collect();
        log.records.push(EpochRecord {
            epoch,
            f_value: f.evaluate(&x)?,
            returns: estimate.returns,
            grad_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
        });
        ascend(policy.params_mut(), &grad, cfg, &mut adam);
    }
    Ok(TrainedPolicy { policy, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::TabularMdpEnv;
    use crate::mdp::TabularMdp;

    fn bandit(rewards: Vec<f64>, agents: usize) -> TabularMdpEnv {
        let actions = rewards.len() / agents;
        let mdp = TabularMdp::new(1, actions, agents, vec![1.0; actions], rewards, 0.9, vec![1.0]).unwrap();
        TabularMdpEnv::new(mdp, 0)
    }

    fn small_policy(seed: u64) -> MlpPolicy {
        MlpPolicy::new(vec![1, 4, 2], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn zero_trajectories_is_empty() {
        let env = bandit(vec![1.0, 0.0], 1);
        assert!(collect_trajectories(&env, &small_policy(0), 0, 5, 1).unwrap().is_empty());
        assert!(matches!(estimate_grad_j(&[], &small_policy(0), 0.9), Err(PgError::EmptyBatch)));
    }

    #[test]
    fn observation_mismatch_is_reported() {
        let env = bandit(vec![1.0, 0.0], 1);
        let policy = MlpPolicy::new(vec![3, 2], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(
            collect_trajectories(&env, &policy, 1, 1, 0),
            Err(PgError::ObservationDimMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn zero_rewards_give_zero_gradient() {
        let env = bandit(vec![0.0, 0.0], 1);
        let policy = small_policy(1);
        let trajs = collect_trajectories(&env, &policy, 4, 6, 2).unwrap();
        let est = estimate_grad_j(&trajs, &policy, 0.9).unwrap();
        assert!(est.per_agent[0].iter().all(|&g| g == 0.0));
        assert_eq!(est.returns, vec![0.0]);
    }

    #[test]
    fn single_step_bandit_gradient() {
        let env = bandit(vec![1.0, 0.0], 1);
        let policy = small_policy(3);
        let trajs = collect_trajectories(&env, &policy, 10, 1, 4).unwrap();
        let est = estimate_grad_j(&trajs, &policy, 0.7).unwrap();
        let mut expected = vec![0.0; policy.n_params()];
        for traj in &trajs {
            if traj.steps[0].action == 0 {
                let g = policy.grad_log_prob(&[1.0], 0);
                expected.iter_mut().zip(&g).for_each(|(e, v)| *e += v / 10.0);
            }
        }
        for (a, b) in est.per_agent[0].iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn chain_rule_weights() {
        let stacks = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let gamma = 0.9;
        let returns = [0.5 / (1.0 - gamma), 0.25 / (1.0 - gamma)];
        let g = joint_gradient(&ObjectiveFunction::proportional_fair(), &returns, &stacks, gamma).unwrap();
        assert!((g[0] - 2.0 * (1.0 - gamma)).abs() < 1e-12);
        assert!((g[1] - 4.0 * (1.0 - gamma)).abs() < 1e-12);
        assert!(joint_gradient(&ObjectiveFunction::proportional_fair(), &returns[..1], &stacks, gamma).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let env = bandit(vec![1.0, 0.0], 1);
        let cfg = PgConfig {
            batch_size: 2,
            learning_rate: 0.0,
            horizon: 3,
            epochs: 3,
            hidden: vec![4],
            ..PgConfig::default()
        };
        let trained = train(&env, &ObjectiveFunction::identity(), &cfg, 7).unwrap();
        let fresh = small_policy(derive_seed(7, 0));
        assert_eq!(trained.policy.params(), fresh.params());
    }

    #[test]
    fn bandit_training_prefers_paying_action() {
        let env = bandit(vec![1.0, 0.0], 1);
        let cfg = PgConfig {
            batch_size: 16,
            learning_rate: 0.05,
            gamma: 0.9,
            horizon: 10,
            epochs: 150,
            hidden: vec![8],
            ..PgConfig::default()
        };
        let trained = train(&env, &ObjectiveFunction::identity(), &cfg, 1).unwrap();
        assert!(trained.policy.probabilities(&[1.0])[0] > 0.95);
    }

    #[test]
    fn training_log_csv_layout() {
        let log = TrainingLog {
            records: vec![EpochRecord {
                epoch: 0,
                f_value: 0.5,
                returns: vec![1.0, 2.0],
                grad_norm: 0.25,
            }],
        };
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,f_value,J1,J2,grad_norm\n0,0.5,1,2,0.25\n");
    }
}
