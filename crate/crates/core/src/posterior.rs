//! Model-based learning by posterior sampling.
//!
//! [`run_model_based`] keeps a Dirichlet posterior over every transition row,
//! and at each epoch boundary samples one kernel from it, solves the
//! occupancy program with the empirical rewards and switches to the
//! extracted policy.
//!
//! [`run_ops`] is the optimistic variant: per epoch it builds an extended MDP
//! whose actions are replicated `psi` times, each copy wired to its own
//! sampled (or optimistically shifted) kernel, and epochs end when the visit
//! count of the played pair doubles.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, TabularEnvironment};
use crate::mdp::{MdpError, TabularMdp, TabularPolicy};
use crate::objectives::ObjectiveFunction;
use crate::occupancy::{extract_policy, solve_occupancy, SolverConfig, SolverError};
use crate::sampling::dirichlet;

/// Discount stored on planning models; the average-reward program ignores it.
const PLANNING_DISCOUNT: f64 = 0.99;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("invalid learner configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint i/o: {0}")]
    Checkpoint(#[from] serde_json::Error),
    #[error("trajectory log i/o: {0}")]
    Csv(#[from] csv::Error),
}

/// Next-state visit counts with a unit prior, accumulated rewards, and the
/// scaled counts used by the optimistic variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletPosterior {
    n_states: usize,
    n_actions: usize,
    n_agents: usize,
    /// `N(s, a, s')`, prior mass 1 per entry
    counts: Vec<f64>,
    /// `sum of r^k` observed at `(s, a)`, indexed `k * S * A + s * A + a`
    reward_sums: Vec<f64>,
    /// observed transitions out of `(s, a)`
    visits: Vec<u64>,
    /// `M(s, a, s')`
    scaled_counts: Vec<f64>,
}

impl DirichletPosterior {
    pub fn new(n_states: usize, n_actions: usize, n_agents: usize) -> Self {
        let sas = n_states * n_actions * n_states;
        Self {
            n_states,
            n_actions,
            n_agents,
            counts: vec![1.0; sas],
            reward_sums: vec![0.0; n_agents * n_states * n_actions],
            visits: vec![0; n_states * n_actions],
            scaled_counts: vec![1.0; sas],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    fn pair(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    pub fn record(&mut self, s: usize, a: usize, rewards: &[f64], next: usize) {
        let pair = self.pair(s, a);
        self.counts[pair * self.n_states + next] += 1.0;
        self.visits[pair] += 1;
        let sa = self.n_states * self.n_actions;
        for (k, r) in rewards.iter().enumerate() {
            self.reward_sums[k * sa + pair] += r;
        }
    }

    pub fn visits(&self, s: usize, a: usize) -> u64 {
        self.visits[self.pair(s, a)]
    }

    pub fn visit_table(&self) -> &[u64] {
        &self.visits
    }

    pub fn total_steps(&self) -> u64 {
        self.visits.iter().sum()
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn count_row(&self, s: usize, a: usize) -> &[f64] {
        let start = self.pair(s, a) * self.n_states;
        &self.counts[start..start + self.n_states]
    }

    pub fn scaled_row(&self, s: usize, a: usize) -> &[f64] {
        let start = self.pair(s, a) * self.n_states;
        &self.scaled_counts[start..start + self.n_states]
    }

    /// `r_hat^k(s, a) / max(visits, 1)`; unvisited pairs estimate 0.
    pub fn reward_estimate(&self, k: usize, s: usize, a: usize) -> f64 {
        let pair = self.pair(s, a);
        let sa = self.n_states * self.n_actions;
        self.reward_sums[k * sa + pair] / self.visits[pair].max(1) as f64
    }

    /// All reward estimates in [`TabularMdp`] layout, clamped to `[0, 1]`.
    pub fn estimated_rewards(&self) -> Vec<f64> {
        let sa = self.n_states * self.n_actions;
        (0..self.n_agents * sa)
            .map(|i| {
                let pair = i % sa;
                (self.reward_sums[i] / self.visits[pair].max(1) as f64).clamp(0.0, 1.0)
            })
            .collect()
    }

    /// Sets every scaled count to `omega`.
    pub fn init_scaled(&mut self, omega: f64) {
        self.scaled_counts.iter_mut().for_each(|m| *m = omega);
    }

    /// `M(s, a, i) = (N(s, a, i) + omega) / kappa` with `N` the observed
    /// (prior-free) counts.
    pub fn refresh_scaled(&mut self, omega: f64, kappa: f64) {
        for (m, n) in self.scaled_counts.iter_mut().zip(&self.counts) {
            *m = (n - 1.0 + omega) / kappa;
        }
    }

    pub fn save<W: Write>(&self, writer: W) -> Result<(), LearnError> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    pub fn load<R: Read>(reader: R) -> Result<Self, LearnError> {
        Ok(serde_json::from_reader(reader)?)
    }
}

/// One kernel drawn row-by-row from the posterior, `(s, a, s')` layout.
pub fn sample_kernel(post: &DirichletPosterior, rng_seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut kernel = Vec::with_capacity(post.counts.len());
    for row in post.counts.chunks(post.n_states) {
        kernel.extend(dirichlet(row, &mut rng));
    }
    kernel
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EpochSchedule {
    /// Replan every `length` steps.
    Fixed { length: usize },
    /// Replan once the played pair's count (prior included) has doubled
    /// since the epoch began.
    Doubling,
}

impl Default for EpochSchedule {
    fn default() -> Self {
        EpochSchedule::Fixed { length: 100 }
    }
}

/// Parameters of the optimistic learner. Orders of magnitude come with unit
/// constants; every field can be overridden after construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpsConfig {
    pub delta: f64,
    /// Total steps `T`.
    pub horizon: usize,
    /// Posterior samples per pair.
    pub psi: usize,
    pub omega: f64,
    pub kappa: f64,
    /// Visit total at which a pair switches from optimistic to posterior
    /// sampling.
    pub optimism_threshold: f64,
}

impl OpsConfig {
    pub fn new(delta: f64, horizon: usize, n_states: usize, n_actions: usize) -> Result<Self, LearnError> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(LearnError::InvalidConfig(format!("delta {delta} outside (0, 1]")));
        }
        if horizon == 0 || n_states == 0 || n_actions == 0 {
            return Err(LearnError::InvalidConfig("horizon and dimensions must be positive".into()));
        }
        let (s, a, t) = (n_states as f64, n_actions as f64, horizon as f64);
        let psi = ((s * (s * a / delta).ln()).ceil() as usize).max(1);
        let omega = (t / delta).ln();
        Ok(Self {
            delta,
            horizon,
            psi,
            omega,
            kappa: omega,
            optimism_threshold: (t * s / a).sqrt() + 12.0 * omega * s * s,
        })
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        if self.psi == 0 {
            return Err(LearnError::InvalidConfig("psi must be at least 1".into()));
        }
        if !(self.omega > 0.0 && self.kappa > 0.0) {
            return Err(LearnError::InvalidConfig("omega and kappa must be positive".into()));
        }
        if !(self.optimism_threshold >= 0.0) {
            return Err(LearnError::InvalidConfig("optimism threshold must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Base MDP dimensions with `psi` sampled kernels per pair. Extended action
/// `a * psi + j` uses kernel `j` of base action `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedMdp {
    n_states: usize,
    n_actions: usize,
    psi: usize,
    /// `(s, a, j, s')` layout
    kernels: Vec<f64>,
    /// per pair: whether the optimistic branch produced its kernels
    optimistic: Vec<bool>,
}

impl ExtendedMdp {
    pub fn psi(&self) -> usize {
        self.psi
    }

    pub fn kernel(&self, s: usize, a: usize, j: usize) -> &[f64] {
        let start = ((s * self.n_actions + a) * self.psi + j) * self.n_states;
        &self.kernels[start..start + self.n_states]
    }

    pub fn is_optimistic(&self, s: usize, a: usize) -> bool {
        self.optimistic[s * self.n_actions + a]
    }

    /// Planning MDP over `A * psi` actions; `rewards` is in base layout.
    pub fn to_tabular(&self, n_agents: usize, rewards: &[f64]) -> Result<TabularMdp, MdpError> {
        let (ns, na, psi) = (self.n_states, self.n_actions, self.psi);
        let ext = na * psi;
        let mut ext_rewards = vec![0.0; n_agents * ns * ext];
        for k in 0..n_agents {
            for s in 0..ns {
                for a in 0..na {
                    let r = rewards[k * ns * na + s * na + a];
                    for j in 0..psi {
                        ext_rewards[k * ns * ext + s * ext + a * psi + j] = r;
                    }
                }
            }
        }
        TabularMdp::new(
            ns,
            ext,
            n_agents,
            self.kernels.clone(),
            ext_rewards,
            PLANNING_DISCOUNT,
            vec![1.0 / ns as f64; ns],
        )
    }

    /// Base-action policy obtained by summing over the sample index.
    pub fn marginalize(&self, policy: &TabularPolicy) -> TabularPolicy {
        let mut probs = vec![0.0; self.n_states * self.n_actions];
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                probs[s * self.n_actions + a] =
                    (0..self.psi).map(|j| policy.prob(s, a * self.psi + j)).sum();
            }
        }
        TabularPolicy::new(self.n_states, self.n_actions, probs)
            .expect("marginal of a valid policy is valid")
    }
}

fn optimistic_kernel<R: Rng + ?Sized>(counts: &[f64], rng: &mut R) -> Vec<f64> {
    let s = counts.len();
    let total: f64 = counts.iter().sum();
    let log_term = (4.0 * s as f64).ln();
    let mut lowered: Vec<f64> = counts
        .iter()
        .map(|c| {
            let p = c / total;
            let delta = ((3.0 * p * log_term / total).sqrt() + 3.0 * log_term / total).min(p);
            p - delta
        })
        .collect();
    let leftover = 1.0 - lowered.iter().sum::<f64>();
    lowered[rng.gen_range(0..s)] += leftover;
    lowered
}

pub fn build_extended_mdp(post: &DirichletPosterior, cfg: &OpsConfig, rng_seed: u64) -> ExtendedMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (ns, na, psi) = (post.n_states, post.n_actions, cfg.psi);
    let mut kernels = Vec::with_capacity(ns * na * psi * ns);
    let mut optimistic = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            let use_posterior = post.visits(s, a) as f64 >= cfg.optimism_threshold;
            optimistic.push(!use_posterior);
            for _ in 0..psi {
                if use_posterior {
                    kernels.extend(dirichlet(post.scaled_row(s, a), &mut rng));
                } else {
                    kernels.extend(optimistic_kernel(post.count_row(s, a), &mut rng));
                }
            }
        }
    }
    ExtendedMdp {
        n_states: ns,
        n_actions: na,
        psi,
        kernels,
        optimistic,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub t: usize,
    pub epoch: usize,
    pub state: usize,
    pub action: usize,
    pub rewards: Vec<f64>,
    pub next_state: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub n_agents: usize,
    pub records: Vec<TransitionRecord>,
}

impl TrajectoryLog {
    /// Columns `t, epoch, s, a, r1..rK, s_next`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), LearnError> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string(), "epoch".into(), "s".into(), "a".into()];
        header.extend((1..=self.n_agents).map(|k| format!("r{k}")));
        header.push("s_next".into());
        out.write_record(&header)?;
        for rec in &self.records {
            let mut row = vec![
                rec.t.to_string(),
                rec.epoch.to_string(),
                rec.state.to_string(),
                rec.action.to_string(),
            ];
            row.extend(rec.rewards.iter().map(f64::to_string));
            row.push(rec.next_state.to_string());
            out.write_record(&row)?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn total_rewards(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.n_agents];
        for rec in &self.records {
            for (t, r) in totals.iter_mut().zip(&rec.rewards) {
                *t += r;
            }
        }
        totals
    }
}

#[derive(Debug, Clone)]
pub struct LearningRun {
    pub policy: TabularPolicy,
    pub log: TrajectoryLog,
    pub posterior: DirichletPosterior,
    /// Completed epochs (number of replans).
    pub epochs: usize,
}

enum Planner<'a> {
    Posterior,
    Optimistic(&'a OpsConfig),
}

fn plan(
    post: &DirichletPosterior,
    f: &ObjectiveFunction,
    solver: &SolverConfig,
    planner: &Planner,
    seed: u64,
) -> Result<TabularPolicy, LearnError> {
    let rewards = post.estimated_rewards();
    match planner {
        Planner::Posterior => {
            let kernel = sample_kernel(post, seed);
            let mdp = TabularMdp::new(
                post.n_states,
                post.n_actions,
                post.n_agents,
                kernel,
                rewards,
                PLANNING_DISCOUNT,
                vec![1.0 / post.n_states as f64; post.n_states],
            )?;
            let solution = solve_occupancy(&mdp, f, solver)?;
            Ok(extract_policy(&solution.measure))
        }
        Planner::Optimistic(cfg) => {
            let extended = build_extended_mdp(post, cfg, seed);
            let mdp = extended.to_tabular(post.n_agents, &rewards)?;
            let solution = solve_occupancy(&mdp, f, solver)?;
            Ok(extended.marginalize(&extract_policy(&solution.measure)))
        }
    }
}

fn learn<E: TabularEnvironment + ?Sized>(
    env: &mut E,
    f: &ObjectiveFunction,
    schedule: EpochSchedule,
    solver: &SolverConfig,
    planner: Planner,
    total_steps: usize,
    rng_seed: u64,
) -> Result<LearningRun, LearnError> {
    solver.validate()?;
    if let EpochSchedule::Fixed { length: 0 } = schedule {
        return Err(LearnError::InvalidConfig("epoch length must be at least 1".into()));
    }
    let (ns, na, nk) = (env.n_states(), env.n_actions(), env.n_agents());
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut post = DirichletPosterior::new(ns, na, nk);
    if let Planner::Optimistic(cfg) = &planner {
        cfg.validate()?;
        post.init_scaled(cfg.omega);
    }
    // before any data every policy is optimal for the all-zero reward model,
    // so the first epoch runs the uniform policy
    let mut policy = TabularPolicy::uniform(ns, na);
    let mut log = TrajectoryLog {
        n_agents: nk,
        records: Vec::with_capacity(total_steps),
    };
    let mut epoch = 0;
    let mut epoch_steps = 0;
    let mut epoch_start_visits = post.visits.clone();

    let mut state = env.reset_state();
    for t in 0..total_steps {
        let action = policy.sample(state, &mut rng);
        let (rewards, next) = env.step_state(action)?;
        post.record(state, action, &rewards, next);
        if let Planner::Optimistic(cfg) = &planner {
            post.refresh_scaled(cfg.omega, cfg.kappa);
        }
        let pair = state * na + action;
        log.records.push(TransitionRecord {
            t,
            epoch,
            state,
            action,
            rewards,
            next_state: next,
        });
        state = next;
        epoch_steps += 1;

        let epoch_done = match schedule {
            EpochSchedule::Fixed { length } => epoch_steps >= length,
            EpochSchedule::Doubling => 1 + post.visits[pair] >= 2 * (1 + epoch_start_visits[pair]),
        };
        if epoch_done {
            let seed = rng.gen::<u64>();
            policy = plan(&post, f, solver, &planner, seed)?;
            epoch += 1;
            epoch_steps = 0;
            epoch_start_visits.copy_from_slice(&post.visits);
        }
    }
    Ok(LearningRun {
        policy,
        log,
        posterior: post,
        epochs: epoch,
    })
}

/// Posterior-sampling learner with occupancy-program planning.
pub fn run_model_based<E: TabularEnvironment + ?Sized>(
    env: &mut E,
    f: &ObjectiveFunction,
    schedule: EpochSchedule,
    solver: &SolverConfig,
    total_steps: usize,
    rng_seed: u64,
) -> Result<LearningRun, LearnError> {
    learn(env, f, schedule, solver, Planner::Posterior, total_steps, rng_seed)
}

/// Optimistic posterior-sampling learner over extended MDPs; runs for
/// `cfg.horizon` steps with doubling epochs.
pub fn run_ops<E: TabularEnvironment + ?Sized>(
    env: &mut E,
    f: &ObjectiveFunction,
    cfg: &OpsConfig,
    solver: &SolverConfig,
    rng_seed: u64,
) -> Result<LearningRun, LearnError> {
    learn(
        env,
        f,
        EpochSchedule::Doubling,
        solver,
        Planner::Optimistic(cfg),
        cfg.horizon,
        rng_seed,
    )
}
