//! Finite MDPs with K per-agent reward tables, tabular policies, exact
//! stationary evaluation and Pareto dominance.
//!
//! Storage is flat and row-major:
//! - transition kernel indexed `(s, a, s')` at `(s * A + a) * S + s'`
//! - reward table of agent `k` at `k * S * A + s * A + a`

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const PROB_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),
    #[error("reward r^{agent}({state}, {action}) = {value} is outside [0, 1]")]
    RewardOutOfRange {
        agent: usize,
        state: usize,
        action: usize,
        value: f64,
    },
    #[error("discount factor {0} is outside (0, 1)")]
    InvalidDiscount(f64),
    #[error("policy-induced chain did not reach a steady state within {iterations} iterations (residual {residual:e})")]
    NonErgodicChain { iterations: usize, residual: f64 },
}

fn check_distribution(row: &[f64], what: impl FnOnce() -> String) -> Result<(), MdpError> {
    let sum: f64 = row.iter().sum();
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > PROB_TOLERANCE {
        return Err(MdpError::InvalidDistribution(format!(
            "{} (sum = {sum})",
            what()
        )));
    }
    Ok(())
}

/// A finite multi-agent MDP `(S, A, P, K, r^1..r^K, gamma, rho0, D)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    n_agents: usize,
    transition: Vec<f64>,
    rewards: Vec<f64>,
    discount: f64,
    initial_dist: Vec<f64>,
    diameter: Option<f64>,
}

impl TabularMdp {
    /// Builds and validates an MDP from flat arrays (layout described in the
    /// module docs).
    pub fn new(
        n_states: usize,
        n_actions: usize,
        n_agents: usize,
        transition: Vec<f64>,
        rewards: Vec<f64>,
        discount: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self, MdpError> {
        if n_states == 0 || n_actions == 0 || n_agents == 0 {
            return Err(MdpError::DimensionMismatch(
                "state, action and agent counts must be positive".into(),
            ));
        }
        let sa = n_states * n_actions;
        if transition.len() != sa * n_states {
            return Err(MdpError::DimensionMismatch(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                sa * n_states
            )));
        }
        if rewards.len() != n_agents * sa {
            return Err(MdpError::DimensionMismatch(format!(
                "rewards have {} entries, expected {}",
                rewards.len(),
                n_agents * sa
            )));
        }
        if initial_dist.len() != n_states {
            return Err(MdpError::DimensionMismatch(format!(
                "initial distribution has {} entries, expected {n_states}",
                initial_dist.len()
            )));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(MdpError::InvalidDiscount(discount));
        }
        for (i, row) in transition.chunks(n_states).enumerate() {
            check_distribution(row, || {
                format!("P({}, {}, .)", i / n_actions, i % n_actions)
            })?;
        }
        for (i, &value) in rewards.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(MdpError::RewardOutOfRange {
                    agent: i / sa,
                    state: (i % sa) / n_actions,
                    action: i % n_actions,
                    value,
                });
            }
        }
        check_distribution(&initial_dist, || "initial distribution".into())?;
        Ok(Self {
            n_states,
            n_actions,
            n_agents,
            transition,
            rewards,
            discount,
            initial_dist,
            diameter: None,
        })
    }

    pub fn with_diameter(mut self, diameter: f64) -> Self {
        self.diameter = Some(diameter);
        self
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

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn diameter(&self) -> Option<f64> {
        self.diameter
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn reward(&self, agent: usize, s: usize, a: usize) -> f64 {
        self.rewards[agent * self.n_states * self.n_actions + s * self.n_actions + a]
    }

    /// Reward table of one agent, indexed `s * A + a`.
    pub fn agent_rewards(&self, agent: usize) -> &[f64] {
        let sa = self.n_states * self.n_actions;
        &self.rewards[agent * sa..(agent + 1) * sa]
    }

    /// Policy-induced state chain `P_pi(s, s') = sum_a pi(a|s) P(s, a, s')`.
    pub fn induced_chain(&self, policy: &TabularPolicy) -> Vec<f64> {
        let n = self.n_states;
        let mut chain = vec![0.0; n * n];
        for s in 0..n {
            for a in 0..self.n_actions {
                let w = policy.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                for (dst, p) in chain[s * n..(s + 1) * n]
                    .iter_mut()
                    .zip(self.transition_row(s, a))
                {
                    *dst += w * p;
                }
            }
        }
        chain
    }

    fn check_policy(&self, policy: &TabularPolicy) -> Result<(), MdpError> {
        if policy.n_states() != self.n_states || policy.n_actions() != self.n_actions {
            return Err(MdpError::DimensionMismatch(format!(
                "policy is {}x{}, MDP is {}x{}",
                policy.n_states(),
                policy.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }
}

/// JSON-facing layout of [`TabularMdp`]: nested arrays instead of flat ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_agents: usize,
    pub gamma: f64,
    /// `transition[s][a][s']`
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `rewards[k][s][a]`
    pub rewards: Vec<Vec<Vec<f64>>>,
    pub initial_dist: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diameter: Option<f64>,
}

impl TryFrom<MdpDocument> for TabularMdp {
    type Error = MdpError;

    fn try_from(doc: MdpDocument) -> Result<Self, Self::Error> {
        let shape_err = |what: &str| MdpError::DimensionMismatch(format!("{what} has the wrong shape"));
        if doc.transition.len() != doc.n_states
            || doc.transition.iter().any(|rows| {
                rows.len() != doc.n_actions || rows.iter().any(|r| r.len() != doc.n_states)
            })
        {
            return Err(shape_err("transition"));
        }
        if doc.rewards.len() != doc.n_agents
            || doc.rewards.iter().any(|table| {
                table.len() != doc.n_states || table.iter().any(|r| r.len() != doc.n_actions)
            })
        {
            return Err(shape_err("rewards"));
        }
        let transition = doc.transition.into_iter().flatten().flatten().collect();
        let rewards = doc.rewards.into_iter().flatten().flatten().collect();
        let mdp = TabularMdp::new(
            doc.n_states,
            doc.n_actions,
            doc.n_agents,
            transition,
            rewards,
            doc.gamma,
            doc.initial_dist,
        )?;
        Ok(match doc.diameter {
            Some(d) => mdp.with_diameter(d),
            None => mdp,
        })
    }
}

impl From<TabularMdp> for MdpDocument {
    fn from(mdp: TabularMdp) -> Self {
        let (s, a) = (mdp.n_states, mdp.n_actions);
        let transition = mdp
            .transition
            .chunks(s * a)
            .map(|per_state| per_state.chunks(s).map(<[f64]>::to_vec).collect())
            .collect();
        let rewards = mdp
            .rewards
            .chunks(s * a)
            .map(|table| table.chunks(a).map(<[f64]>::to_vec).collect())
            .collect();
        MdpDocument {
            n_states: s,
            n_actions: a,
            n_agents: mdp.n_agents,
            gamma: mdp.discount,
            transition,
            rewards,
            initial_dist: mdp.initial_dist,
            diameter: mdp.diameter,
        }
    }
}

/// Stochastic stationary policy `pi(a|s)`, stored row-major by state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self, MdpError> {
        if n_states == 0 || n_actions == 0 || probs.len() != n_states * n_actions {
            return Err(MdpError::DimensionMismatch(format!(
                "policy table has {} entries for {n_states} states x {n_actions} actions",
                probs.len()
            )));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            check_distribution(row, || format!("pi(.|{s})"))?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Draws an independent uniformly distributed point of the simplex per state.
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Self {
        let mut probs = Vec::with_capacity(n_states * n_actions);
        for _ in 0..n_states {
            let row: Vec<f64> = (0..n_actions)
                .map(|_| -(1.0 - rng.gen::<f64>()).ln())
                .collect();
            let total: f64 = row.iter().sum();
            probs.extend(row.into_iter().map(|x| x / total));
        }
        Self {
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Inverse-CDF draw; consumes exactly one uniform variate.
    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        sample_index(self.row(s), rng)
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the last partial sum; fall back to the last
    // action with positive mass
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

/// Stationary joint state-action distribution `d(s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OccupancyDocument", into = "OccupancyDocument")]
pub struct OccupancyMeasure {
    n_states: usize,
    n_actions: usize,
    d: Vec<f64>,
}

impl OccupancyMeasure {
    pub fn new(n_states: usize, n_actions: usize, d: Vec<f64>) -> Result<Self, MdpError> {
        if d.len() != n_states * n_actions {
            return Err(MdpError::DimensionMismatch(format!(
                "occupancy has {} entries, expected {}",
                d.len(),
                n_states * n_actions
            )));
        }
        Ok(Self {
            n_states,
            n_actions,
            d,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.d[s * self.n_actions + a]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.d
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.d
    }

    pub fn state_marginal(&self) -> Vec<f64> {
        self.d.chunks(self.n_actions).map(|r| r.iter().sum()).collect()
    }

    /// `lambda^k = sum_{s,a} r^k(s,a) d(s,a)` for every agent.
    pub fn average_rewards(&self, mdp: &TabularMdp) -> Vec<f64> {
        (0..mdp.n_agents())
            .map(|k| {
                mdp.agent_rewards(k)
                    .iter()
                    .zip(&self.d)
                    .map(|(r, d)| r * d)
                    .sum()
            })
            .collect()
    }

    /// Largest absolute violation of the flow-balance equalities.
    pub fn flow_residual(&self, mdp: &TabularMdp) -> f64 {
        let n = self.n_states;
        let mut inflow = vec![0.0; n];
        for s in 0..n {
            for a in 0..self.n_actions {
                let mass = self.get(s, a);
                for (acc, p) in inflow.iter_mut().zip(mdp.transition_row(s, a)) {
                    *acc += p * mass;
                }
            }
        }
        self.state_marginal()
            .iter()
            .zip(&inflow)
            .map(|(out, inn)| (out - inn).abs())
            .fold(0.0, f64::max)
    }

    pub fn total_mass(&self) -> f64 {
        self.d.iter().sum()
    }

    pub fn l1_distance(&self, other: &OccupancyMeasure) -> f64 {
        self.d.iter().zip(&other.d).map(|(a, b)| (a - b).abs()).sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OccupancyDocument {
    n_states: usize,
    n_actions: usize,
    /// `d[s][a]`
    d: Vec<Vec<f64>>,
}

impl TryFrom<OccupancyDocument> for OccupancyMeasure {
    type Error = MdpError;

    fn try_from(doc: OccupancyDocument) -> Result<Self, Self::Error> {
        if doc.d.len() != doc.n_states || doc.d.iter().any(|r| r.len() != doc.n_actions) {
            return Err(MdpError::DimensionMismatch("occupancy has the wrong shape".into()));
        }
        OccupancyMeasure::new(doc.n_states, doc.n_actions, doc.d.concat())
    }
}

impl From<OccupancyMeasure> for OccupancyDocument {
    fn from(m: OccupancyMeasure) -> Self {
        OccupancyDocument {
            n_states: m.n_states,
            n_actions: m.n_actions,
            d: m.d.chunks(m.n_actions).map(<[f64]>::to_vec).collect(),
        }
    }
}

/// Exact long-run behaviour of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEvaluation {
    pub steady_state: Vec<f64>,
    pub occupancy: OccupancyMeasure,
    pub avg_rewards: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateConfig {
    /// L1 bound on `||d P_pi - d||`.
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for SteadyStateConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iters: 1_000_000,
        }
    }
}

/// Stationary distribution of the policy-induced chain by power iteration.
pub fn steady_state(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<PolicyEvaluation, MdpError> {
    steady_state_with(mdp, policy, SteadyStateConfig::default())
}

pub fn steady_state_with(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    config: SteadyStateConfig,
) -> Result<PolicyEvaluation, MdpError> {
    mdp.check_policy(policy)?;
    let n = mdp.n_states();
    let chain = mdp.induced_chain(policy);
    let stationary = power_iteration(&chain, n, config)?;

    let mut occupancy = vec![0.0; n * mdp.n_actions()];
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            occupancy[s * mdp.n_actions() + a] = stationary[s] * policy.prob(s, a);
        }
    }
    let occupancy = OccupancyMeasure::new(n, mdp.n_actions(), occupancy)?;
    let avg_rewards = occupancy.average_rewards(mdp);
    Ok(PolicyEvaluation {
        steady_state: stationary,
        occupancy,
        avg_rewards,
    })
}

fn left_multiply(d: &[f64], chain: &[f64], n: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for (s, &mass) in d.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        for (o, p) in out.iter_mut().zip(&chain[s * n..(s + 1) * n]) {
            *o += mass * p;
        }
    }
}

/// Iterates the lazy chain `(I + P) / 2`, which shares the stationary
/// distribution of `P` and is aperiodic whenever `P` is irreducible.
fn power_iteration(chain: &[f64], n: usize, config: SteadyStateConfig) -> Result<Vec<f64>, MdpError> {
    let mut d = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..config.max_iters {
        left_multiply(&d, chain, n, &mut next);
        residual = next.iter().zip(&d).map(|(a, b)| (a - b).abs()).sum();
        if residual <= config.tolerance {
            return Ok(d);
        }
        let mut total = 0.0;
        for (x, y) in d.iter_mut().zip(&next) {
            *x = 0.5 * (*x + y);
            total += *x;
        }
        d.iter_mut().for_each(|x| *x /= total);
    }
    Err(MdpError::NonErgodicChain {
        iterations: config.max_iters,
        residual,
    })
}

const STRICT_TOLERANCE: f64 = 1e-12;

/// `a` Pareto-dominates `b`: no component worse, at least one strictly better.
pub fn pareto_dominates(a: &[f64], b: &[f64]) -> Result<bool, MdpError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(MdpError::DimensionMismatch(format!(
            "reward vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let no_worse = a.iter().zip(b).all(|(x, y)| x >= y);
    let some_better = a.iter().zip(b).any(|(x, y)| x - y > STRICT_TOLERANCE);
    Ok(no_worse && some_better)
}

/// True iff no policy in `grid` yields an average-reward vector that
/// dominates `candidate`.
pub fn verify_pareto_front(
    mdp: &TabularMdp,
    candidate: &[f64],
    policy_grid: &[TabularPolicy],
) -> Result<bool, MdpError> {
    for policy in policy_grid {
        let eval = steady_state(mdp, policy)?;
        if pareto_dominates(&eval.avg_rewards, candidate)? {
            return Ok(false);
        }
    }
    Ok(true)
}
