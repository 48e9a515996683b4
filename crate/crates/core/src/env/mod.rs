//! Simulation environments: finite cellular scheduling, Gauss-Markov
//! cellular scheduling, the multi-queue QoE system, and a generic wrapper
//! that simulates any [`TabularMdp`].

mod cellular;
mod gauss_markov;
mod queue;

pub use cellular::{CellularConfig, CellularFiniteEnv, ChannelState, STANDARD_RATES};
pub use gauss_markov::{GaussMarkovConfig, GaussMarkovEnv};
pub use queue::{qoe, MultiQueueConfig, MultiQueueEnv, QueueStats, HIGH_LOAD_ARRIVALS, LOW_LOAD_ARRIVALS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{sample_index, MdpDocument, MdpError, TabularMdp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("action {action} is out of range for {n_actions} actions")]
    InvalidAction { action: usize, n_actions: usize },
    #[error("invalid environment configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub rewards: Vec<f64>,
    pub observation: Vec<f64>,
}

/// Episodic simulator seen through real-valued observations.
///
/// Implementations own their random stream; `reseed` followed by `reset`
/// makes an episode fully reproducible.
pub trait Environment {
    fn n_agents(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn observation_dim(&self) -> usize;
    fn reseed(&mut self, seed: u64);
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<Step, EnvError>;

    /// Factor converting rewards to reporting units (e.g. normalized rates
    /// back to Mbps).
    fn reward_scale(&self) -> f64 {
        1.0
    }

    /// Reward each agent would receive if scheduled now, for rate-based
    /// schedulers.
    fn current_rates(&self) -> Option<Vec<f64>> {
        None
    }

    fn queue_lengths(&self) -> Option<Vec<usize>> {
        None
    }
}

/// Environment with a finite state space indexed `0..n_states`.
pub trait TabularEnvironment: Environment {
    fn n_states(&self) -> usize;
    fn state(&self) -> usize;
    fn reset_state(&mut self) -> usize;
    fn step_state(&mut self, action: usize) -> Result<(Vec<f64>, usize), EnvError>;

    /// Exact model, when the environment can provide one.
    fn ground_truth(&self) -> Option<TabularMdp> {
        None
    }
}

pub(crate) fn check_action(action: usize, n_actions: usize) -> Result<(), EnvError> {
    if action >= n_actions {
        return Err(EnvError::InvalidAction { action, n_actions });
    }
    Ok(())
}

/// Simulates a known [`TabularMdp`]; observations are one-hot states.
#[derive(Debug, Clone)]
pub struct TabularMdpEnv {
    mdp: TabularMdp,
    state: usize,
    rng: ChaCha8Rng,
}

impl TabularMdpEnv {
    pub fn new(mdp: TabularMdp, seed: u64) -> Self {
        Self {
            mdp,
            state: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.mdp.n_states()];
        v[self.state] = 1.0;
        v
    }
}

impl Environment for TabularMdpEnv {
    fn n_agents(&self) -> usize {
        self.mdp.n_agents()
    }

    fn n_actions(&self) -> usize {
        self.mdp.n_actions()
    }

    fn observation_dim(&self) -> usize {
        self.mdp.n_states()
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn reset(&mut self) -> Vec<f64> {
        self.reset_state();
        self.one_hot()
    }

    fn step(&mut self, action: usize) -> Result<Step, EnvError> {
        let (rewards, _) = self.step_state(action)?;
        Ok(Step {
            rewards,
            observation: self.one_hot(),
        })
    }

    /// Scheduling view: when actions correspond one-to-one with agents,
    /// agent `k`'s rate is what action `k` would pay it.
    fn current_rates(&self) -> Option<Vec<f64>> {
        (self.mdp.n_actions() == self.mdp.n_agents()).then(|| {
            (0..self.mdp.n_agents())
                .map(|k| self.mdp.reward(k, self.state, k))
                .collect()
        })
    }
}

impl TabularEnvironment for TabularMdpEnv {
    fn n_states(&self) -> usize {
        self.mdp.n_states()
    }

    fn state(&self) -> usize {
        self.state
    }

    fn reset_state(&mut self) -> usize {
        self.state = sample_index(self.mdp.initial_dist(), &mut self.rng);
        self.state
    }

    fn step_state(&mut self, action: usize) -> Result<(Vec<f64>, usize), EnvError> {
        check_action(action, self.mdp.n_actions())?;
        let rewards = (0..self.mdp.n_agents())
            .map(|k| self.mdp.reward(k, self.state, action))
            .collect();
        self.state = sample_index(self.mdp.transition_row(self.state, action), &mut self.rng);
        Ok((rewards, self.state))
    }

    fn ground_truth(&self) -> Option<TabularMdp> {
        Some(self.mdp.clone())
    }
}

/// Environment block of an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Cellular {
        agents: usize,
        /// `[good, bad]` rate per agent in Mbps; defaults to the standard table
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rates: Option<Vec<[f64; 2]>>,
        #[serde(default = "default_stay")]
        stay_probability: f64,
    },
    GaussMarkov {
        #[serde(default = "default_gm_agents")]
        agents: usize,
        #[serde(default = "default_beta")]
        beta: f64,
    },
    Queue {
        /// Number of queues, taken from the head of the arrival table.
        agents: usize,
        #[serde(default)]
        preset: QueuePreset,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        arrival_rates: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        capacity: Option<usize>,
    },
    Tabular {
        mdp: MdpDocument,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueuePreset {
    /// High-load arrivals, capacity 100.
    #[default]
    HighLoad,
    /// Low-load arrivals, capacity 10.
    LowLoad,
}

fn default_stay() -> f64 {
    0.8
}

fn default_gm_agents() -> usize {
    8
}

fn default_beta() -> f64 {
    0.1
}

impl EnvSpec {
    pub fn build(&self, seed: u64) -> Result<AnyEnv, EnvError> {
        Ok(match self {
            EnvSpec::Cellular {
                agents,
                rates,
                stay_probability,
            } => {
                let rates = match rates {
                    Some(r) => r.clone(),
                    None => {
                        if *agents == 0 || *agents > STANDARD_RATES.len() {
                            return Err(EnvError::InvalidConfig(format!(
                                "default rate table covers 1..={} agents, got {agents}",
                                STANDARD_RATES.len()
                            )));
                        }
                        STANDARD_RATES[..*agents].to_vec()
                    }
                };
                if rates.len() != *agents {
                    return Err(EnvError::InvalidConfig(format!(
                        "{} rate rows for {agents} agents",
                        rates.len()
                    )));
                }
                AnyEnv::Cellular(CellularFiniteEnv::new(
                    CellularConfig {
                        rates,
                        stay_probability: *stay_probability,
                    },
                    seed,
                )?)
            }
            EnvSpec::GaussMarkov { agents, beta } => AnyEnv::GaussMarkov(GaussMarkovEnv::new(
                GaussMarkovConfig::new(*agents, *beta),
                seed,
            )?),
            EnvSpec::Queue {
                agents,
                preset,
                arrival_rates,
                capacity,
            } => {
                let (table, default_capacity): (&[f64], usize) = match preset {
                    QueuePreset::HighLoad => (&HIGH_LOAD_ARRIVALS, 100),
                    QueuePreset::LowLoad => (&LOW_LOAD_ARRIVALS, 10),
                };
                let rates = match arrival_rates {
                    Some(r) => r.clone(),
                    None => {
                        if *agents == 0 || *agents > table.len() {
                            return Err(EnvError::InvalidConfig(format!(
                                "arrival table covers 1..={} queues, got {agents}",
                                table.len()
                            )));
                        }
                        table[..*agents].to_vec()
                    }
                };
                if rates.len() != *agents {
                    return Err(EnvError::InvalidConfig(format!(
                        "{} arrival rates for {agents} queues",
                        rates.len()
                    )));
                }
                AnyEnv::Queue(MultiQueueEnv::new(
                    MultiQueueConfig {
                        arrival_rates: rates,
                        capacity: capacity.unwrap_or(default_capacity),
                    },
                    seed,
                )?)
            }
            EnvSpec::Tabular { mdp } => {
                AnyEnv::Tabular(TabularMdpEnv::new(TabularMdp::try_from(mdp.clone())?, seed))
            }
        })
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, EnvSpec::Cellular { .. } | EnvSpec::Tabular { .. })
    }

    pub fn is_queue(&self) -> bool {
        matches!(self, EnvSpec::Queue { .. })
    }

    pub fn exposes_rates(&self) -> bool {
        match self {
            EnvSpec::Cellular { .. } | EnvSpec::GaussMarkov { .. } => true,
            EnvSpec::Tabular { mdp } => mdp.n_actions == mdp.n_agents,
            EnvSpec::Queue { .. } => false,
        }
    }

    pub fn agents(&self) -> usize {
        match self {
            EnvSpec::Cellular { agents, .. }
            | EnvSpec::GaussMarkov { agents, .. }
            | EnvSpec::Queue { agents, .. } => *agents,
            EnvSpec::Tabular { mdp } => mdp.n_agents,
        }
    }

    /// Sets the agent count for sweeps; returns false for kinds without one.
    pub fn set_agents(&mut self, k: usize) -> bool {
        match self {
            EnvSpec::Cellular { agents, .. }
            | EnvSpec::GaussMarkov { agents, .. }
            | EnvSpec::Queue { agents, .. } => {
                *agents = k;
                true
            }
            EnvSpec::Tabular { .. } => false,
        }
    }
}

/// Closed set of environments selectable from a config.
#[derive(Debug, Clone)]
pub enum AnyEnv {
    Cellular(CellularFiniteEnv),
    GaussMarkov(GaussMarkovEnv),
    Queue(MultiQueueEnv),
    Tabular(TabularMdpEnv),
}

impl AnyEnv {
    pub fn as_tabular(&self) -> Option<&dyn TabularEnvironment> {
        match self {
            AnyEnv::Cellular(e) => Some(e),
            AnyEnv::Tabular(e) => Some(e),
            AnyEnv::GaussMarkov(_) | AnyEnv::Queue(_) => None,
        }
    }

    pub fn as_tabular_mut(&mut self) -> Option<&mut dyn TabularEnvironment> {
        match self {
            AnyEnv::Cellular(e) => Some(e),
            AnyEnv::Tabular(e) => Some(e),
            AnyEnv::GaussMarkov(_) | AnyEnv::Queue(_) => None,
        }
    }
}

macro_rules! delegate {
    ($self:ident, $e:ident => $body:expr) => {
        match $self {
            AnyEnv::Cellular($e) => $body,
            AnyEnv::GaussMarkov($e) => $body,
            AnyEnv::Queue($e) => $body,
            AnyEnv::Tabular($e) => $body,
        }
    };
}

impl Environment for AnyEnv {
    fn n_agents(&self) -> usize {
        delegate!(self, e => e.n_agents())
    }

    fn n_actions(&self) -> usize {
        delegate!(self, e => e.n_actions())
    }

    fn observation_dim(&self) -> usize {
        delegate!(self, e => e.observation_dim())
    }

    fn reseed(&mut self, seed: u64) {
        delegate!(self, e => e.reseed(seed))
    }

    fn reset(&mut self) -> Vec<f64> {
        delegate!(self, e => e.reset())
    }

    fn step(&mut self, action: usize) -> Result<Step, EnvError> {
        delegate!(self, e => e.step(action))
    }

    fn reward_scale(&self) -> f64 {
        delegate!(self, e => e.reward_scale())
    }

    fn current_rates(&self) -> Option<Vec<f64>> {
        delegate!(self, e => e.current_rates())
    }

    fn queue_lengths(&self) -> Option<Vec<usize>> {
        delegate!(self, e => e.queue_lengths())
    }
}
