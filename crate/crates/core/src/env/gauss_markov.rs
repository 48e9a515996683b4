use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_action, EnvError, Environment, Step};
use crate::sampling::standard_normal;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussMarkovConfig {
    /// Mean SNR multiplier per agent.
    pub power: Vec<f64>,
    pub beta: f64,
}

impl GaussMarkovConfig {
    /// `P_k = k^-0.2` for `k = 1..=agents`.
    pub fn new(agents: usize, beta: f64) -> Self {
        Self {
            power: (1..=agents).map(|k| (k as f64).powf(-0.2)).collect(),
            beta,
        }
    }
}

/// Cellular scheduler over AR(1) real channels
/// `X_t = sqrt(1 - beta^2) X_{t-1} + beta * eps_t`; the scheduled agent is
/// paid `P_k X_k^2` (unnormalized). Observations are the current rates.
#[derive(Debug, Clone)]
pub struct GaussMarkovEnv {
    config: GaussMarkovConfig,
    channels: Vec<f64>,
    rng: ChaCha8Rng,
}

impl GaussMarkovEnv {
    pub fn new(config: GaussMarkovConfig, seed: u64) -> Result<Self, EnvError> {
        if config.power.is_empty() {
            return Err(EnvError::InvalidConfig("need at least one agent".into()));
        }
        if !(0.0..=1.0).contains(&config.beta) {
            return Err(EnvError::InvalidConfig(format!("beta {} outside [0, 1]", config.beta)));
        }
        let k = config.power.len();
        let mut env = Self {
            config,
            channels: vec![0.0; k],
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        env.reset();
        Ok(env)
    }

    pub fn channels(&self) -> &[f64] {
        &self.channels
    }

    fn rates(&self) -> Vec<f64> {
        self.channels
            .iter()
            .zip(&self.config.power)
            .map(|(x, p)| p * x * x)
            .collect()
    }

    fn evolve(&mut self) {
        let keep = (1.0 - self.config.beta * self.config.beta).sqrt();
        for i in 0..self.channels.len() {
            let eps = standard_normal(&mut self.rng);
            self.channels[i] = keep * self.channels[i] + self.config.beta * eps;
        }
    }
}

impl Environment for GaussMarkovEnv {
    fn n_agents(&self) -> usize {
        self.channels.len()
    }

    fn n_actions(&self) -> usize {
        self.channels.len()
    }

    fn observation_dim(&self) -> usize {
        self.channels.len()
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn reset(&mut self) -> Vec<f64> {
        for i in 0..self.channels.len() {
            self.channels[i] = standard_normal(&mut self.rng);
        }
        self.rates()
    }

    fn step(&mut self, action: usize) -> Result<Step, EnvError> {
        check_action(action, self.channels.len())?;
        let mut rewards = vec![0.0; self.channels.len()];
        rewards[action] = self.config.power[action] * self.channels[action].powi(2);
        self.evolve();
        Ok(Step {
            rewards,
            observation: self.rates(),
        })
    }

    fn current_rates(&self) -> Option<Vec<f64>> {
        Some(self.rates())
    }
}
