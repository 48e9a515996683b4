use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_action, EnvError, Environment, Step, TabularEnvironment};
use crate::mdp::TabularMdp;

/// `[good, bad]` link rate in Mbps for up to six agents.
pub const STANDARD_RATES: [[f64; 2]; 6] = [
    [1.50, 0.768],
    [2.25, 1.00],
    [1.25, 0.384],
    [1.50, 1.12],
    [1.75, 0.384],
    [1.25, 1.12],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelState {
    Good = 0,
    Bad = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellularConfig {
    pub rates: Vec<[f64; 2]>,
    pub stay_probability: f64,
}

impl CellularConfig {
    pub fn standard(agents: usize) -> Self {
        Self {
            rates: STANDARD_RATES[..agents].to_vec(),
            stay_probability: 0.8,
        }
    }
}

/// Single-cell scheduler: each slot one agent gets the whole resource and
/// transmits at the rate of its current two-state channel.
///
/// Joint state index: bit `k` is set when agent `k`'s channel is bad.
/// Rewards are rates divided by the largest rate in the table so they lie
/// in `[0, 1]`; [`Environment::reward_scale`] undoes that.
#[derive(Debug, Clone)]
pub struct CellularFiniteEnv {
    config: CellularConfig,
    scale: f64,
    channels: Vec<ChannelState>,
    rng: ChaCha8Rng,
}

impl CellularFiniteEnv {
    pub fn new(config: CellularConfig, seed: u64) -> Result<Self, EnvError> {
        let k = config.rates.len();
        if k == 0 || k > 16 {
            return Err(EnvError::InvalidConfig(format!("agent count {k} outside 1..=16")));
        }
        if !(0.0..=1.0).contains(&config.stay_probability) {
            return Err(EnvError::InvalidConfig(format!(
                "stay probability {} outside [0, 1]",
                config.stay_probability
            )));
        }
        if config.rates.iter().flatten().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(EnvError::InvalidConfig("rates must be finite and nonnegative".into()));
        }
        let scale = config.rates.iter().flatten().copied().fold(0.0, f64::max);
        if scale <= 0.0 {
            return Err(EnvError::InvalidConfig("all rates are zero".into()));
        }
        let mut env = Self {
            config,
            scale,
            channels: vec![ChannelState::Good; k],
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        env.reset_state();
        Ok(env)
    }

    pub fn channels(&self) -> &[ChannelState] {
        &self.channels
    }

    /// Raw rate (Mbps) of agent `k` in its current channel state.
    pub fn raw_rate(&self, k: usize) -> f64 {
        self.config.rates[k][self.channels[k] as usize]
    }

    fn encode(&self) -> usize {
        self.channels
            .iter()
            .enumerate()
            .map(|(k, c)| (*c as usize) << k)
            .sum()
    }

    fn observation(&self) -> Vec<f64> {
        self.channels
            .iter()
            .map(|c| match c {
                ChannelState::Good => 1.0,
                ChannelState::Bad => -1.0,
            })
            .collect()
    }

    fn draw_channel(&mut self) -> ChannelState {
        if self.rng.gen::<bool>() {
            ChannelState::Good
        } else {
            ChannelState::Bad
        }
    }

    fn evolve_channels(&mut self) {
        for k in 0..self.channels.len() {
            if self.rng.gen::<f64>() >= self.config.stay_probability {
                self.channels[k] = self.draw_channel();
            }
        }
    }

    fn schedule(&mut self, action: usize) -> Result<Vec<f64>, EnvError> {
        let k = self.channels.len();
        check_action(action, k)?;
        let mut rewards = vec![0.0; k];
        rewards[action] = self.raw_rate(action) / self.scale;
        self.evolve_channels();
        Ok(rewards)
    }
}

impl Environment for CellularFiniteEnv {
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
        self.reset_state();
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<Step, EnvError> {
        let rewards = self.schedule(action)?;
        Ok(Step {
            rewards,
            observation: self.observation(),
        })
    }

    fn reward_scale(&self) -> f64 {
        self.scale
    }

    fn current_rates(&self) -> Option<Vec<f64>> {
        Some((0..self.channels.len()).map(|k| self.raw_rate(k) / self.scale).collect())
    }
}

impl TabularEnvironment for CellularFiniteEnv {
    fn n_states(&self) -> usize {
        1 << self.channels.len()
    }

    fn state(&self) -> usize {
        self.encode()
    }

    /// Channels start from the uniform (stationary) distribution.
    fn reset_state(&mut self) -> usize {
        for k in 0..self.channels.len() {
            self.channels[k] = self.draw_channel();
        }
        self.encode()
    }

    fn step_state(&mut self, action: usize) -> Result<(Vec<f64>, usize), EnvError> {
        let rewards = self.schedule(action)?;
        Ok((rewards, self.encode()))
    }

    fn ground_truth(&self) -> Option<TabularMdp> {
        let k = self.channels.len();
        let n = 1usize << k;
        let same = self.config.stay_probability + 0.5 * (1.0 - self.config.stay_probability);
        let mut transition = Vec::with_capacity(n * k * n);
        for s in 0..n {
            let row: Vec<f64> = (0..n)
                .map(|next| {
                    let flips = (s ^ next).count_ones() as i32;
                    same.powi(k as i32 - flips) * (1.0 - same).powi(flips)
                })
                .collect();
            for _ in 0..k {
                transition.extend_from_slice(&row);
            }
        }
        let mut rewards = vec![0.0; k * n * k];
        for agent in 0..k {
            for s in 0..n {
                let bad = (s >> agent) & 1;
                rewards[agent * n * k + s * k + agent] = self.config.rates[agent][bad] / self.scale;
            }
        }
        TabularMdp::new(n, k, k, transition, rewards, 0.99, vec![1.0 / n as f64; n]).ok()
    }
}
