use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_action, EnvError, Environment, Step};

/// High-load Bernoulli arrival rates (packets per step).
pub const HIGH_LOAD_ARRIVALS: [f64; 8] = [0.2, 0.1, 0.05, 0.25, 0.15, 0.21, 0.01, 0.3];
/// Low-load Bernoulli arrival rates (packets per step).
pub const LOW_LOAD_ARRIVALS: [f64; 8] = [0.014, 0.028, 0.042, 0.056, 0.069, 0.083, 0.097, 0.11];

/// Sigmoid quality of experience for a user that waited `w` steps:
/// `(1 - e^-3) / (1 + e^(w - 3))`.
pub fn qoe(wait: f64) -> f64 {
    (1.0 - (-3.0f64).exp()) / (1.0 + (wait - 3.0).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiQueueConfig {
    pub arrival_rates: Vec<f64>,
    pub capacity: usize,
}

/// Per-queue bookkeeping since the last reset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueueStats {
    pub arrivals: Vec<u64>,
    pub served: Vec<u64>,
    pub dropped: Vec<u64>,
}

/// K single-server queues sharing one unit-time server.
///
/// Each step: the selected queue (if nonempty) serves its head user, whose
/// wait `w` counts the steps from its arrival step to the service step
/// inclusive; then every queue receives a Bernoulli arrival, dropped when
/// the queue is full. The observation is `ln(1 + length)` per queue; waits
/// stay internal.
#[derive(Debug, Clone)]
pub struct MultiQueueEnv {
    config: MultiQueueConfig,
    /// arrival step of every waiting user, head first
    queues: Vec<VecDeque<u64>>,
    clock: u64,
    stats: QueueStats,
    rng: ChaCha8Rng,
}

impl MultiQueueEnv {
    pub fn new(config: MultiQueueConfig, seed: u64) -> Result<Self, EnvError> {
        if config.arrival_rates.is_empty() {
            return Err(EnvError::InvalidConfig("need at least one queue".into()));
        }
        if config.arrival_rates.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(EnvError::InvalidConfig("arrival rates must lie in [0, 1]".into()));
        }
        if config.capacity == 0 {
            return Err(EnvError::InvalidConfig("capacity must be positive".into()));
        }
        let k = config.arrival_rates.len();
        let mut env = Self {
            config,
            queues: vec![VecDeque::new(); k],
            clock: 0,
            stats: QueueStats::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        env.reset();
        Ok(env)
    }

    pub fn capacity(&self) -> usize {
        self.config.capacity
    }

    pub fn stats(&self) -> &QueueStats {
        &self.stats
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.queues.iter().map(VecDeque::len).collect()
    }

    fn observation(&self) -> Vec<f64> {
        self.queues.iter().map(|q| (q.len() as f64).ln_1p()).collect()
    }
}

impl Environment for MultiQueueEnv {
    fn n_agents(&self) -> usize {
        self.queues.len()
    }

    fn n_actions(&self) -> usize {
        self.queues.len()
    }

    fn observation_dim(&self) -> usize {
        self.queues.len()
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn reset(&mut self) -> Vec<f64> {
        let k = self.queues.len();
        self.queues.iter_mut().for_each(VecDeque::clear);
        self.clock = 0;
        self.stats = QueueStats {
            arrivals: vec![0; k],
            served: vec![0; k],
            dropped: vec![0; k],
        };
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<Step, EnvError> {
        let k = self.queues.len();
        check_action(action, k)?;
        let mut rewards = vec![0.0; k];
        // an empty queue wastes the slot
        if let Some(arrived) = self.queues[action].pop_front() {
            let wait = self.clock - arrived + 1;
            rewards[action] = qoe(wait as f64);
            self.stats.served[action] += 1;
        }
        for i in 0..k {
            if self.rng.gen::<f64>() < self.config.arrival_rates[i] {
                self.stats.arrivals[i] += 1;
                if self.queues[i].len() < self.config.capacity {
                    self.queues[i].push_back(self.clock);
                } else {
                    self.stats.dropped[i] += 1;
                }
            }
        }
        self.clock += 1;
        Ok(Step {
            rewards,
            observation: self.observation(),
        })
    }

    fn queue_lengths(&self) -> Option<Vec<usize>> {
        Some(self.lengths())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qoe_reference_values() {
        assert!((qoe(3.0) - 0.475_106_5).abs() < 1e-7);
        assert!((qoe(0.0) - 0.905_148_3).abs() < 1e-7);
    }

    #[test]
    fn empty_queue_pays_nothing() {
        let mut env = MultiQueueEnv::new(
            MultiQueueConfig {
                arrival_rates: vec![0.0, 0.0],
                capacity: 5,
            },
            1,
        )
        .unwrap();
        let step = env.step(1).unwrap();
        assert_eq!(step.rewards, vec![0.0, 0.0]);
        assert_eq!(env.stats().served, vec![0, 0]);
    }

    #[test]
    fn wait_counts_arrival_and_service_steps() {
        let mut env = MultiQueueEnv::new(
            MultiQueueConfig {
                arrival_rates: vec![1.0],
                capacity: 3,
            },
            1,
        )
        .unwrap();
        // step 0: nothing to serve, user arrives at step 0
        assert_eq!(env.step(0).unwrap().rewards, vec![0.0]);
        // step 1: serve the step-0 user, w = 1 - 0 + 1 = 2
        let step = env.step(0).unwrap();
        assert!((step.rewards[0] - qoe(2.0)).abs() < 1e-15);
    }

    #[test]
    fn full_queue_drops_arrivals() {
        let mut env = MultiQueueEnv::new(
            MultiQueueConfig {
                arrival_rates: vec![1.0, 0.0],
                capacity: 2,
            },
            1,
        )
        .unwrap();
        for _ in 0..5 {
            env.step(1).unwrap();
        }
        assert_eq!(env.lengths(), vec![2, 0]);
        assert_eq!(env.stats().arrivals[0], 5);
        assert_eq!(env.stats().dropped[0], 3);
        let obs = env.reset();
        assert_eq!(obs, vec![0.0, 0.0]);
    }
}
