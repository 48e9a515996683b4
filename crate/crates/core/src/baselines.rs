//! Comparison schedulers: blind gradient estimation, longest queue first,
//! uniform random and tabular SARSA.

use rand::Rng;

/// Warm-start floor on BGE's allocation totals.
pub const BGE_FLOOR: f64 = 1e-6;

/// Index of the first maximum.
fn first_argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

/// Blind gradient estimation: schedule the agent whose current rate is
/// largest relative to what it has been allocated so far.
#[derive(Debug, Clone, PartialEq)]
pub struct BgeState {
    cumulative: Vec<f64>,
    floor: f64,
}

impl BgeState {
    pub fn new(n_agents: usize) -> Self {
        Self::with_floor(n_agents, BGE_FLOOR)
    }

    pub fn with_floor(n_agents: usize, floor: f64) -> Self {
        assert!(floor > 0.0, "BGE floor must be positive");
        Self {
            cumulative: vec![0.0; n_agents],
            floor,
        }
    }

    pub fn from_cumulative(cumulative: Vec<f64>, floor: f64) -> Self {
        assert!(floor > 0.0, "BGE floor must be positive");
        assert!(cumulative.iter().all(|c| *c >= 0.0), "allocations are nonnegative");
        Self { cumulative, floor }
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// `argmax_k rates_k / max(cumulative_k, floor)`, lowest index on ties.
    pub fn select(&self, rates: &[f64]) -> usize {
        assert_eq!(rates.len(), self.cumulative.len(), "one rate per agent");
        first_argmax(
            rates
                .iter()
                .zip(&self.cumulative)
                .map(|(r, c)| r / c.max(self.floor)),
        )
    }

    /// Adds the reward the scheduled agent actually received.
    pub fn credit(&mut self, agent: usize, reward: f64) {
        self.cumulative[agent] += reward.max(0.0);
    }
}

/// Longest queue first, lowest index on ties.
pub fn lqf_select(queue_lengths: &[usize]) -> usize {
    assert!(!queue_lengths.is_empty(), "need at least one queue");
    first_argmax(queue_lengths.iter().map(|&l| l as f64))
}

pub fn uniform_select<R: Rng + ?Sized>(n_agents: usize, rng: &mut R) -> usize {
    rng.gen_range(0..n_agents)
}

/// On-policy TD control whose per-step reward is the running fairness.
#[derive(Debug, Clone, PartialEq)]
pub struct SarsaState {
    n_states: usize,
    n_actions: usize,
    q: Vec<f64>,
    pub gamma: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl SarsaState {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            q: vec![0.0; n_states * n_actions],
            gamma: 0.9,
            epsilon: 0.05,
            learning_rate: 0.01,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    pub fn q_table(&self) -> &[f64] {
        &self.q
    }

    /// `Q(s,a) += lr * (reward + gamma * Q(s',a') - Q(s,a))`.
    pub fn update(&mut self, s: usize, a: usize, reward: f64, next_s: usize, next_a: usize) {
        let target = reward + self.gamma * self.q(next_s, next_a);
        let i = s * self.n_actions + a;
        self.q[i] += self.learning_rate * (target - self.q[i]);
    }

    pub fn greedy(&self, s: usize) -> usize {
        first_argmax(self.q[s * self.n_actions..(s + 1) * self.n_actions].iter().copied())
    }

    /// Epsilon-greedy action.
    pub fn select<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        if rng.gen::<f64>() < self.epsilon {
            rng.gen_range(0..self.n_actions)
        } else {
            self.greedy(s)
        }
    }
}
