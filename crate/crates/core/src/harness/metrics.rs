use serde::{Deserialize, Serialize};

use crate::objectives::{ObjectiveError, ObjectiveFunction};

/// `f` applied to the per-agent means of the first `t` rows of
/// `reward_history` (one row per step, one column per agent).
pub fn running_fairness(f: &ObjectiveFunction, reward_history: &[Vec<f64>], t: usize) -> Result<f64, ObjectiveError> {
    assert!(t <= reward_history.len(), "t = {t} beyond history of {}", reward_history.len());
    let k = reward_history.first().map_or(0, Vec::len);
    let mut sums = vec![0.0; k];
    for row in &reward_history[..t] {
        sums.iter_mut().zip(row).for_each(|(s, r)| *s += r);
    }
    let denom = t.max(1) as f64;
    let means: Vec<f64> = sums.iter().map(|s| s / denom).collect();
    f.evaluate(&means)
}

/// Incremental form of [`running_fairness`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunningFairness {
    sums: Vec<f64>,
    steps: usize,
}

impl RunningFairness {
    pub fn new(n_agents: usize) -> Self {
        Self {
            sums: vec![0.0; n_agents],
            steps: 0,
        }
    }

    pub fn push(&mut self, rewards: &[f64]) {
        self.sums.iter_mut().zip(rewards).for_each(|(s, r)| *s += r);
        self.steps += 1;
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn means(&self) -> Vec<f64> {
        let denom = self.steps.max(1) as f64;
        self.sums.iter().map(|s| s / denom).collect()
    }

    pub fn value(&self, f: &ObjectiveFunction) -> Result<f64, ObjectiveError> {
        f.evaluate(&self.means())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretRecord {
    pub t: usize,
    pub optimal: f64,
    pub achieved: f64,
    pub regret: f64,
}

impl RegretRecord {
    pub fn new(t: usize, optimal: f64, achieved: f64) -> Self {
        Self {
            t,
            optimal,
            achieved,
            regret: (optimal - achieved).abs(),
        }
    }
}

pub fn compute_regret(
    f: &ObjectiveFunction,
    optimal_lambda: &[f64],
    reward_history: &[Vec<f64>],
    t: usize,
) -> Result<RegretRecord, ObjectiveError> {
    Ok(RegretRecord::new(
        t,
        f.evaluate(optimal_lambda)?,
        running_fairness(f, reward_history, t)?,
    ))
}

/// Linear-interpolation percentile (`q` in `[0, 1]`) of unsorted data.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty data");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    percentile_sorted(&sorted, q)
}

pub(crate) fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    percentile(values, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fairness_examples() {
        let pf = ObjectiveFunction::proportional_fair();
        let hist = vec![vec![1.0, 1.0]; 3];
        assert_eq!(running_fairness(&pf, &hist, 3).unwrap(), 0.0);
        let one = vec![vec![0.7, 0.0]];
        let expected = 0.7f64.ln() + 1e-8f64.ln();
        assert!((running_fairness(&pf, &one, 1).unwrap() - expected).abs() < 1e-12);
        let id = ObjectiveFunction::identity();
        assert!((running_fairness(&id, &vec![vec![0.9]; 5], 5).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn regret_examples() {
        let id = ObjectiveFunction::identity();
        let hist = vec![vec![0.9]; 4];
        assert!((compute_regret(&id, &[1.0], &hist, 4).unwrap().regret - 0.1).abs() < 1e-12);
        assert_eq!(compute_regret(&id, &[0.9], &hist, 4).unwrap().regret, 0.0);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 4.0);
        assert_eq!(median(&v), 2.5);
        assert!((percentile(&v, 0.25) - 1.75).abs() < 1e-15);
    }
}
