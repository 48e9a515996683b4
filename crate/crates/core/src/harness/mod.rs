//! Experiment orchestration: configs, per-seed runs, running fairness,
//! regret and plot-ready outputs.

mod config;
mod metrics;
mod run;

pub use config::{AlgorithmSpec, ConfigError, ExperimentConfig, FieldIssue};
pub use metrics::{compute_regret, median, percentile, running_fairness, RegretRecord, RunningFairness};
pub use run::{
    aggregate, run_experiment, run_seed, solve_oracle, AggregateRow, ExperimentReport, HarnessError, OptimalPoint,
    SeedResult,
};

use serde::{Deserialize, Serialize};

/// Config field varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Agents,
    Horizon,
}

impl SweepParam {
    pub fn label(self) -> &'static str {
        match self {
            SweepParam::Agents => "agents",
            SweepParam::Horizon => "horizon",
        }
    }
}

/// One config per value, each writing under `<output>/<param>_<value>`.
pub fn sweep_configs(
    base: &ExperimentConfig,
    param: SweepParam,
    values: &[usize],
) -> Result<Vec<ExperimentConfig>, ConfigError> {
    values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            match param {
                SweepParam::Agents => {
                    if !cfg.environment.set_agents(v) {
                        return Err(ConfigError::Invalid(vec![FieldIssue {
                            path: "environment.agents".into(),
                            message: "this environment has no agent count to sweep".into(),
                        }]));
                    }
                }
                SweepParam::Horizon => cfg.horizon = v,
            }
            cfg.output = base
                .output
                .as_ref()
                .map(|dir| dir.join(format!("{}_{v}", param.label())));
            cfg.validate()?;
            Ok(cfg)
        })
        .collect()
}
