use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvSpec;
use crate::objectives::ObjectiveSpec;
use crate::occupancy::SolverConfig;
use crate::policy_gradient::PgConfig;
use crate::posterior::{EpochSchedule, OpsConfig};

/// One problem found while checking a config, located by a dotted path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn format_issues(issues: &[FieldIssue]) -> String {
    issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid config:\n{}", format_issues(.0))]
    Invalid(Vec<FieldIssue>),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn default_training_steps() -> usize {
    5000
}

fn default_delta() -> f64 {
    0.1
}

fn default_bge_floor() -> f64 {
    crate::baselines::BGE_FLOOR
}

/// Algorithm block of an experiment config.
///
/// Learners with a `training_steps` budget train first and are then frozen
/// for the reported episode; with `online: true` the reported episode is the
/// learning run itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    ModelBased {
        #[serde(default = "default_training_steps")]
        training_steps: usize,
        #[serde(default)]
        schedule: EpochSchedule,
        #[serde(default)]
        solver: SolverConfig,
        #[serde(default)]
        online: bool,
    },
    Ops {
        #[serde(default = "default_training_steps")]
        training_steps: usize,
        #[serde(default = "default_delta")]
        delta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        psi: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        omega: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kappa: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        optimism_threshold: Option<f64>,
        #[serde(default)]
        solver: SolverConfig,
        #[serde(default)]
        online: bool,
    },
    PolicyGradient {
        #[serde(default)]
        training: PgConfig,
    },
    Bge {
        #[serde(default = "default_bge_floor")]
        floor: f64,
    },
    Lqf,
    Uniform,
    Sarsa,
}

impl AlgorithmSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmSpec::ModelBased { .. } => "model_based",
            AlgorithmSpec::Ops { .. } => "ops",
            AlgorithmSpec::PolicyGradient { .. } => "policy_gradient",
            AlgorithmSpec::Bge { .. } => "bge",
            AlgorithmSpec::Lqf => "lqf",
            AlgorithmSpec::Uniform => "uniform",
            AlgorithmSpec::Sarsa => "sarsa",
        }
    }

    /// Optimistic-learner parameters for a run of `steps` steps.
    pub fn ops_config(&self, steps: usize, n_states: usize, n_actions: usize) -> Option<Result<OpsConfig, crate::posterior::LearnError>> {
        let AlgorithmSpec::Ops {
            delta,
            psi,
            omega,
            kappa,
            optimism_threshold,
            ..
        } = self
        else {
            return None;
        };
        Some(OpsConfig::new(*delta, steps, n_states, n_actions).map(|mut cfg| {
            if let Some(v) = psi {
                cfg.psi = *v;
            }
            if let Some(v) = omega {
                cfg.omega = *v;
            }
            if let Some(v) = kappa {
                cfg.kappa = *v;
            }
            if let Some(v) = optimism_threshold {
                cfg.optimism_threshold = *v;
            }
            cfg
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvSpec,
    pub objective: ObjectiveSpec,
    pub algorithm: AlgorithmSpec,
    /// Length of every reported episode.
    pub horizon: usize,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses and validates.
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut issues = Vec::new();
        let mut issue = |path: &str, message: String| {
            issues.push(FieldIssue {
                path: path.to_string(),
                message,
            })
        };

        if self.horizon == 0 {
            issue("horizon", "must be at least 1".into());
        }
        if self.seeds.is_empty() {
            issue("seeds", "must list at least one seed".into());
        }
        let mut seen = HashSet::new();
        for (i, s) in self.seeds.iter().enumerate() {
            if !seen.insert(s) {
                issue(&format!("seeds[{i}]"), format!("duplicate seed {s}"));
            }
        }

        let env = match self.environment.build(0) {
            Ok(env) => Some(env),
            Err(e) => {
                issue("environment", e.to_string());
                None
            }
        };
        let agents = self.environment.agents();

        if let Err(e) = self.objective.build() {
            issue("objective", e.to_string());
        }
        if let Some(k) = self.objective.required_agents() {
            if k != agents {
                issue(
                    "objective",
                    format!("{} is defined for {k} agents but the environment has {agents}", self.objective_kind()),
                );
            }
        }

        let algo = self.algorithm.name();
        match &self.algorithm {
            AlgorithmSpec::ModelBased {
                training_steps,
                schedule,
                solver,
                online,
            } => {
                if !self.environment.is_finite() {
                    issue("algorithm.kind", format!("{algo} needs a finite-state environment"));
                }
                if !online && *training_steps == 0 {
                    issue("algorithm.training_steps", "must be at least 1 unless online".into());
                }
                if let EpochSchedule::Fixed { length: 0 } = schedule {
                    issue("algorithm.schedule.length", "must be at least 1".into());
                }
                if let Err(e) = solver.validate() {
                    issue("algorithm.solver", e.to_string());
                }
            }
            AlgorithmSpec::Ops {
                training_steps,
                solver,
                online,
                ..
            } => {
                if !self.environment.is_finite() {
                    issue("algorithm.kind", format!("{algo} needs a finite-state environment"));
                }
                let steps = if *online { self.horizon } else { *training_steps };
                if steps == 0 {
                    issue("algorithm.training_steps", "must be at least 1 unless online".into());
                }
                if let Some(tab) = env.as_ref().and_then(|e| e.as_tabular()) {
                    if let Some(result) = self.algorithm.ops_config(steps.max(1), tab.n_states(), tab.n_actions()) {
                        if let Err(e) = result.and_then(|c| c.validate().map(|_| c)) {
                            issue("algorithm", e.to_string());
                        }
                    }
                }
                if let Err(e) = solver.validate() {
                    issue("algorithm.solver", e.to_string());
                }
            }
            AlgorithmSpec::PolicyGradient { training } => {
                if let Err(e) = training.validate() {
                    issue("algorithm.training", e.to_string());
                }
            }
            AlgorithmSpec::Bge { floor } => {
                if !(*floor > 0.0) {
                    issue("algorithm.floor", "must be positive".into());
                }
                if !self.environment.exposes_rates() {
                    issue("algorithm.kind", "bge needs an environment that exposes per-agent rates".into());
                }
            }
            AlgorithmSpec::Lqf => {
                if !self.environment.is_queue() {
                    issue("algorithm.kind", "lqf needs a queue environment".into());
                }
            }
            AlgorithmSpec::Sarsa => {
                if !self.environment.is_finite() {
                    issue("algorithm.kind", "sarsa needs a finite-state environment".into());
                }
            }
            AlgorithmSpec::Uniform => {}
        }

        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(issues))
        }
    }

    fn objective_kind(&self) -> &'static str {
        match self.objective {
            ObjectiveSpec::AlphaFair { .. } => "alpha_fair",
            ObjectiveSpec::ProportionalFair { .. } => "proportional_fair",
            ObjectiveSpec::WeightedProportionalFair { .. } => "weighted_proportional_fair",
            ObjectiveSpec::MaxMin { .. } => "max_min",
            ObjectiveSpec::NegVariance { .. } => "neg_variance",
            ObjectiveSpec::Identity { .. } => "identity",
        }
    }
}
