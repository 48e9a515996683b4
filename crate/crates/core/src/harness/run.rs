use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::config::{AlgorithmSpec, ConfigError, ExperimentConfig};
use super::metrics::{percentile_sorted, RunningFairness};
use crate::baselines::{lqf_select, uniform_select, BgeState, SarsaState};
use crate::env::{AnyEnv, EnvError, Environment, TabularEnvironment};
use crate::mdp::{MdpError, TabularPolicy};
use crate::objectives::{ObjectiveError, ObjectiveFunction};
use crate::occupancy::{solve_occupancy, SolverConfig, SolverError};
use crate::policy_gradient::{sample_action, train, PgError, TrainingLog};
use crate::posterior::{run_model_based, run_ops, LearnError, LearningRun};
use crate::sampling::derive_seed;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    PolicyGradient(#[from] PgError),
    #[error("{0}")]
    Unsupported(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("json output: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Best achievable long-run averages on the true model, in reporting units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalPoint {
    pub lambda: Vec<f64>,
    pub value: f64,
}

/// Solves the occupancy program on the environment's exact model.
/// Returns `None` for environments without one.
pub fn solve_oracle(cfg: &ExperimentConfig) -> Result<Option<OptimalPoint>, HarnessError> {
    let env = cfg.environment.build(0)?;
    let Some(mdp) = env.as_tabular().and_then(|t| t.ground_truth()) else {
        return Ok(None);
    };
    let f = cfg.objective.build()?;
    let solver = match &cfg.algorithm {
        AlgorithmSpec::ModelBased { solver, .. } | AlgorithmSpec::Ops { solver, .. } => *solver,
        _ => SolverConfig::default(),
    };
    let solution = solve_occupancy(&mdp, &f, &solver)?;
    let scale = env.reward_scale();
    let lambda: Vec<f64> = solution.avg_rewards.iter().map(|l| l * scale).collect();
    let value = f.evaluate(&lambda)?;
    Ok(Some(OptimalPoint { lambda, value }))
}

/// Outcome of one seed's reported episode.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    /// running fairness after steps `1..=T`
    pub fairness: Vec<f64>,
    pub regret: Option<Vec<f64>>,
    /// per-agent average reward over the episode, reporting units
    pub mean_rewards: Vec<f64>,
    /// fraction of steps each action was taken
    pub action_shares: Vec<f64>,
    pub training_log: Option<TrainingLog>,
    pub elapsed_secs: f64,
}

impl SeedResult {
    pub fn final_fairness(&self) -> f64 {
        *self.fairness.last().expect("episode has at least one step")
    }

    pub fn final_regret(&self) -> Option<f64> {
        self.regret.as_ref().and_then(|r| r.last().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub t: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Median and quartiles of each step's value across seeds.
pub fn aggregate(series: &[&[f64]]) -> Vec<AggregateRow> {
    let len = series.iter().map(|s| s.len()).min().unwrap_or(0);
    let mut column = Vec::with_capacity(series.len());
    (0..len)
        .map(|t| {
            column.clear();
            column.extend(series.iter().map(|s| s[t]));
            column.sort_by(f64::total_cmp);
            AggregateRow {
                t: t + 1,
                median: percentile_sorted(&column, 0.5),
                q25: percentile_sorted(&column, 0.25),
                q75: percentile_sorted(&column, 0.75),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub optimal: Option<OptimalPoint>,
    pub seeds: Vec<SeedResult>,
    pub aggregate: Vec<AggregateRow>,
    pub elapsed_secs: f64,
}

fn stats(values: &[f64]) -> serde_json::Value {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    json!({
        "median": percentile_sorted(&sorted, 0.5),
        "q25": percentile_sorted(&sorted, 0.25),
        "q75": percentile_sorted(&sorted, 0.75),
        "min": sorted[0],
        "max": sorted[sorted.len() - 1],
    })
}

impl ExperimentReport {
    pub fn final_values(&self) -> Vec<f64> {
        self.seeds.iter().map(SeedResult::final_fairness).collect()
    }

    pub fn median_final(&self) -> f64 {
        let mut v = self.final_values();
        v.sort_by(f64::total_cmp);
        percentile_sorted(&v, 0.5)
    }

    pub fn summary(&self) -> serde_json::Value {
        let finals = self.final_values();
        let regrets: Option<Vec<f64>> = self.seeds.iter().map(SeedResult::final_regret).collect();
        json!({
            "algorithm": self.config.algorithm.name(),
            "objective": self.config.objective.build().map(|f| f.name()).unwrap_or_default(),
            "agents": self.config.environment.agents(),
            "horizon": self.config.horizon,
            "seeds": self.config.seeds,
            "final_fairness": {
                "per_seed": finals,
                "stats": stats(&finals),
            },
            "final_regret": regrets.map(|r| json!({ "per_seed": r, "stats": stats(&r) })),
            "optimal": self.optimal,
            "mean_rewards": self.seeds.iter().map(|s| &s.mean_rewards).collect::<Vec<_>>(),
            "action_shares": self.seeds.iter().map(|s| &s.action_shares).collect::<Vec<_>>(),
            "config": self.config,
        })
    }

    /// Writes `seed_<s>.csv`, `aggregate.csv`, `summary.json`, `timing.json`
    /// and, for policy-gradient runs, `training_seed_<s>.csv`. Everything
    /// except `timing.json` is a deterministic function of the config.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for result in &self.seeds {
            let path = dir.join(format!("seed_{}.csv", result.seed));
            let file = fs::File::create(&path).map_err(io_err(&path))?;
            let mut out = csv::Writer::from_writer(BufWriter::new(file));
            match &result.regret {
                Some(regret) => {
                    out.write_record(["t", "f_t", "regret"])?;
                    for (t, (f, r)) in result.fairness.iter().zip(regret).enumerate() {
                        out.write_record([(t + 1).to_string(), f.to_string(), r.to_string()])?;
                    }
                }
                None => {
                    out.write_record(["t", "f_t"])?;
                    for (t, f) in result.fairness.iter().enumerate() {
                        out.write_record([(t + 1).to_string(), f.to_string()])?;
                    }
                }
            }
            out.flush().map_err(io_err(&path))?;
            if let Some(log) = &result.training_log {
                let path = dir.join(format!("training_seed_{}.csv", result.seed));
                let file = fs::File::create(&path).map_err(io_err(&path))?;
                log.write_csv(BufWriter::new(file))?;
            }
        }

        let path = dir.join("aggregate.csv");
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        let mut out = csv::Writer::from_writer(BufWriter::new(file));
        out.write_record(["t", "median", "q25", "q75"])?;
        for row in &self.aggregate {
            out.write_record([
                row.t.to_string(),
                row.median.to_string(),
                row.q25.to_string(),
                row.q75.to_string(),
            ])?;
        }
        out.flush().map_err(io_err(&path))?;

        let path = dir.join("summary.json");
        fs::write(&path, serde_json::to_string_pretty(&self.summary())? + "\n").map_err(io_err(&path))?;

        let timing = json!({
            "total_secs": self.elapsed_secs,
            "per_seed": self.seeds.iter().map(|s| json!({ "seed": s.seed, "secs": s.elapsed_secs })).collect::<Vec<_>>(),
        });
        let path = dir.join("timing.json");
        fs::write(&path, serde_json::to_string_pretty(&timing)? + "\n").map_err(io_err(&path))?;
        Ok(())
    }
}

/// Tracks the reported episode in reporting units.
struct Recorder<'a> {
    f: &'a ObjectiveFunction,
    scale: f64,
    running: RunningFairness,
    fairness: Vec<f64>,
    counts: Vec<u64>,
    raw: Vec<f64>,
}

impl<'a> Recorder<'a> {
    fn new(f: &'a ObjectiveFunction, env: &AnyEnv, horizon: usize) -> Self {
        Self {
            f,
            scale: env.reward_scale(),
            running: RunningFairness::new(env.n_agents()),
            fairness: Vec::with_capacity(horizon),
            counts: vec![0; env.n_actions()],
            raw: vec![0.0; env.n_agents()],
        }
    }

    fn record(&mut self, action: usize, rewards: &[f64]) -> Result<(), ObjectiveError> {
        for (r, v) in self.raw.iter_mut().zip(rewards) {
            *r = v * self.scale;
        }
        self.running.push(&self.raw);
        self.fairness.push(self.running.value(self.f)?);
        self.counts[action] += 1;
        Ok(())
    }

    fn finish(self, seed: u64, optimal: Option<&OptimalPoint>, training_log: Option<TrainingLog>, started: Instant) -> SeedResult {
        let steps = self.running.steps().max(1) as f64;
        SeedResult {
            seed,
            regret: optimal.map(|o| self.fairness.iter().map(|f| (o.value - f).abs()).collect()),
            mean_rewards: self.running.means(),
            action_shares: self.counts.iter().map(|&c| c as f64 / steps).collect(),
            fairness: self.fairness,
            training_log,
            elapsed_secs: started.elapsed().as_secs_f64(),
        }
    }
}

fn tabular_mut(env: &mut AnyEnv) -> Result<&mut dyn TabularEnvironment, HarnessError> {
    env.as_tabular_mut()
        .ok_or_else(|| HarnessError::Unsupported("algorithm needs a finite-state environment".into()))
}

fn replay_log(rec: &mut Recorder, run: &LearningRun) -> Result<(), HarnessError> {
    for step in &run.log.records {
        rec.record(step.action, &step.rewards)?;
    }
    Ok(())
}

fn rollout_tabular(
    rec: &mut Recorder,
    env: &mut dyn TabularEnvironment,
    policy: &TabularPolicy,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(), HarnessError> {
    let mut state = env.reset_state();
    for _ in 0..horizon {
        let action = policy.sample(state, rng);
        let (rewards, next) = env.step_state(action)?;
        rec.record(action, &rewards)?;
        state = next;
    }
    Ok(())
}

/// Trains (where applicable) and plays one reported episode.
///
/// Stream layout per seed: 0 training environment, 1 learner, 2 reported
/// environment, 3 reported actions.
pub fn run_seed(cfg: &ExperimentConfig, optimal: Option<&OptimalPoint>, seed: u64) -> Result<SeedResult, HarnessError> {
    let started = Instant::now();
    let f = cfg.objective.build()?;
    let horizon = cfg.horizon;
    let learner_seed = derive_seed(seed, 1);
    let mut eval_env = cfg.environment.build(derive_seed(seed, 2))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
    let mut rec = Recorder::new(&f, &eval_env, horizon);
    let mut training_log = None;

    match &cfg.algorithm {
        AlgorithmSpec::ModelBased {
            training_steps,
            schedule,
            solver,
            online,
        } => {
            if *online {
                let run = run_model_based(tabular_mut(&mut eval_env)?, &f, *schedule, solver, horizon, learner_seed)?;
                replay_log(&mut rec, &run)?;
            } else {
                let mut train_env = cfg.environment.build(derive_seed(seed, 0))?;
                let run = run_model_based(
                    tabular_mut(&mut train_env)?,
                    &f,
                    *schedule,
                    solver,
                    *training_steps,
                    learner_seed,
                )?;
                rollout_tabular(&mut rec, tabular_mut(&mut eval_env)?, &run.policy, horizon, &mut rng)?;
            }
        }
        AlgorithmSpec::Ops {
            training_steps,
            solver,
            online,
            ..
        } => {
            let steps = if *online { horizon } else { *training_steps };
            let (ns, na) = {
                let tab = tabular_mut(&mut eval_env)?;
                (tab.n_states(), tab.n_actions())
            };
            let ops = cfg
                .algorithm
                .ops_config(steps, ns, na)
                .expect("ops algorithm has an ops config")?;
            if *online {
                let run = run_ops(tabular_mut(&mut eval_env)?, &f, &ops, solver, learner_seed)?;
                replay_log(&mut rec, &run)?;
            } else {
                let mut train_env = cfg.environment.build(derive_seed(seed, 0))?;
                let run = run_ops(tabular_mut(&mut train_env)?, &f, &ops, solver, learner_seed)?;
                rollout_tabular(&mut rec, tabular_mut(&mut eval_env)?, &run.policy, horizon, &mut rng)?;
            }
        }
        AlgorithmSpec::PolicyGradient { training } => {
            let train_env = cfg.environment.build(derive_seed(seed, 0))?;
            let trained = train(&train_env, &f, training, learner_seed)?;
            let mut observation = eval_env.reset();
            for _ in 0..horizon {
                let action = sample_action(&trained.policy, &observation, &mut rng);
                let step = eval_env.step(action)?;
                rec.record(action, &step.rewards)?;
                observation = step.observation;
            }
            training_log = Some(trained.log);
        }
        AlgorithmSpec::Bge { floor } => {
            let mut bge = BgeState::with_floor(eval_env.n_agents(), *floor);
            eval_env.reset();
            for _ in 0..horizon {
                let rates = eval_env
                    .current_rates()
                    .ok_or_else(|| HarnessError::Unsupported("bge needs per-agent rates".into()))?;
                let action = bge.select(&rates);
                let step = eval_env.step(action)?;
                bge.credit(action, step.rewards[action]);
                rec.record(action, &step.rewards)?;
            }
        }
        AlgorithmSpec::Lqf => {
            eval_env.reset();
            for _ in 0..horizon {
                let lengths = eval_env
                    .queue_lengths()
                    .ok_or_else(|| HarnessError::Unsupported("lqf needs queue lengths".into()))?;
                let action = lqf_select(&lengths);
                let step = eval_env.step(action)?;
                rec.record(action, &step.rewards)?;
            }
        }
        AlgorithmSpec::Uniform => {
            eval_env.reset();
            let n_actions = eval_env.n_actions();
            for _ in 0..horizon {
                let action = uniform_select(n_actions, &mut rng);
                let step = eval_env.step(action)?;
                rec.record(action, &step.rewards)?;
            }
        }
        AlgorithmSpec::Sarsa => {
            let env = tabular_mut(&mut eval_env)?;
            let mut sarsa = SarsaState::new(env.n_states(), env.n_actions());
            // the learner's reward is fairness in training units
            let mut running = RunningFairness::new(env.n_agents());
            let mut state = env.reset_state();
            let mut action = sarsa.select(state, &mut rng);
            for _ in 0..horizon {
                let (rewards, next) = env.step_state(action)?;
                running.push(&rewards);
                rec.record(action, &rewards)?;
                let reward = running.value(&f)?;
                let next_action = sarsa.select(next, &mut rng);
                sarsa.update(state, action, reward, next, next_action);
                state = next;
                action = next_action;
            }
        }
    }
    Ok(rec.finish(seed, optimal, training_log, started))
}

/// Validates, solves the oracle when possible, and runs every seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    let started = Instant::now();
    cfg.validate()?;
    let optimal = solve_oracle(cfg)?;
    let seeds = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, optimal.as_ref(), seed))
        .collect::<Result<Vec<_>, _>>()?;
    let series: Vec<&[f64]> = seeds.iter().map(|s| s.fairness.as_slice()).collect();
    let aggregate = aggregate(&series);
    Ok(ExperimentReport {
        config: cfg.clone(),
        optimal,
        seeds,
        aggregate,
        elapsed_secs: started.elapsed().as_secs_f64(),
    })
}
