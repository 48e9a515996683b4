use std::fs;
use std::path::{Path, PathBuf};

use fairmarl::env::EnvSpec;
use fairmarl::harness::{
    compute_regret, percentile, run_experiment, running_fairness, sweep_configs, AlgorithmSpec, ConfigError,
    ExperimentConfig, RunningFairness, SeedResult, SweepParam,
};
use fairmarl::objectives::{ObjectiveFunction, ObjectiveSpec};
use fairmarl::policy_gradient::PgConfig;
use fairmarl::posterior::EpochSchedule;
use proptest::prelude::*;

fn cellular(agents: usize) -> EnvSpec {
    EnvSpec::Cellular {
        agents,
        rates: None,
        stay_probability: 0.8,
    }
}

fn pf() -> ObjectiveSpec {
    ObjectiveSpec::ProportionalFair {
        lipschitz: None,
        epsilon_floor: None,
    }
}

fn config(environment: EnvSpec, algorithm: AlgorithmSpec, horizon: usize, seeds: Vec<u64>) -> ExperimentConfig {
    ExperimentConfig {
        environment,
        objective: pf(),
        algorithm,
        horizon,
        seeds,
        output: None,
    }
}

fn model_based(training_steps: usize) -> AlgorithmSpec {
    AlgorithmSpec::ModelBased {
        training_steps,
        schedule: EpochSchedule::Fixed { length: 100 },
        solver: Default::default(),
        online: false,
    }
}

fn small_pg() -> AlgorithmSpec {
    AlgorithmSpec::PolicyGradient {
        training: PgConfig {
            batch_size: 4,
            learning_rate: 0.01,
            gamma: 0.9,
            horizon: 20,
            epochs: 5,
            hidden: vec![8],
            ..PgConfig::default()
        },
    }
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    out.sort();
    out
}

fn assert_same_outputs(cfg: &ExperimentConfig) {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(cfg).unwrap().write(a.path()).unwrap();
    run_experiment(cfg).unwrap().write(b.path()).unwrap();
    let names = |dir: &Path| files(dir).iter().map(|p| p.file_name().unwrap().to_owned()).collect::<Vec<_>>();
    assert_eq!(names(a.path()), names(b.path()));
    assert!(a.path().join("timing.json").exists());
    for path in files(a.path()) {
        let name = path.file_name().unwrap();
        if name == "timing.json" {
            continue;
        }
        assert_eq!(fs::read(&path).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name:?} differs");
    }
}

#[test]
fn reruns_write_identical_outputs() {
    assert_same_outputs(&config(cellular(2), model_based(500), 300, vec![1, 2, 3]));
    let pg = config(EnvSpec::GaussMarkov { agents: 3, beta: 0.1 }, small_pg(), 50, vec![4, 5]);
    assert_same_outputs(&pg);
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&pg).unwrap().write(dir.path()).unwrap();
    for seed in [4, 5] {
        let log = fs::read_to_string(dir.path().join(format!("training_seed_{seed}.csv"))).unwrap();
        assert_eq!(log.lines().next(), Some("epoch,f_value,J1,J2,J3,grad_norm"));
        assert_eq!(log.lines().count(), 6);
    }
}

#[test]
fn aggregate_rows_are_per_step_percentiles() {
    let cfg = config(cellular(3), AlgorithmSpec::Uniform, 120, (0..50).collect());
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.aggregate.len(), 120);
    for row in &report.aggregate {
        let column: Vec<f64> = report.seeds.iter().map(|s| s.fairness[row.t - 1]).collect();
        assert_eq!(row.median, percentile(&column, 0.5));
        assert_eq!(row.q25, percentile(&column, 0.25));
        assert_eq!(row.q75, percentile(&column, 0.75));
    }
    let finals = report.final_values();
    assert_eq!(report.median_final(), percentile(&finals, 0.5));
    assert_eq!(report.summary()["final_fairness"]["stats"]["q75"], percentile(&finals, 0.75));
}

fn same_result(a: &SeedResult, b: &SeedResult) -> bool {
    a.seed == b.seed
        && a.fairness == b.fairness
        && a.regret == b.regret
        && a.mean_rewards == b.mean_rewards
        && a.action_shares == b.action_shares
        && a.training_log == b.training_log
}

#[test]
fn seed_order_does_not_matter() {
    let forward = config(cellular(2), model_based(300), 200, vec![3, 8, 13, 21]);
    let mut backward = forward.clone();
    backward.seeds.reverse();
    let (a, b) = (run_experiment(&forward).unwrap(), run_experiment(&backward).unwrap());
    assert_eq!(a.aggregate, b.aggregate);
    for result in &a.seeds {
        let twin = b.seeds.iter().find(|r| r.seed == result.seed).unwrap();
        assert!(same_result(result, twin), "seed {}", result.seed);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn incremental_fairness_matches_recomputation(
        history in (1usize..4).prop_flat_map(|k| prop::collection::vec(prop::collection::vec(0.01f64..1.0, k), 1..200)),
    ) {
        let k = history[0].len();
        let f = ObjectiveFunction::proportional_fair();
        let mut running = RunningFairness::new(k);
        for (t, row) in history.iter().enumerate() {
            running.push(row);
            let full = running_fairness(&f, &history, t + 1).unwrap();
            prop_assert!((running.value(&f).unwrap() - full).abs() <= 1e-12);
        }
    }
}

#[test]
fn identity_regret_is_average_reward_regret() {
    let f = ObjectiveFunction::identity();
    let history: Vec<Vec<f64>> = (0..100).map(|t| vec![((t * 7) % 10) as f64 / 10.0]).collect();
    let best = 0.9;
    for t in 1..=100 {
        let mean = history[..t].iter().map(|r| r[0]).sum::<f64>() / t as f64;
        let record = compute_regret(&f, &[best], &history, t).unwrap();
        assert!((record.regret - (best - mean).abs()).abs() < 1e-15);
    }
}

#[test]
fn every_algorithm_runs_through_the_harness() {
    let finite = [
        model_based(200),
        AlgorithmSpec::Ops {
            training_steps: 200,
            delta: 0.1,
            psi: Some(2),
            omega: None,
            kappa: None,
            optimism_threshold: None,
            solver: Default::default(),
            online: true,
        },
        AlgorithmSpec::Sarsa,
        AlgorithmSpec::Bge { floor: 1e-6 },
        AlgorithmSpec::Uniform,
        small_pg(),
    ];
    for algorithm in finite {
        let name = algorithm.name();
        let report = run_experiment(&config(cellular(2), algorithm, 150, vec![1, 2])).unwrap();
        assert!(report.optimal.is_some(), "{name}");
        for seed in &report.seeds {
            assert_eq!(seed.fairness.len(), 150, "{name}");
            assert!(seed.fairness.iter().all(|v| v.is_finite()), "{name}");
            assert_eq!(seed.regret.as_ref().map(Vec::len), Some(150), "{name}");
            assert!((seed.action_shares.iter().sum::<f64>() - 1.0).abs() < 1e-12, "{name}");
        }
    }
    let queue = EnvSpec::Queue {
        agents: 3,
        preset: Default::default(),
        arrival_rates: None,
        capacity: None,
    };
    for algorithm in [AlgorithmSpec::Lqf, small_pg()] {
        let report = run_experiment(&config(queue.clone(), algorithm, 100, vec![1])).unwrap();
        assert!(report.optimal.is_none());
        assert!(report.seeds[0].regret.is_none());
    }
    let gm = run_experiment(&config(EnvSpec::GaussMarkov { agents: 4, beta: 0.1 }, small_pg(), 80, vec![6])).unwrap();
    assert_eq!(gm.seeds[0].training_log.as_ref().unwrap().records.len(), 5);
}

#[test]
fn finite_state_learners_reject_continuous_environments() {
    let cfg = config(EnvSpec::GaussMarkov { agents: 2, beta: 0.1 }, model_based(10), 10, vec![1]);
    match cfg.validate() {
        Err(ConfigError::Invalid(issues)) => assert_eq!(issues[0].path, "algorithm.kind"),
        other => panic!("expected a field issue, got {other:?}"),
    }
    assert!(run_experiment(&cfg).is_err());
}

#[test]
fn sweeps_vary_one_field_and_nest_outputs() {
    let mut base = config(cellular(2), AlgorithmSpec::Uniform, 50, vec![1]);
    base.output = Some(PathBuf::from("out"));
    let agents = sweep_configs(&base, SweepParam::Agents, &[2, 4]).unwrap();
    assert_eq!(agents.iter().map(|c| c.environment.agents()).collect::<Vec<_>>(), vec![2, 4]);
    assert_eq!(agents[1].output, Some(PathBuf::from("out/agents_4")));
    assert!(agents.iter().all(|c| c.horizon == 50));

    let horizons = sweep_configs(&base, SweepParam::Horizon, &[10, 20]).unwrap();
    assert_eq!(horizons.iter().map(|c| c.horizon).collect::<Vec<_>>(), vec![10, 20]);
    assert_eq!(horizons[0].output, Some(PathBuf::from("out/horizon_10")));

    assert!(matches!(sweep_configs(&base, SweepParam::Agents, &[40]), Err(ConfigError::Invalid(_))));
}

#[test]
fn configs_round_trip_through_json() {
    let cfg = config(cellular(3), model_based(1000), 400, vec![1, 2]);
    let back = ExperimentConfig::from_json_str(&cfg.to_json()).unwrap();
    assert_eq!(back, cfg);
    match ExperimentConfig::from_json_str("{\"environment\": {\"kind\": \"cellular\", \"agents\": 2},\n \"bogus\": 1}") {
        Err(ConfigError::Parse { line, .. }) => assert!(line >= 1),
        other => panic!("expected a parse error, got {other:?}"),
    }
}
