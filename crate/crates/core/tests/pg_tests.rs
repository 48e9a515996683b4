use fairmarl::env::{EnvSpec, QueuePreset, TabularMdpEnv};
use fairmarl::mdp::TabularMdp;
use fairmarl::nn::MlpPolicy;
use fairmarl::objectives::ObjectiveFunction;
use fairmarl::policy_gradient::{
    collect_trajectories, estimate_grad_j, joint_gradient, train, PgConfig, Trajectory,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One state, actions paying `rewards[k][a]` to agent `k`.
fn bandit(rewards: &[Vec<f64>]) -> TabularMdpEnv {
    let agents = rewards.len();
    let actions = rewards[0].len();
    let flat = rewards.iter().flatten().copied().collect();
    let mdp = TabularMdp::new(1, actions, agents, vec![1.0; actions], flat, 0.9, vec![1.0]).unwrap();
    TabularMdpEnv::new(mdp, 0)
}

fn policy(layers: Vec<usize>, seed: u64) -> MlpPolicy {
    MlpPolicy::new(layers, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn rollouts_depend_only_on_the_seed() {
    let spec = EnvSpec::Queue {
        agents: 3,
        preset: QueuePreset::HighLoad,
        arrival_rates: None,
        capacity: None,
    };
    let env = spec.build(0).unwrap();
    let net = policy(vec![3, 8, 3], 1);
    let a = collect_trajectories(&env, &net, 6, 40, 11).unwrap();
    let b = collect_trajectories(&env, &net, 6, 40, 11).unwrap();
    let c = collect_trajectories(&env, &net, 6, 40, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn single_step_gradient_matches_finite_differences() {
    let env = bandit(&[vec![1.0, 0.0]]);
    let mut net = policy(vec![1, 4, 2], 5);
    let n = 100_000;
    let trajs = collect_trajectories(&env, &net, n, 1, 6).unwrap();
    let est = estimate_grad_j(&trajs, &net, 0.9).unwrap();

    // per-rollout terms give the Monte Carlo standard error
    let mut sq = vec![0.0; net.n_params()];
    for traj in &trajs {
        if traj.steps[0].action == 0 {
            let g = net.grad_log_prob(&[1.0], 0);
            sq.iter_mut().zip(&g).for_each(|(s, v)| *s += v * v);
        }
    }
    let h = 1e-6;
    for i in 0..net.n_params() {
        let base = net.params()[i];
        net.params_mut()[i] = base + h;
        let up = net.probabilities(&[1.0])[0];
        net.params_mut()[i] = base - h;
        let down = net.probabilities(&[1.0])[0];
        net.params_mut()[i] = base;
        let fd = (up - down) / (2.0 * h);
        let mean = est.per_agent[0][i];
        let se = ((sq[i] / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - fd).abs() <= 5.0 * se + 1e-7, "param {i}: {mean} vs {fd} (se {se})");
    }
}

fn reward_to_go_sums(trajs: &[Trajectory], net: &MlpPolicy, gamma: f64, k: usize) -> (Vec<f64>, f64) {
    let mut a = vec![0.0; net.n_params()];
    let mut s = 0.0;
    for traj in trajs {
        for (t, step) in traj.steps.iter().enumerate() {
            s += gamma.powi(t as i32) * step.rewards[k];
            let to_go: f64 = traj.steps[t..]
                .iter()
                .enumerate()
                .map(|(j, later)| gamma.powi((t + j) as i32) * later.rewards[k])
                .sum();
            let g = net.grad_log_prob(&step.observation, step.action);
            a.iter_mut().zip(&g).for_each(|(x, v)| *x += to_go * v);
        }
    }
    (a, s)
}

#[test]
fn alpha_fair_gradient_matches_unnormalized_batch_sums() {
    let env = bandit(&[vec![0.9, 0.3, 0.5], vec![0.2, 0.8, 0.4]]);
    let net = policy(vec![1, 6, 3], 7);
    let (gamma, alpha, n) = (0.9, 2.0, 8);
    let trajs = collect_trajectories(&env, &net, n, 5, 8).unwrap();
    let est = estimate_grad_j(&trajs, &net, gamma).unwrap();
    let ours = joint_gradient(&ObjectiveFunction::alpha_fair(alpha).unwrap(), &est.returns, &est.per_agent, gamma).unwrap();

    // batch sums without the 1/N normalization differ by N^(alpha - 1)
    let mut expected = vec![0.0; net.n_params()];
    for k in 0..2 {
        let (a, s) = reward_to_go_sums(&trajs, &net, gamma, k);
        let w = (n as f64).powf(alpha - 1.0) / ((1.0 - gamma).powf(alpha - 1.0) * s.powf(alpha));
        expected.iter_mut().zip(&a).for_each(|(e, v)| *e += w * v);
    }
    for (o, e) in ours.iter().zip(&expected) {
        assert!((o - e).abs() <= 1e-9 * e.abs().max(1.0), "{o} vs {e}");
    }
}

#[test]
fn identity_objective_scales_reinforce() {
    let env = bandit(&[vec![0.7, 0.1]]);
    let net = policy(vec![1, 4, 2], 9);
    let gamma = 0.95;
    let trajs = collect_trajectories(&env, &net, 16, 10, 10).unwrap();
    let est = estimate_grad_j(&trajs, &net, gamma).unwrap();
    let joint = joint_gradient(&ObjectiveFunction::identity(), &est.returns, &est.per_agent, gamma).unwrap();
    for (j, g) in joint.iter().zip(&est.per_agent[0]) {
        assert!((j - (1.0 - gamma) * g).abs() < 1e-14);
    }
}

#[test]
fn proportional_fairness_splits_a_symmetric_bandit() {
    let env = bandit(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let cfg = PgConfig {
        batch_size: 16,
        learning_rate: 0.02,
        gamma: 0.9,
        horizon: 20,
        epochs: 200,
        hidden: vec![8],
        ..PgConfig::default()
    };
    let trained = train(&env, &ObjectiveFunction::proportional_fair(), &cfg, 3).unwrap();
    let p = trained.policy.probabilities(&[1.0])[0];
    assert!((p - 0.5).abs() <= 0.05, "share {p}");
}

#[test]
fn objective_trends_upward_over_training() {
    let env = bandit(&[vec![1.0, 0.2, 0.0]]);
    let cfg = PgConfig {
        batch_size: 16,
        learning_rate: 0.01,
        gamma: 0.9,
        horizon: 10,
        epochs: 300,
        hidden: vec![8],
        ..PgConfig::default()
    };
    let trained = train(&env, &ObjectiveFunction::identity(), &cfg, 4).unwrap();
    let blocks: Vec<f64> = trained
        .log
        .records
        .chunks(50)
        .map(|c| c.iter().map(|r| r.f_value).sum::<f64>() / c.len() as f64)
        .collect();
    assert_eq!(blocks.len(), 6);
    assert!(blocks[5] > blocks[0], "{blocks:?}");
    // allow noise between neighbouring blocks but not a sustained decline
    for pair in blocks.windows(2) {
        assert!(pair[1] >= pair[0] - 0.02, "{blocks:?}");
    }
}

fn network() -> impl Strategy<Value = (Vec<usize>, u64, Vec<f64>)> {
    (1usize..5, 1usize..6, 2usize..5, any::<u64>()).prop_flat_map(|(inp, hid, out, seed)| {
        (
            Just(vec![inp, hid, out]),
            Just(seed),
            prop::collection::vec(-3.0f64..3.0, inp),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_output_is_a_positive_distribution((layers, seed, x) in network()) {
        let net = policy(layers, seed);
        let p = net.probabilities(&x);
        prop_assert!(p.iter().all(|&v| v > 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backprop_matches_finite_differences((layers, seed, x) in network(), action in 0usize..2) {
        let mut net = policy(layers, seed);
        let grad = net.grad_log_prob(&x, action);
        let h = 1e-6;
        for i in 0..net.n_params() {
            let base = net.params()[i];
            net.params_mut()[i] = base + h;
            let up = net.log_prob(&x, action);
            net.params_mut()[i] = base - h;
            let down = net.log_prob(&x, action);
            net.params_mut()[i] = base;
            let fd = (up - down) / (2.0 * h);
            prop_assert!((fd - grad[i]).abs() <= 1e-5 * fd.abs().max(1.0), "param {}: {} vs {}", i, grad[i], fd);
        }
    }
}
