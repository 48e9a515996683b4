use fairmarl::baselines::{lqf_select, uniform_select, BgeState, SarsaState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bge_choice_ignores_a_common_rate_scale(
        rates in prop::collection::vec(0.01f64..10.0, 1..8),
        totals in prop::collection::vec(0.1f64..100.0, 8),
        scale in prop::sample::select(vec![0.25, 0.5, 2.0, 4.0, 1024.0]),
    ) {
        let totals = totals[..rates.len()].to_vec();
        let scaled: Vec<f64> = rates.iter().map(|r| r * scale).collect();
        let scaled_totals: Vec<f64> = totals.iter().map(|t| t * scale).collect();
        let base = BgeState::from_cumulative(totals.clone(), 1e-6).select(&rates);
        prop_assert_eq!(BgeState::from_cumulative(totals, 1e-6).select(&scaled), base);
        prop_assert_eq!(BgeState::from_cumulative(scaled_totals, 1e-6).select(&rates), base);
    }

    #[test]
    fn sarsa_values_stay_within_the_discounted_reward_range(seed in any::<u64>(), n in 1usize..4, m in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = SarsaState::new(n, m);
        let bound = 1.0 / (1.0 - q.gamma);
        let mut s = 0;
        let mut a = q.select(s, &mut rng);
        for _ in 0..2000 {
            let next = rng.gen_range(0..n);
            let next_a = q.select(next, &mut rng);
            q.update(s, a, rng.gen::<f64>(), next, next_a);
            s = next;
            a = next_a;
        }
        prop_assert!(q.q_table().iter().all(|&v| (0.0..=bound).contains(&v)));
    }

    #[test]
    fn lqf_serves_a_longest_queue(lengths in prop::collection::vec(0usize..20, 1..8)) {
        let pick = lqf_select(&lengths);
        prop_assert_eq!(lengths[pick], *lengths.iter().max().unwrap());
        prop_assert!(lengths[..pick].iter().all(|&l| l < lengths[pick]));
    }
}

#[test]
fn sarsa_converges_to_the_constant_reward_fixed_point() {
    let mut q = SarsaState::new(1, 1);
    let reward = 0.37;
    for _ in 0..10_000 {
        q.update(0, 0, reward, 0, 0);
    }
    let target = reward / (1.0 - q.gamma);
    assert!((q.q(0, 0) - target).abs() <= 0.01 * target, "{} vs {target}", q.q(0, 0));
}

#[test]
fn bge_splits_symmetric_agents_evenly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bge = BgeState::new(2);
    let mut picks = [0usize; 2];
    let steps = 10_000;
    for _ in 0..steps {
        let rates = [rng.gen::<f64>(), rng.gen::<f64>()];
        let k = bge.select(&rates);
        bge.credit(k, rates[k]);
        picks[k] += 1;
    }
    let share = picks[0] as f64 / steps as f64;
    assert!((share - 0.5).abs() <= 0.01, "share {share}");
}

#[test]
fn uniform_scheduler_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut counts = [0usize; 4];
    let draws = 100_000;
    for _ in 0..draws {
        counts[uniform_select(4, &mut rng)] += 1;
    }
    for c in counts {
        assert!((c as f64 / draws as f64 - 0.25).abs() <= 0.01);
    }
}
