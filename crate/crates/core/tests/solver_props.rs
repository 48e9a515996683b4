use fairmarl::mdp::{steady_state, TabularMdp, TabularPolicy};
use fairmarl::objectives::ObjectiveFunction;
use fairmarl::occupancy::{extract_policy, project_feasible, solve_occupancy, FeasibleSet, SolverConfig};
use fairmarl::sampling::dirichlet;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mdp(rng: &mut ChaCha8Rng, ns: usize, na: usize, nk: usize) -> TabularMdp {
    let mut transition = Vec::new();
    for _ in 0..ns * na {
        transition.extend(dirichlet(&vec![1.0; ns], rng));
    }
    let rewards = (0..nk * ns * na).map(|_| rng.gen::<f64>()).collect();
    TabularMdp::new(ns, na, nk, transition, rewards, 0.99, vec![1.0 / ns as f64; ns]).unwrap()
}

fn objective(which: usize, k: usize) -> ObjectiveFunction {
    match which {
        0 => ObjectiveFunction::proportional_fair(),
        1 => ObjectiveFunction::alpha_fair(2.0).unwrap(),
        2 => ObjectiveFunction::max_min(),
        _ => {
            if k == 1 {
                ObjectiveFunction::identity()
            } else {
                ObjectiveFunction::neg_variance()
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn solutions_are_feasible(seed in any::<u64>(), ns in 1usize..5, na in 1usize..4, nk in 1usize..4, which in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = random_mdp(&mut rng, ns, na, nk);
        let solution = solve_occupancy(&mdp, &objective(which, nk), &SolverConfig::default()).unwrap();
        let d = &solution.measure;
        prop_assert!(d.flow_residual(&mdp) < 1e-6, "flow {}", d.flow_residual(&mdp));
        prop_assert!((d.total_mass() - 1.0).abs() < 1e-6);
        prop_assert!(d.as_slice().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn accepted_steps_never_lose_more_than_slack(seed in any::<u64>(), ns in 1usize..4, which in 0usize..2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = random_mdp(&mut rng, ns, 2, 2);
        let solution = solve_occupancy(&mdp, &objective(which, 2), &SolverConfig::default()).unwrap();
        for pair in solution.trace.windows(2) {
            prop_assert!(pair[1] >= pair[0] - 1e-10, "{} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn projection_is_the_nearest_feasible_point(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = random_mdp(&mut rng, 2, 2, 1);
        let raw: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.5)).collect();
        let cfg = SolverConfig::default();
        let p = project_feasible(&raw, &mdp, &cfg).unwrap();
        prop_assert!(p.flow_residual(&mdp) < 1e-9);
        prop_assert!((p.total_mass() - 1.0).abs() < 1e-9);
        // variational inequality <raw - p, y - p> <= 0 against feasible points
        // generated independently as occupancies of random policies
        for _ in 0..200 {
            let policy = TabularPolicy::random(2, 2, &mut rng);
            let y = steady_state(&mdp, &policy).unwrap().occupancy;
            let inner: f64 = raw
                .iter()
                .zip(p.as_slice())
                .zip(y.as_slice())
                .map(|((r, pi), yi)| (r - pi) * (yi - pi))
                .sum();
            prop_assert!(inner <= 1e-7, "inner product {inner}");
        }
    }
}

#[test]
fn small_instances_beat_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    for ns in 1..=2 {
        for na in 1..=2 {
            for nk in 1..=2 {
                for _ in 0..3 {
                    let mdp = random_mdp(&mut rng, ns, na, nk);
                    let f = if nk == 1 {
                        ObjectiveFunction::identity()
                    } else {
                        ObjectiveFunction::proportional_fair()
                    };
                    let solved = solve_occupancy(&mdp, &f, &SolverConfig::default()).unwrap();
                    let solved_value = f.evaluate(&solved.avg_rewards).unwrap();
                    let mut best = f64::NEG_INFINITY;
                    let rows: Vec<Vec<f64>> = if na == 1 {
                        vec![vec![1.0]]
                    } else {
                        grid.iter().map(|&p| vec![p, 1.0 - p]).collect()
                    };
                    let choices = rows.len().pow(ns as u32);
                    for c in 0..choices {
                        let mut probs = Vec::new();
                        let mut code = c;
                        for _ in 0..ns {
                            probs.extend(&rows[code % rows.len()]);
                            code /= rows.len();
                        }
                        let policy = TabularPolicy::new(ns, na, probs).unwrap();
                        let value = f.evaluate(&steady_state(&mdp, &policy).unwrap().avg_rewards).unwrap();
                        best = best.max(value);
                    }
                    assert!(
                        solved_value >= best - 1e-6,
                        "S={ns} A={na} K={nk}: {solved_value} < {best}"
                    );
                }
            }
        }
    }
}

#[test]
fn max_min_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let f = ObjectiveFunction::max_min();
    for _ in 0..5 {
        let mdp = random_mdp(&mut rng, 2, 2, 2);
        let solved = solve_occupancy(&mdp, &f, &SolverConfig::default()).unwrap();
        let solved_value = f.evaluate(&solved.avg_rewards).unwrap();
        let mut best = f64::NEG_INFINITY;
        for i in 0..=100 {
            for j in 0..=100 {
                let (p, q) = (i as f64 / 100.0, j as f64 / 100.0);
                let policy = TabularPolicy::new(2, 2, vec![p, 1.0 - p, q, 1.0 - q]).unwrap();
                best = best.max(f.evaluate(&steady_state(&mdp, &policy).unwrap().avg_rewards).unwrap());
            }
        }
        assert!((solved_value - best).abs() <= 1e-3 || solved_value > best, "{solved_value} vs grid {best}");
    }
}

#[test]
fn round_trip_on_positive_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..10 {
        let mdp = random_mdp(&mut rng, 4, 3, 3);
        let solved = solve_occupancy(&mdp, &ObjectiveFunction::alpha_fair(2.0).unwrap(), &SolverConfig::default()).unwrap();
        let eval = steady_state(&mdp, &extract_policy(&solved.measure)).unwrap();
        assert!(eval.occupancy.l1_distance(&solved.measure) < 1e-6);
    }
}

#[test]
fn feasible_set_reports_equality_violation() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mdp = random_mdp(&mut rng, 3, 2, 1);
    let set = FeasibleSet::new(&mdp);
    assert_eq!(set.dim(), 6);
    assert!(set.equality_violation(&[0.0; 6]) > 0.5);
    let uniform = steady_state(&mdp, &TabularPolicy::uniform(3, 2)).unwrap().occupancy;
    assert!(set.equality_violation(uniform.as_slice()) < 1e-10);
}
