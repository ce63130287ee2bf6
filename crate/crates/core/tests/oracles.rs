mod common;

use proptest::prelude::*;
use smkl::model::objective;
use smkl::oracle::{bcd_solve, enumerate_solve, OracleSolution};
use smkl::solver::{solve_from_zero, SolverConfig};
use smkl::support::{certificate_norms, support_of};

fn converged_config() -> SolverConfig {
    SolverConfig {
        max_iters: 1_000_000,
        stop_tol: 1e-12,
        record_trace: false,
        ..SolverConfig::default()
    }
}

#[test]
fn solver_matches_enumeration() {
    let mut rng = common::rng(10);
    for case in 0..30 {
        let factor = 0.05 + 0.9 * (case as f64) / 30.0;
        let problem = common::group_lasso(&mut rng, 8, &[2; 4], factor);
        let (alpha, _) = solve_from_zero(&problem, &converged_config()).unwrap();
        let oracle = enumerate_solve(&problem, 1e-10).unwrap();
        let f = objective(&alpha, &problem).unwrap();
        assert!(
            (f - oracle.objective).abs() <= 1e-8 * oracle.objective.abs(),
            "case {case}: {f} vs {}",
            oracle.objective
        );
    }
}

#[test]
fn block_descent_matches_enumeration() {
    let mut rng = common::rng(11);
    for case in 0..50 {
        let problem = common::small_group_lasso(&mut rng, 10, 5, 3);
        let bcd = bcd_solve(&problem, 1e-15, 1_000_000).unwrap();
        let en = enumerate_solve(&problem, 1e-10).unwrap();
        assert!(matches!(bcd.solution, OracleSolution::Primal(_)));
        assert!(
            (bcd.objective - en.objective).abs() <= 1e-8 * en.objective.abs().max(1.0),
            "case {case}: {} vs {}",
            bcd.objective,
            en.objective
        );
    }
}

#[test]
fn converged_iterate_satisfies_optimality() {
    let mut rng = common::rng(12);
    for _ in 0..30 {
        let problem = common::small_group_lasso(&mut rng, 10, 5, 3);
        let (alpha, trace) = solve_from_zero(&problem, &converged_config()).unwrap();
        assert!(trace.final_step_norm <= 1e-12);
        let support = support_of(&alpha);
        for (g, c) in certificate_norms(&alpha, &problem)
            .unwrap()
            .into_iter()
            .enumerate()
        {
            if support.contains(g) {
                assert!((c - 1.0).abs() <= 1e-6, "group {g} in support: {c}");
            } else {
                assert!(c <= 1.0 + 1e-6, "group {g} outside support: {c}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn objective_never_increases(seed in any::<u64>(), factor in 0.05f64..0.95) {
        let mut rng = common::rng(seed);
        let problem = common::small_group_lasso(&mut rng, 10, 5, 3).with_lambda(1.0).unwrap();
        let problem = problem.with_lambda(factor * common::lambda_max(&problem)).unwrap();
        let cfg = SolverConfig { max_iters: 300, ..SolverConfig::default() };
        let (_, trace) = solve_from_zero(&problem, &cfg).unwrap();
        let mut prev = trace.initial_objective;
        for &f in &trace.objectives {
            prop_assert!(f <= prev + 1e-12 * prev.abs().max(1.0));
            prev = f;
        }
    }

    #[test]
    fn iterates_never_beat_the_oracle(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let problem = common::small_group_lasso(&mut rng, 6, 3, 2);
        let oracle = enumerate_solve(&problem, 1e-10).unwrap();
        let cfg = SolverConfig { max_iters: 50, ..SolverConfig::default() };
        let (_, trace) = solve_from_zero(&problem, &cfg).unwrap();
        for &f in &trace.objectives {
            prop_assert!(f >= oracle.objective - 1e-8 * oracle.objective.abs().max(1.0));
        }
    }
}
