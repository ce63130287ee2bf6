mod common;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use smkl::kernels::{operator_norm, POWER_MAX_ITER};
use smkl::model::residual;
use smkl::oracle::explicit_features;
use smkl::solver::{ikta_step, SolverConfig};
use smkl::{DualCoefficients, GramBlocks, ProblemInstance};

fn primal_of(alpha: &DualCoefficients, features: &[DMatrix<f64>]) -> Vec<DVector<f64>> {
    features
        .iter()
        .enumerate()
        .map(|(g, x)| x.transpose() * DVector::from_column_slice(alpha.column(g)))
        .collect()
}

fn explicit_step(
    w: &[DVector<f64>],
    features: &[DMatrix<f64>],
    y: &DVector<f64>,
    lambda: f64,
    tau: f64,
) -> Vec<DVector<f64>> {
    let fit = features
        .iter()
        .zip(w)
        .fold(DVector::zeros(y.len()), |acc, (x, wg)| acc + x * wg);
    let r = fit - y;
    features
        .iter()
        .zip(w)
        .map(|(x, wg)| {
            let a = wg - x.transpose() * &r * tau;
            let n = a.norm();
            if n <= lambda * tau {
                DVector::zeros(a.len())
            } else {
                a * ((n - lambda * tau) / n)
            }
        })
        .collect()
}

fn random_alpha(rng: &mut rand_chacha::ChaCha8Rng, problem: &ProblemInstance) -> DualCoefficients {
    DualCoefficients::from_matrix(common::gaussian_matrix(
        rng,
        problem.n_samples(),
        problem.n_groups(),
    ))
    .unwrap()
}

#[test]
fn residual_matches_explicit_features() {
    let mut rng = common::rng(1);
    for _ in 0..20 {
        let problem = common::small_group_lasso(&mut rng, 10, 5, 3);
        let features = explicit_features(&problem).unwrap();
        let alpha = random_alpha(&mut rng, &problem);
        let w = primal_of(&alpha, &features);
        let fit = features
            .iter()
            .zip(&w)
            .fold(DVector::zeros(problem.n_samples()), |acc, (x, wg)| {
                acc + x * wg
            });
        let expected = fit - problem.responses();
        let r = residual(&alpha, problem.gram(), problem.responses()).unwrap();
        assert!((r - &expected).amax() <= 1e-12 * expected.amax().max(1.0));
    }
}

#[test]
fn linear_blocks_have_rank_at_most_group_dim() {
    let mut rng = common::rng(2);
    let problem = common::group_lasso(&mut rng, 12, &[1, 2, 3, 4], 0.5);
    for (g, &d) in problem.gram().group_dims().unwrap().iter().enumerate() {
        let k = problem.gram().block(g);
        let sv = k.clone().svd(false, false).singular_values;
        let rank = sv.iter().filter(|&&s| s > 1e-9 * sv.max()).count();
        assert!(rank <= d, "group {g}: rank {rank} > {d}");
    }
}

#[test]
fn explicit_forward_backward_matches_every_iterate() {
    let mut rng = common::rng(3);
    for _ in 0..10 {
        let problem = common::small_group_lasso(&mut rng, 10, 5, 3);
        let features = explicit_features(&problem).unwrap();
        let tau = SolverConfig::default().tau(problem.gram()).unwrap();
        let lambda = problem.effective_lambda();
        let mut alpha = random_alpha(&mut rng, &problem);
        let mut w = primal_of(&alpha, &features);
        for n in 1..=200 {
            alpha = ikta_step(&alpha, &problem, tau).unwrap();
            w = explicit_step(&w, &features, problem.responses(), lambda, tau);
            for (g, (via_alpha, direct)) in primal_of(&alpha, &features).iter().zip(&w).enumerate()
            {
                let err = (via_alpha - direct).amax();
                assert!(err <= 1e-10, "iteration {n}, group {g}: {err:e}");
                assert_eq!(
                    alpha.is_group_zero(g),
                    direct.iter().all(|&v| v == 0.0),
                    "iteration {n}, group {g}"
                );
            }
        }
    }
}

fn random_psd_blocks(rng: &mut rand_chacha::ChaCha8Rng, m: usize, groups: usize) -> GramBlocks {
    let blocks = (0..groups)
        .map(|_| {
            let a = common::gaussian_matrix(rng, m, m);
            let k = &a * a.transpose();
            (&k + k.transpose()) * 0.5
        })
        .collect();
    GramBlocks::from_blocks(blocks, None, 1.0).unwrap()
}

#[test]
fn power_iteration_matches_dense_eigensolver() {
    let mut rng = common::rng(4);
    for _ in 0..20 {
        let gram = random_psd_blocks(&mut rng, 7, 3);
        let dense = SymmetricEigen::new(gram.block_sum().clone())
            .eigenvalues
            .max();
        let est = operator_norm(&gram, 1e-14, POWER_MAX_ITER * 10).unwrap();
        assert!((est - dense).abs() <= 1e-8 * dense, "{est} vs {dense}");
    }
}

proptest! {
    #[test]
    fn gram_sum_bound_holds(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let gram = random_psd_blocks(&mut rng, 5, 3);
        let top = SymmetricEigen::new(gram.block_sum().clone()).eigenvalues.max();
        let sum: f64 = gram.blocks().iter().map(|k| SymmetricEigen::new(k.clone()).eigenvalues.max()).sum();
        prop_assert!(top <= sum * (1.0 + 1e-12));
    }
}
