#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use smkl::kernels::{assemble_gram_blocks, KernelSpec, SAFETY_FACTOR};
use smkl::support::certificate_norms;
use smkl::{Dataset, LambdaConvention, ProblemInstance};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `max_g ||X_g^* y||`, the smallest lambda with a zero solution.
pub fn lambda_max(problem: &ProblemInstance) -> f64 {
    let unit = problem.with_lambda(1.0).unwrap();
    certificate_norms(&unit.zero_coefficients(), &unit)
        .unwrap()
        .into_iter()
        .fold(0.0, f64::max)
}

/// Group-lasso instance with `m <= max_m`, `G <= max_g` groups of
/// `1..=max_d` coordinates and `lambda = factor * lambda_max`,
/// `factor` uniform on `[0.05, 2]`.
pub fn small_group_lasso(
    rng: &mut ChaCha8Rng,
    max_m: usize,
    max_g: usize,
    max_d: usize,
) -> ProblemInstance {
    let m = rng.random_range(2..=max_m);
    let groups = rng.random_range(1..=max_g);
    let dims: Vec<usize> = (0..groups).map(|_| rng.random_range(1..=max_d)).collect();
    let p = dims.iter().sum();
    let x = gaussian_matrix(rng, m, p);
    let y = gaussian_vector(rng, m);
    let factor = rng.random_range(0.05..=2.0);
    let ds = Dataset::new(x, y).unwrap();
    let gram = assemble_gram_blocks(
        &ds,
        &KernelSpec::LinearGroupProjection { group_dims: dims },
        SAFETY_FACTOR,
    )
    .unwrap();
    let problem = ProblemInstance::new(ds, gram, 1.0, LambdaConvention::Raw).unwrap();
    let lmax = lambda_max(&problem);
    problem.with_lambda(factor * lmax).unwrap()
}

/// Group-lasso instance with fixed shape.
pub fn group_lasso(
    rng: &mut ChaCha8Rng,
    m: usize,
    dims: &[usize],
    lambda_factor: f64,
) -> ProblemInstance {
    let p = dims.iter().sum();
    let x = gaussian_matrix(rng, m, p);
    let y = gaussian_vector(rng, m);
    let ds = Dataset::new(x, y).unwrap();
    let spec = KernelSpec::LinearGroupProjection {
        group_dims: dims.to_vec(),
    };
    let gram = assemble_gram_blocks(&ds, &spec, SAFETY_FACTOR).unwrap();
    let problem = ProblemInstance::new(ds, gram, 1.0, LambdaConvention::Raw).unwrap();
    let lmax = lambda_max(&problem);
    problem.with_lambda(lambda_factor * lmax).unwrap()
}
