//! Gram block assembly for the two kernel families and the spectral norm
//! estimate that fixes the step size.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, GramBlocks};
use crate::parallel::Parallelism;

/// Multiplier applied to the power-iteration estimate of `lambda_max`.
pub const SAFETY_FACTOR: f64 = 1.01;
pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum KernelSpec {
    /// Group lasso: group `g` is the canonical projection on `group_dims[g]`
    /// consecutive coordinates.
    LinearGroupProjection { group_dims: Vec<usize> },
    /// One Gaussian kernel `exp(-|x - x'|^2 / (2 sigma_g^2))` per group.
    GaussianFamily { sigmas: Vec<f64> },
}

impl KernelSpec {
    pub fn n_groups(&self) -> usize {
        match self {
            KernelSpec::LinearGroupProjection { group_dims } => group_dims.len(),
            KernelSpec::GaussianFamily { sigmas } => sigmas.len(),
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        match self {
            KernelSpec::LinearGroupProjection { group_dims } => {
                if group_dims.is_empty() {
                    return Err(Error::invalid("at least one group is required"));
                }
                if group_dims.contains(&0) {
                    return Err(Error::invalid("group dimensions must be >= 1"));
                }
                let total: usize = group_dims.iter().sum();
                if total != p {
                    return Err(Error::invalid(format!(
                        "group dimensions sum to {total} but points have dimension {p}"
                    )));
                }
            }
            KernelSpec::GaussianFamily { sigmas } => {
                if sigmas.is_empty() {
                    return Err(Error::invalid("at least one bandwidth is required"));
                }
                if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
                    return Err(Error::invalid(format!(
                        "bandwidths must be positive, got {s}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Column offsets of each group (linear projection only).
    pub fn group_offsets(group_dims: &[usize]) -> Vec<usize> {
        group_dims
            .iter()
            .scan(0, |acc, &d| {
                let start = *acc;
                *acc += d;
                Some(start)
            })
            .collect()
    }
}

pub fn assemble_gram_blocks(
    dataset: &Dataset,
    spec: &KernelSpec,
    safety: f64,
) -> Result<GramBlocks> {
    assemble_gram_blocks_with(dataset, spec, safety, Parallelism::default())
}

/// Builds one block per group; blocks are computed independently so the
/// result does not depend on `par`.
pub fn assemble_gram_blocks_with(
    dataset: &Dataset,
    spec: &KernelSpec,
    safety: f64,
    par: Parallelism,
) -> Result<GramBlocks> {
    spec.validate(dataset.dim())?;
    let x = dataset.points();
    match spec {
        KernelSpec::LinearGroupProjection { group_dims } => {
            let offsets = KernelSpec::group_offsets(group_dims);
            let blocks = par.map(group_dims.len(), |g| {
                linear_block(x, offsets[g], group_dims[g])
            });
            GramBlocks::from_blocks(blocks, Some(group_dims.clone()), safety)
        }
        KernelSpec::GaussianFamily { sigmas } => {
            let sq = squared_distances(x);
            let blocks = par.map(sigmas.len(), |g| gaussian_block(&sq, sigmas[g]));
            GramBlocks::from_blocks(blocks, None, safety)
        }
    }
}

fn linear_block(x: &DMatrix<f64>, start: usize, width: usize) -> DMatrix<f64> {
    let m = x.nrows();
    let mut k = DMatrix::zeros(m, m);
    for j in 0..m {
        for i in 0..=j {
            let v: f64 = (start..start + width).map(|c| x[(i, c)] * x[(j, c)]).sum();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn squared_distances(x: &DMatrix<f64>) -> DMatrix<f64> {
    let m = x.nrows();
    let mut d = DMatrix::zeros(m, m);
    for j in 0..m {
        for i in 0..j {
            let v: f64 = (0..x.ncols())
                .map(|c| (x[(i, c)] - x[(j, c)]).powi(2))
                .sum();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

fn gaussian_block(sq: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    let denom = 2.0 * sigma * sigma;
    sq.map(|d| (-d / denom).exp())
}

/// `lambda_max(sum_g K_g)` by power iteration (no safety factor).
pub fn operator_norm(gram: &GramBlocks, tol: f64, max_iter: usize) -> Result<f64> {
    largest_eigenvalue(gram.block_sum(), tol, max_iter)
}

/// Power iteration on a symmetric PSD matrix, stopping once the Rayleigh
/// quotient changes by at most `tol` relative.
pub(crate) fn largest_eigenvalue(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<f64> {
    let n = a.nrows();
    if n == 0 || max_iter == 0 {
        return Err(Error::invalid(
            "power iteration needs a non-empty matrix and max_iter >= 1",
        ));
    }
    // fixed, generic start vector (golden-ratio sequence)
    let mut v = nalgebra::DVector::from_fn(n, |i, _| {
        1.0 + ((i + 1) as f64 * 0.618_033_988_749_895).fract()
    });
    v /= v.norm();
    let mut estimate = f64::NAN;
    for iter in 1..=max_iter {
        let w = a * &v;
        let rq = v.dot(&w);
        let wn = w.norm();
        if wn == 0.0 {
            return Ok(0.0);
        }
        if !wn.is_finite() {
            return Err(Error::invalid("non-finite values during power iteration"));
        }
        if iter > 1 && (rq - estimate).abs() <= tol * rq.abs() {
            return Ok(rq);
        }
        estimate = rq;
        v = w / wn;
    }
    Err(Error::NonConvergence {
        iters: max_iter,
        estimate,
    })
}
