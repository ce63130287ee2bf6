//! Reference solvers for small instances, independent of the thresholding
//! iteration.
//!
//! * [`enumerate_solve`] tries every candidate support `S`. On `S` the
//!   stationarity system `X_g^*(Xw - y) + lambda w_g / ||w_g|| = 0` is solved
//!   by a damped reweighted fixed point: with `t_g = ||w_g|| / lambda` the
//!   majorized problem has the closed form
//!   `alpha_g = t_g (I + sum_{h in S} t_h K_h)^{-1} y`, and the iterate moves
//!   halfway towards it. A candidate is accepted when it converges with
//!   every block nonzero and the groups outside `S` satisfy the certificate
//!   bound.
//! * [`bcd_solve`] runs cyclic exact block minimization on explicit group
//!   features (group lasso only); each block subproblem reduces to a scalar
//!   equation in the block norm.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::model::{dot, sym_matvec, DualCoefficients, ProblemInstance};
use crate::parallel::Parallelism;
use crate::support::GroupSet;

pub const MAX_ENUMERATION_GROUPS: usize = 10;
pub const DAMPING: f64 = 0.5;
const FIXED_POINT_MAX_ITER: usize = 50_000;
/// A block is considered collapsed below this fraction of the largest block.
const COLLAPSE_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum OracleSolution {
    /// Representer coefficients (support enumeration).
    Coefficients(DualCoefficients),
    /// Explicit primal blocks `w_g` (block coordinate descent).
    Primal(Vec<DVector<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub solution: OracleSolution,
    pub objective: f64,
    pub support: GroupSet,
    /// `||X_g^*(Xw - y)|| / lambda` per group.
    pub certificate_norms: Vec<f64>,
    /// Largest violation of the optimality conditions, relative to lambda.
    pub kkt_residual: f64,
}

#[derive(Debug, Clone)]
struct Candidate {
    alpha: Vec<f64>,
    objective: f64,
    support: GroupSet,
    certificates: Vec<f64>,
    kkt: f64,
}

pub fn enumerate_solve(problem: &ProblemInstance, tol: f64) -> Result<OracleResult> {
    enumerate_solve_with(problem, tol, Parallelism::default())
}

/// Support enumeration; candidates are evaluated independently and the
/// winner is picked by objective, then by support size, then by label order.
pub fn enumerate_solve_with(
    problem: &ProblemInstance,
    tol: f64,
    par: Parallelism,
) -> Result<OracleResult> {
    let groups = problem.n_groups();
    if groups > MAX_ENUMERATION_GROUPS {
        return Err(Error::invalid(format!(
            "support enumeration limited to G <= {MAX_ENUMERATION_GROUPS}, got {groups}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("oracle tolerance must be positive"));
    }
    let candidates = par.map(1usize << groups, |mask| {
        solve_on_support(problem, mask as u64, tol)
    });
    let best = candidates
        .into_iter()
        .flatten()
        .reduce(|best, c| if better(&c, &best) { c } else { best })
        .ok_or_else(|| {
            Error::OracleFailure("no candidate support satisfied the optimality conditions".into())
        })?;
    let m = problem.n_samples();
    Ok(OracleResult {
        solution: OracleSolution::Coefficients(DualCoefficients::from_columns_unchecked(
            m, groups, best.alpha,
        )),
        objective: best.objective,
        support: best.support,
        certificate_norms: best.certificates,
        kkt_residual: best.kkt,
    })
}

fn better(c: &Candidate, best: &Candidate) -> bool {
    let scale = 1e-12 * best.objective.abs().max(1.0);
    if (c.objective - best.objective).abs() > scale {
        return c.objective < best.objective;
    }
    if c.support.count() != best.support.count() {
        return c.support.count() < best.support.count();
    }
    c.support.labels() < best.support.labels()
}

fn solve_on_support(problem: &ProblemInstance, mask: u64, tol: f64) -> Option<Candidate> {
    let gram = problem.gram();
    let m = problem.n_samples();
    let groups = problem.n_groups();
    let lambda = problem.effective_lambda();
    let y = problem.responses();
    let support = GroupSet::from_mask(groups, mask);
    let members: Vec<usize> = support.iter().collect();
    let mut alpha = vec![0.0; m * groups];
    let mut scratch = vec![0.0; m];

    let weighted_solve = |t: &[f64]| -> Option<DVector<f64>> {
        let mut sys = DMatrix::identity(m, m);
        for (&g, &tg) in members.iter().zip(t) {
            sys += gram.block(g) * tg;
        }
        sys.cholesky().map(|c| c.solve(y))
    };

    if !members.is_empty() {
        let t0 = vec![1.0 / gram.lipschitz(); members.len()];
        let v = weighted_solve(&t0)?;
        for (&g, &tg) in members.iter().zip(&t0) {
            for i in 0..m {
                alpha[g * m + i] = tg * v[i];
            }
        }
        let mut converged = false;
        for _ in 0..FIXED_POINT_MAX_ITER {
            let norms: Vec<f64> = members
                .iter()
                .map(|&g| {
                    crate::model::quad_norm(gram.block(g), &alpha[g * m..(g + 1) * m], &mut scratch)
                })
                .collect();
            let largest = norms.iter().copied().fold(0.0, f64::max);
            if !(largest > 0.0) || norms.iter().any(|&n| n <= COLLAPSE_RATIO * largest) {
                return None;
            }
            if stationarity(problem, &alpha, &members, &norms) <= tol {
                converged = true;
                break;
            }
            let t: Vec<f64> = norms.iter().map(|n| n / lambda).collect();
            let v = weighted_solve(&t)?;
            for (&g, &tg) in members.iter().zip(&t) {
                for i in 0..m {
                    let target = tg * v[i];
                    let cur = &mut alpha[g * m + i];
                    *cur = (1.0 - DAMPING) * *cur + DAMPING * target;
                }
            }
        }
        if !converged {
            return None;
        }
    }

    let coeffs = DualCoefficients::from_columns_unchecked(m, groups, alpha.clone());
    let r = crate::model::residual(&coeffs, gram, y).ok()?;
    let certificates: Vec<f64> = crate::model::residual_group_norms(gram, r.as_slice())
        .into_iter()
        .map(|n| n / lambda)
        .collect();
    let outside = (0..groups)
        .filter(|g| !support.contains(*g))
        .map(|g| (certificates[g] - 1.0).max(0.0))
        .fold(0.0, f64::max);
    if outside > tol {
        return None;
    }
    let norms: Vec<f64> = members
        .iter()
        .map(|&g| crate::model::quad_norm(gram.block(g), &alpha[g * m..(g + 1) * m], &mut scratch))
        .collect();
    let inside = if members.is_empty() {
        0.0
    } else {
        stationarity(problem, &alpha, &members, &norms)
    };
    let objective = lambda * norms.iter().sum::<f64>() + 0.5 * r.norm_squared();
    Some(Candidate {
        alpha,
        objective,
        support,
        certificates,
        kkt: inside.max(outside),
    })
}

/// `max_{g in S} ||X_g^*(r + lambda alpha_g / ||w_g||)|| / lambda`.
fn stationarity(problem: &ProblemInstance, alpha: &[f64], members: &[usize], norms: &[f64]) -> f64 {
    let gram = problem.gram();
    let m = problem.n_samples();
    let lambda = problem.effective_lambda();
    let y = problem.responses();
    let mut r: Vec<f64> = y.iter().map(|v| -v).collect();
    let mut u = vec![0.0; m];
    for &g in members {
        sym_matvec(gram.block(g), &alpha[g * m..(g + 1) * m], &mut u);
        for (ri, ui) in r.iter_mut().zip(&u) {
            *ri += ui;
        }
    }
    let mut q = vec![0.0; m];
    members
        .iter()
        .zip(norms)
        .map(|(&g, &n)| {
            for ((qi, ri), ai) in q.iter_mut().zip(&r).zip(&alpha[g * m..(g + 1) * m]) {
                *qi = ri + lambda * ai / n;
            }
            sym_matvec(gram.block(g), &q, &mut u);
            dot(&q, &u).max(0.0).sqrt() / lambda
        })
        .fold(0.0, f64::max)
}

/// Explicit feature matrices `X_g` (`m x d_g`) of a group-lasso instance.
pub fn explicit_features(problem: &ProblemInstance) -> Result<Vec<DMatrix<f64>>> {
    let dims = problem
        .gram()
        .group_dims()
        .ok_or_else(|| Error::invalid("explicit features need a linear group-projection kernel"))?;
    let x = problem.dataset().points();
    let total: usize = dims.iter().sum();
    Error::check_dim("group dimensions vs points", x.ncols(), total)?;
    Ok(KernelSpec::group_offsets(dims)
        .into_iter()
        .zip(dims)
        .map(|(start, &d)| x.columns(start, d).into_owned())
        .collect())
}

struct Block {
    features: DMatrix<f64>,
    eigvecs: DMatrix<f64>,
    eigvals: DVector<f64>,
}

/// Cyclic block coordinate minimization in explicit coordinates.
pub fn bcd_solve(problem: &ProblemInstance, tol: f64, max_sweeps: usize) -> Result<OracleResult> {
    let features = explicit_features(problem)?;
    let lambda = problem.effective_lambda();
    let y = problem.responses();
    let groups = features.len();
    let blocks: Vec<Block> = features
        .into_iter()
        .map(|z| {
            let eig = SymmetricEigen::new(z.transpose() * &z);
            Block {
                features: z,
                eigvecs: eig.eigenvectors,
                eigvals: eig.eigenvalues.map(|v| v.max(0.0)),
            }
        })
        .collect();
    let mut w: Vec<DVector<f64>> = blocks
        .iter()
        .map(|b| DVector::zeros(b.features.ncols()))
        .collect();
    let mut fit = DVector::zeros(y.len());
    let objective_of = |w: &[DVector<f64>], fit: &DVector<f64>| {
        lambda * w.iter().map(|b| b.norm()).sum::<f64>() + 0.5 * (fit - y).norm_squared()
    };
    let mut previous = objective_of(&w, &fit);

    for _ in 0..max_sweeps {
        for (g, block) in blocks.iter().enumerate() {
            let partial = y - &fit + &block.features * &w[g];
            let c = block.features.transpose() * &partial;
            let new = block_minimizer(block, &c, lambda);
            fit += &block.features * (&new - &w[g]);
            w[g] = new;
        }
        // recompute to avoid drift in the running fit
        fit = blocks
            .iter()
            .zip(&w)
            .fold(DVector::zeros(y.len()), |acc, (b, wg)| {
                acc + &b.features * wg
            });
        let current = objective_of(&w, &fit);
        if !current.is_finite() {
            return Err(Error::OracleFailure(
                "block coordinate descent produced non-finite values".into(),
            ));
        }
        if (previous - current).abs() <= tol * current.abs().max(1.0) {
            let r = &fit - y;
            let mut certificates = Vec::with_capacity(groups);
            let mut kkt: f64 = 0.0;
            for (b, wg) in blocks.iter().zip(&w) {
                let grad = b.features.transpose() * &r;
                certificates.push(grad.norm() / lambda);
                let n = wg.norm();
                let violation = if n > 0.0 {
                    (&grad + wg * (lambda / n)).norm() / lambda
                } else {
                    (grad.norm() / lambda - 1.0).max(0.0)
                };
                kkt = kkt.max(violation);
            }
            let support = GroupSet::from_indices(
                groups,
                (0..groups).filter(|&g| w[g].iter().any(|&v| v != 0.0)),
            );
            return Ok(OracleResult {
                solution: OracleSolution::Primal(w),
                objective: current,
                support,
                certificate_norms: certificates,
                kkt_residual: kkt,
            });
        }
        previous = current;
    }
    Err(Error::OracleFailure(format!(
        "block coordinate descent did not converge in {max_sweeps} sweeps"
    )))
}

/// `argmin_b lambda ||b|| + 1/2 ||Z b - partial||^2` given `c = Z^T partial`.
fn block_minimizer(block: &Block, c: &DVector<f64>, lambda: f64) -> DVector<f64> {
    if c.norm() <= lambda {
        return DVector::zeros(c.len());
    }
    let c_hat = block.eigvecs.transpose() * c;
    let mu = &block.eigvals;
    // phi(rho) = sum_i c_i^2 / (mu_i rho + lambda)^2 - 1, decreasing in rho,
    // phi(0) > 0; its root is the block norm
    let phi = |rho: f64| -> f64 {
        c_hat
            .iter()
            .zip(mu.iter())
            .map(|(ci, mi)| (ci / (mi * rho + lambda)).powi(2))
            .sum::<f64>()
            - 1.0
    };
    let mut hi = c.norm() / mu.max().max(f64::MIN_POSITIVE);
    let mut grow = 0;
    while phi(hi) > 0.0 && grow < 200 {
        hi *= 2.0;
        grow += 1;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let rho = 0.5 * (lo + hi);
    let scaled = DVector::from_iterator(
        c_hat.len(),
        c_hat
            .iter()
            .zip(mu.iter())
            .map(|(ci, mi)| ci * rho / (mi * rho + lambda)),
    );
    &block.eigvecs * scaled
}
