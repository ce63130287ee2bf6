//! Iterative kernel thresholding: forward-backward splitting on the
//! coefficients `alpha`.
//!
//! One step reads
//!
//! ```text
//! r        = sum_h K_h alpha_h - y
//! alpha_g' = T_{lambda tau, g}(alpha_g - tau r)          for every g
//! ```
//!
//! where `T_{t,g}(a)` is zero when `||X_g^* a|| <= t` and
//! `(1 - t / ||X_g^* a||) a` otherwise. The residual is shared by all groups.
//!
//! The solver keeps the products `K_g alpha_g` between steps. Since the new
//! column is a multiple of `a`, its product is the same multiple of `K_g a`,
//! which is needed anyway for the group norm; a step therefore costs one
//! matrix-vector product per group.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, sym_matvec, DualCoefficients, GramBlocks, ProblemInstance};
use crate::support::{support_of, GroupSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepSize {
    /// `tau = factor / L`, `0 < factor < 2`.
    Relative(f64),
    /// Explicit `tau`, must satisfy `0 < tau < 2 / L`.
    Absolute(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub step: StepSize,
    pub max_iters: usize,
    /// Stop once `||w^{n+1} - w^n||_H <= stop_tol`; `0` runs all `max_iters`.
    pub stop_tol: f64,
    pub record_trace: bool,
    pub trace_stride: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step: StepSize::Relative(0.8),
            max_iters: 5000,
            stop_tol: 0.0,
            record_trace: true,
            trace_stride: 1,
        }
    }
}

impl SolverConfig {
    pub fn with_tau_factor(tau_factor: f64, max_iters: usize) -> Self {
        Self {
            step: StepSize::Relative(tau_factor),
            max_iters,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be >= 1"));
        }
        if self.trace_stride == 0 {
            return Err(Error::invalid("trace_stride must be >= 1"));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::invalid("stop_tol must be >= 0"));
        }
        if let StepSize::Relative(f) = self.step {
            if !(f > 0.0 && f < 2.0) {
                return Err(Error::invalid(format!(
                    "tau_factor must lie in (0, 2), got {f}"
                )));
            }
        }
        Ok(())
    }

    /// Step size for a given set of blocks.
    pub fn tau(&self, gram: &GramBlocks) -> Result<f64> {
        self.validate()?;
        let tau = match self.step {
            StepSize::Relative(f) => f / gram.lipschitz(),
            StepSize::Absolute(t) => t,
        };
        check_tau(tau, gram)?;
        Ok(tau)
    }
}

fn check_tau(tau: f64, gram: &GramBlocks) -> Result<()> {
    let bound = 2.0 / gram.lipschitz();
    if tau > 0.0 && tau < bound {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "step size {tau} outside (0, {bound})"
        )))
    }
}

/// Observables of the iterates `w^1, w^2, ...` of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    /// Iteration numbers of the recorded entries (every `trace_stride`-th
    /// iterate plus the last one).
    pub iters: Vec<usize>,
    #[serde(skip)]
    pub supports: Vec<GroupSet>,
    pub objectives: Vec<f64>,
    /// `||w^n - w^{n-1}||_H` for the recorded `n`.
    pub step_norms: Vec<f64>,
    pub iters_run: usize,
    /// Every iteration at which the support changed, starting with
    /// `(0, supp(alpha^0))`. Covers all iterations whatever the stride.
    #[serde(skip)]
    pub support_changes: Vec<(usize, GroupSet)>,
    pub initial_objective: f64,
    pub final_step_norm: f64,
}

impl SolveTrace {
    /// First iteration from which the support stays constant.
    pub fn last_support_change(&self) -> usize {
        self.support_changes.last().map_or(0, |(n, _)| *n)
    }

    pub fn final_support(&self) -> Option<&GroupSet> {
        self.support_changes.last().map(|(_, s)| s)
    }

    /// Support of `w^n` for any `n <= iters_run`.
    pub fn support_at(&self, n: usize) -> Option<&GroupSet> {
        if n > self.iters_run {
            return None;
        }
        let idx = self
            .support_changes
            .partition_point(|(start, _)| *start <= n);
        self.support_changes
            .get(idx.checked_sub(1)?)
            .map(|(_, s)| s)
    }
}

/// `T_{threshold,g}(a)`: exact zero when `||X_g^* a|| <= threshold`, radial
/// shrinkage otherwise.
pub fn group_threshold(
    a: &[f64],
    block: &nalgebra::DMatrix<f64>,
    threshold: f64,
) -> Result<Vec<f64>> {
    if !(threshold > 0.0) {
        return Err(Error::invalid(format!(
            "threshold must be positive, got {threshold}"
        )));
    }
    Error::check_dim("group_threshold", block.nrows(), a.len())?;
    let mut u = vec![0.0; a.len()];
    sym_matvec(block, a, &mut u);
    let nu = dot(a, &u).max(0.0).sqrt();
    if nu <= threshold {
        Ok(vec![0.0; a.len()])
    } else {
        let shrunk = nu - threshold;
        Ok(a.iter().map(|v| v * shrunk / nu).collect())
    }
}

/// Iterate state: columns of `alpha`, the cached products `K_g alpha_g` and
/// the shared residual.
struct IktaState {
    m: usize,
    alpha: Vec<f64>,
    prod: Vec<f64>,
    r: Vec<f64>,
    a: Vec<f64>,
    u: Vec<f64>,
}

struct StepStats {
    step_norm: f64,
    objective: f64,
}

impl IktaState {
    fn new(alpha: &DualCoefficients, gram: &GramBlocks, y: &[f64]) -> Self {
        let m = gram.n_samples();
        let g_count = gram.n_groups();
        let data = alpha.matrix().as_slice().to_vec();
        let mut prod = vec![0.0; m * g_count];
        for (g, k) in gram.blocks().iter().enumerate() {
            sym_matvec(k, &data[g * m..(g + 1) * m], &mut prod[g * m..(g + 1) * m]);
        }
        let mut state = Self {
            m,
            alpha: data,
            prod,
            r: vec![0.0; m],
            a: vec![0.0; m],
            u: vec![0.0; m],
        };
        state.refresh_residual(y);
        state
    }

    fn refresh_residual(&mut self, y: &[f64]) {
        let m = self.m;
        self.r.fill(0.0);
        for pg in self.prod.chunks_exact(m) {
            for (ri, pi) in self.r.iter_mut().zip(pg) {
                *ri += pi;
            }
        }
        for (ri, yi) in self.r.iter_mut().zip(y) {
            *ri -= yi;
        }
    }

    fn step(&mut self, gram: &GramBlocks, y: &[f64], lambda: f64, tau: f64) -> StepStats {
        let m = self.m;
        let threshold = lambda * tau;
        let mut step_sq = 0.0;
        let mut penalty = 0.0;
        for (g, k) in gram.blocks().iter().enumerate() {
            let col = g * m..(g + 1) * m;
            for ((ai, xi), ri) in self.a.iter_mut().zip(&self.alpha[col.clone()]).zip(&self.r) {
                *ai = xi - tau * ri;
            }
            sym_matvec(k, &self.a, &mut self.u);
            let nu = dot(&self.a, &self.u).max(0.0).sqrt();
            let alpha_g = &mut self.alpha[col.clone()];
            let prod_g = &mut self.prod[col];
            if nu <= threshold {
                // ||w_g' - w_g||^2 = alpha_g^T K_g alpha_g
                step_sq += dot(alpha_g, prod_g).max(0.0);
                alpha_g.fill(0.0);
                prod_g.fill(0.0);
            } else {
                // (nu - t) / nu rather than 1 - t / nu: no cancellation when nu ~ t
                let shrunk = nu - threshold;
                let mut d_sq = 0.0;
                for i in 0..m {
                    let new_a = self.a[i] * shrunk / nu;
                    let new_p = self.u[i] * shrunk / nu;
                    d_sq += (new_a - alpha_g[i]) * (new_p - prod_g[i]);
                    alpha_g[i] = new_a;
                    prod_g[i] = new_p;
                }
                step_sq += d_sq.max(0.0);
                penalty += shrunk;
            }
        }
        self.refresh_residual(y);
        StepStats {
            step_norm: step_sq.sqrt(),
            objective: lambda * penalty + 0.5 * dot(&self.r, &self.r),
        }
    }

    fn support(&self, groups: usize) -> GroupSet {
        GroupSet::from_indices(
            groups,
            (0..groups).filter(|&g| {
                self.alpha[g * self.m..(g + 1) * self.m]
                    .iter()
                    .any(|&v| v != 0.0)
            }),
        )
    }

    fn into_coefficients(self, groups: usize) -> DualCoefficients {
        DualCoefficients::from_columns_unchecked(self.m, groups, self.alpha)
    }
}

/// One thresholding step from `alpha` with step size `tau`.
pub fn ikta_step(
    alpha: &DualCoefficients,
    problem: &ProblemInstance,
    tau: f64,
) -> Result<DualCoefficients> {
    let gram = problem.gram();
    alpha.check_against(gram)?;
    check_tau(tau, gram)?;
    let y = problem.responses().as_slice();
    let mut state = IktaState::new(alpha, gram, y);
    state.step(gram, y, problem.effective_lambda(), tau);
    Ok(state.into_coefficients(gram.n_groups()))
}

/// Runs the iteration from `alpha0` for `config.max_iters` steps or until
/// the `H`-norm of a step drops to `config.stop_tol`.
pub fn solve(
    problem: &ProblemInstance,
    config: &SolverConfig,
    alpha0: &DualCoefficients,
) -> Result<(DualCoefficients, SolveTrace)> {
    let gram = problem.gram();
    alpha0.check_against(gram)?;
    if alpha0.matrix().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("initial coefficients must be finite"));
    }
    let tau = config.tau(gram)?;
    let lambda = problem.effective_lambda();
    let y = problem.responses().as_slice();
    let groups = gram.n_groups();

    let mut state = IktaState::new(alpha0, gram, y);
    let mut trace = SolveTrace {
        initial_objective: crate::model::objective(alpha0, problem)?,
        support_changes: vec![(0, support_of(alpha0))],
        ..SolveTrace::default()
    };
    let mut current = support_of(alpha0);

    for n in 1..=config.max_iters {
        let stats = state.step(gram, y, lambda, tau);
        if !stats.objective.is_finite() || !stats.step_norm.is_finite() {
            return Err(Error::Diverged { iteration: n });
        }
        let support = state.support(groups);
        if support != current {
            trace.support_changes.push((n, support.clone()));
            current = support;
        }
        trace.iters_run = n;
        trace.final_step_norm = stats.step_norm;
        let stop = config.stop_tol > 0.0 && stats.step_norm <= config.stop_tol;
        let last = stop || n == config.max_iters;
        if (config.record_trace && n % config.trace_stride == 0) || last {
            trace.iters.push(n);
            trace.supports.push(current.clone());
            trace.objectives.push(stats.objective);
            trace.step_norms.push(stats.step_norm);
        }
        if stop {
            break;
        }
    }
    Ok((state.into_coefficients(groups), trace))
}

/// Cold start from `alpha = 0`.
pub fn solve_from_zero(
    problem: &ProblemInstance,
    config: &SolverConfig,
) -> Result<(DualCoefficients, SolveTrace)> {
    solve(problem, config, &problem.zero_coefficients())
}

/// `||w(a) - w(b)||_H = sqrt(sum_g (a_g - b_g)^T K_g (a_g - b_g))`.
pub fn primal_distance(
    a: &DualCoefficients,
    b: &DualCoefficients,
    gram: &GramBlocks,
) -> Result<f64> {
    a.check_against(gram)?;
    b.check_against(gram)?;
    let m = gram.n_samples();
    let mut d = vec![0.0; m];
    let mut u = vec![0.0; m];
    let mut total = 0.0;
    for (g, k) in gram.blocks().iter().enumerate() {
        for ((di, x), y) in d.iter_mut().zip(a.column(g)).zip(b.column(g)) {
            *di = x - y;
        }
        sym_matvec(k, &d, &mut u);
        total += dot(&d, &u).max(0.0);
    }
    Ok(total.sqrt())
}
