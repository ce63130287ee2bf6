//! Problem data in representer coordinates and the elementary computations
//! on it: group dual norms, residuals and the objective.
//!
//! The objective minimized everywhere in the crate is
//!
//! ```text
//! F(w) = lambda * sum_g ||w_g||_{H_g} + 1/2 ||X w - y||^2,    w_g = X_g^* alpha_g
//! ```
//!
//! so `||w_g||^2 = alpha_g^T K_g alpha_g` and `X w = sum_g K_g alpha_g`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training set: `m` points in `R^p` (one per row) with scalar responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: DMatrix<f64>,
    responses: DVector<f64>,
}

impl Dataset {
    pub fn new(points: DMatrix<f64>, responses: DVector<f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::invalid("dataset needs at least one point"));
        }
        if points.ncols() == 0 {
            return Err(Error::invalid("points must have dimension p >= 1"));
        }
        Error::check_dim("dataset responses", points.nrows(), responses.len())?;
        if points
            .iter()
            .chain(responses.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(Self { points, responses })
    }

    pub fn from_rows(rows: &[Vec<f64>], responses: &[f64]) -> Result<Self> {
        let m = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::DimensionMismatch {
                context: "dataset point",
                expected: p,
                actual: bad.len(),
            });
        }
        let points = DMatrix::from_fn(m, p, |i, j| rows[i][j]);
        Self::new(points, DVector::from_column_slice(responses))
    }

    pub fn n_samples(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// `m x p`, one point per row.
    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn responses(&self) -> &DVector<f64> {
        &self.responses
    }

    pub fn with_responses(&self, responses: DVector<f64>) -> Result<Self> {
        Self::new(self.points.clone(), responses)
    }
}

/// The `G` Gram blocks of a problem together with their sum and the
/// Lipschitz constant used to pick step sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct GramBlocks {
    blocks: Vec<DMatrix<f64>>,
    block_sum: DMatrix<f64>,
    lipschitz: f64,
    group_dims: Option<Vec<usize>>,
}

/// Absolute tolerance for block symmetry.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Relative (to the trace) tolerance on the smallest eigenvalue of a block.
pub const PSD_TOL: f64 = 1e-10;

impl GramBlocks {
    /// Validates the blocks and estimates `lambda_max(sum_g K_g)` by power
    /// iteration; the stored Lipschitz constant is that estimate times
    /// `safety`.
    pub fn from_blocks(
        blocks: Vec<DMatrix<f64>>,
        group_dims: Option<Vec<usize>>,
        safety: f64,
    ) -> Result<Self> {
        if !(safety >= 1.0 && safety.is_finite()) {
            return Err(Error::invalid(format!(
                "safety factor must be >= 1, got {safety}"
            )));
        }
        let first = blocks
            .first()
            .ok_or_else(|| Error::invalid("at least one Gram block is required"))?;
        let m = first.nrows();
        if m == 0 {
            return Err(Error::invalid("Gram blocks must be non-empty"));
        }
        if let Some(dims) = &group_dims {
            Error::check_dim("group_dims", blocks.len(), dims.len())?;
        }
        for (g, k) in blocks.iter().enumerate() {
            Error::check_dim("Gram block rows", m, k.nrows())?;
            Error::check_dim("Gram block cols", m, k.ncols())?;
            validate_block(g, k)?;
        }
        let mut block_sum = DMatrix::zeros(m, m);
        for k in &blocks {
            block_sum += k;
        }
        let lambda_max = crate::kernels::largest_eigenvalue(
            &block_sum,
            crate::kernels::POWER_TOL,
            crate::kernels::POWER_MAX_ITER,
        )?;
        if !(lambda_max > 0.0) {
            return Err(Error::invalid(
                "sum of Gram blocks is zero; no step size exists",
            ));
        }
        Ok(Self {
            blocks,
            block_sum,
            lipschitz: lambda_max * safety,
            group_dims,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_samples(&self) -> usize {
        self.block_sum.nrows()
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn block(&self, g: usize) -> &DMatrix<f64> {
        &self.blocks[g]
    }

    pub fn block_sum(&self) -> &DMatrix<f64> {
        &self.block_sum
    }

    /// Upper estimate of `lambda_max(sum_g K_g)` (safety factor included).
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn group_dims(&self) -> Option<&[usize]> {
        self.group_dims.as_deref()
    }

    /// Same blocks in a different group order: `order[new] = old`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        Error::check_dim("group permutation", self.n_groups(), order.len())?;
        let mut seen = vec![false; order.len()];
        for &g in order {
            if g >= order.len() || std::mem::replace(&mut seen[g], true) {
                return Err(Error::invalid("not a permutation of the group labels"));
            }
        }
        Ok(Self {
            blocks: order.iter().map(|&g| self.blocks[g].clone()).collect(),
            block_sum: self.block_sum.clone(),
            lipschitz: self.lipschitz,
            group_dims: self
                .group_dims
                .as_ref()
                .map(|d| order.iter().map(|&g| d[g]).collect()),
        })
    }
}

fn validate_block(g: usize, k: &DMatrix<f64>) -> Result<()> {
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "Gram block {g} has non-finite entries"
        )));
    }
    let m = k.nrows();
    for j in 0..m {
        for i in (j + 1)..m {
            if (k[(i, j)] - k[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(Error::invalid(format!(
                    "Gram block {g} is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let trace = k.trace();
    let smallest = SymmetricEigen::new(k.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if smallest < -PSD_TOL * trace.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::invalid(format!(
            "Gram block {g} is not positive semidefinite (smallest eigenvalue {smallest:e})"
        )));
    }
    Ok(())
}

/// Coefficients `alpha` in `R^{m x G}`, column `g` holding `alpha_g`.
///
/// Groups removed by thresholding are stored as literal zero columns, so
/// the group support can be read without tolerances.
#[derive(Debug, Clone, PartialEq)]
pub struct DualCoefficients {
    alpha: DMatrix<f64>,
}

impl DualCoefficients {
    pub fn zeros(m: usize, groups: usize) -> Self {
        Self {
            alpha: DMatrix::zeros(m, groups),
        }
    }

    pub fn from_element(m: usize, groups: usize, value: f64) -> Result<Self> {
        Self::from_matrix(DMatrix::from_element(m, groups, value))
    }

    pub fn from_matrix(alpha: DMatrix<f64>) -> Result<Self> {
        if alpha.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("coefficients must be finite"));
        }
        Ok(Self { alpha })
    }

    pub(crate) fn from_columns_unchecked(m: usize, groups: usize, data: Vec<f64>) -> Self {
        Self {
            alpha: DMatrix::from_vec(m, groups, data),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn n_groups(&self) -> usize {
        self.alpha.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.alpha
    }

    pub fn column(&self, g: usize) -> &[f64] {
        let m = self.n_samples();
        &self.alpha.as_slice()[g * m..(g + 1) * m]
    }

    pub fn column_mut(&mut self, g: usize) -> &mut [f64] {
        let m = self.n_samples();
        &mut self.alpha.as_mut_slice()[g * m..(g + 1) * m]
    }

    pub fn is_group_zero(&self, g: usize) -> bool {
        self.column(g).iter().all(|&v| v == 0.0)
    }

    pub(crate) fn check_against(&self, gram: &GramBlocks) -> Result<()> {
        Error::check_dim("coefficient rows", gram.n_samples(), self.n_samples())?;
        Error::check_dim("coefficient groups", gram.n_groups(), self.n_groups())
    }
}

/// How the user-facing `lambda` is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaConvention {
    /// `lambda` multiplies the penalty of `lambda R(w) + 1/2 ||Xw - y||^2` as is.
    #[default]
    Raw,
    /// `lambda` is stated for the `1/(2m)`-normalized data fit and is scaled
    /// by `m` internally.
    PerSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    dataset: Dataset,
    gram: GramBlocks,
    lambda: f64,
    lambda_convention: LambdaConvention,
}

impl ProblemInstance {
    pub fn new(
        dataset: Dataset,
        gram: GramBlocks,
        lambda: f64,
        lambda_convention: LambdaConvention,
    ) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        Error::check_dim(
            "Gram blocks vs dataset",
            dataset.n_samples(),
            gram.n_samples(),
        )?;
        Ok(Self {
            dataset,
            gram,
            lambda,
            lambda_convention,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn gram(&self) -> &GramBlocks {
        &self.gram
    }

    pub fn responses(&self) -> &DVector<f64> {
        self.dataset.responses()
    }

    pub fn n_samples(&self) -> usize {
        self.gram.n_samples()
    }

    pub fn n_groups(&self) -> usize {
        self.gram.n_groups()
    }

    /// The value supplied by the user.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn lambda_convention(&self) -> LambdaConvention {
        self.lambda_convention
    }

    /// Penalty weight actually used by the solver.
    pub fn effective_lambda(&self) -> f64 {
        match self.lambda_convention {
            LambdaConvention::Raw => self.lambda,
            LambdaConvention::PerSample => self.lambda * self.n_samples() as f64,
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(
            self.dataset.clone(),
            self.gram.clone(),
            lambda,
            self.lambda_convention,
        )
    }

    pub fn zero_coefficients(&self) -> DualCoefficients {
        DualCoefficients::zeros(self.n_samples(), self.n_groups())
    }
}

/// `out = K v` for a column-major symmetric `K`.
pub(crate) fn sym_matvec(k: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    let m = v.len();
    let data = k.as_slice();
    out.fill(0.0);
    for (j, &vj) in v.iter().enumerate() {
        if vj == 0.0 {
            continue;
        }
        let col = &data[j * m..(j + 1) * m];
        for (o, &kij) in out.iter_mut().zip(col) {
            *o += kij * vj;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `sqrt(max(0, v^T K v))`, the `H_g`-norm of `X_g^* v`.
pub(crate) fn quad_norm(k: &DMatrix<f64>, v: &[f64], scratch: &mut [f64]) -> f64 {
    if v.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    sym_matvec(k, v, scratch);
    dot(v, scratch).max(0.0).sqrt()
}

/// `||X_g^* v||_{H_g} = sqrt(v^T K_g v)`, clamped at zero before the root.
pub fn group_dual_norm(v: &[f64], block: &DMatrix<f64>) -> Result<f64> {
    Error::check_dim("group_dual_norm", block.nrows(), v.len())?;
    Error::check_dim("group_dual_norm", block.ncols(), v.len())?;
    let mut scratch = vec![0.0; v.len()];
    Ok(quad_norm(block, v, &mut scratch))
}

/// `r = sum_g K_g alpha_g - y`, i.e. `X w - y` for the implicit `w`.
pub fn residual(
    alpha: &DualCoefficients,
    gram: &GramBlocks,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    alpha.check_against(gram)?;
    Error::check_dim("residual responses", gram.n_samples(), y.len())?;
    let m = gram.n_samples();
    let mut r = vec![0.0; m];
    let mut scratch = vec![0.0; m];
    for (g, k) in gram.blocks().iter().enumerate() {
        let col = alpha.column(g);
        if col.iter().all(|&v| v == 0.0) {
            continue;
        }
        sym_matvec(k, col, &mut scratch);
        for (ri, si) in r.iter_mut().zip(&scratch) {
            *ri += si;
        }
    }
    for (ri, yi) in r.iter_mut().zip(y.iter()) {
        *ri -= yi;
    }
    Ok(DVector::from_vec(r))
}

/// `lambda * sum_g ||w_g|| + 1/2 ||X w - y||^2` with the effective lambda.
pub fn objective(alpha: &DualCoefficients, problem: &ProblemInstance) -> Result<f64> {
    let r = residual(alpha, problem.gram(), problem.responses())?;
    let mut scratch = vec![0.0; problem.n_samples()];
    let penalty: f64 = problem
        .gram()
        .blocks()
        .iter()
        .enumerate()
        .map(|(g, k)| quad_norm(k, alpha.column(g), &mut scratch))
        .sum();
    Ok(problem.effective_lambda() * penalty + 0.5 * r.norm_squared())
}

/// Per-group `||X_g^* r||` for a residual `r` (not divided by lambda).
pub(crate) fn residual_group_norms(gram: &GramBlocks, r: &[f64]) -> Vec<f64> {
    let mut scratch = vec![0.0; r.len()];
    gram.blocks()
        .iter()
        .map(|k| quad_norm(k, r, &mut scratch))
        .collect()
}
