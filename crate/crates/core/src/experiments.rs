//! Synthetic experiment batches: random instances, support-size histograms
//! and support-evolution traces.
//!
//! Each instance draws from its own ChaCha8 stream seeded by
//! [`instance_seed`]`(master_seed, index)`, so a batch is reproducible from
//! `(config, master_seed)` alone and independent of scheduling.
//!
//! Draw order within an instance: points (row by row, iid N(0, 1)), then
//! bandwidths (Gaussian family, log-uniform on `sigma_range`), then the `s`
//! support groups (uniform without replacement), then the coefficients of
//! the support groups (iid N(0, 1), groups in increasing order), then the
//! noise (iid N(0, noise_std^2)). `y = sum_g K_g alpha*_g + noise`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{assemble_gram_blocks_with, KernelSpec, SAFETY_FACTOR};
use crate::model::{residual, Dataset, DualCoefficients, LambdaConvention, ProblemInstance};
use crate::parallel::Parallelism;
use crate::solver::{solve_from_zero, SolverConfig, StepSize};
use crate::support::{
    qualification_check, sandwich_check, support_of, SandwichVerdict, DEFAULT_EPS_REL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    GroupLasso,
    GaussianKernel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: Family,
    pub m: usize,
    /// Number of groups `G`.
    pub groups: usize,
    /// Size of the group support of `alpha*`.
    pub s: usize,
    pub lambda: f64,
    #[serde(default)]
    pub lambda_convention: LambdaConvention,
    /// Dimension of the points.
    pub p: usize,
    #[serde(default)]
    pub group_dims: Option<Vec<usize>>,
    #[serde(default)]
    pub sigma_range: Option<[f64; 2]>,
    pub noise_std: f64,
    pub n_instances: usize,
    /// Fixed iteration count `N` of each run.
    pub iters: usize,
    pub tau_factor: f64,
    pub master_seed: u64,
    /// Reference runs use `reference_factor * iters` iterations.
    #[serde(default = "default_reference_factor")]
    pub reference_factor: usize,
    #[serde(default = "default_reference_stop_tol")]
    pub reference_stop_tol: f64,
    #[serde(default = "default_eps_rel")]
    pub eps_rel: f64,
    #[serde(default)]
    pub record_traces: bool,
    #[serde(default = "default_trace_stride")]
    pub trace_stride: usize,
}

fn default_reference_factor() -> usize {
    10
}
fn default_reference_stop_tol() -> f64 {
    1e-12
}
fn default_eps_rel() -> f64 {
    DEFAULT_EPS_REL
}
fn default_trace_stride() -> usize {
    1
}

pub const DEFAULT_MASTER_SEED: u64 = 20_180_903;

impl ExperimentConfig {
    /// Group lasso: `(m, G, s, lambda) = (50, 20, 5, 0.2)`, `p = 100`, groups
    /// of 5 coordinates, `N = 5000`, 200 instances.
    pub fn group_lasso_paper() -> Self {
        Self {
            family: Family::GroupLasso,
            m: 50,
            groups: 20,
            s: 5,
            lambda: 0.2,
            lambda_convention: LambdaConvention::Raw,
            p: 100,
            group_dims: Some(vec![5; 20]),
            sigma_range: None,
            noise_std: 1e-2,
            n_instances: 200,
            iters: 5000,
            tau_factor: 0.8,
            master_seed: DEFAULT_MASTER_SEED,
            reference_factor: default_reference_factor(),
            reference_stop_tol: default_reference_stop_tol(),
            eps_rel: DEFAULT_EPS_REL,
            record_traces: false,
            trace_stride: default_trace_stride(),
        }
    }

    /// Gaussian kernels: same `(m, G, s, lambda)`, `p = 2`, bandwidths in
    /// `[0.1, 10]`, `N = 50000`, 200 instances.
    pub fn gaussian_kernel_paper() -> Self {
        Self {
            family: Family::GaussianKernel,
            p: 2,
            group_dims: None,
            sigma_range: Some([0.1, 10.0]),
            iters: 50_000,
            ..Self::group_lasso_paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.groups == 0 || self.p == 0 {
            return Err(Error::invalid("m, groups and p must be >= 1"));
        }
        if self.s > self.groups {
            return Err(Error::invalid(format!(
                "s = {} exceeds G = {}",
                self.s, self.groups
            )));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::invalid("lambda must be positive"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std must be >= 0"));
        }
        if self.iters == 0 {
            return Err(Error::invalid("iters must be >= 1"));
        }
        if self.reference_factor == 0 {
            return Err(Error::invalid("reference_factor must be >= 1"));
        }
        if self.trace_stride == 0 {
            return Err(Error::invalid("trace_stride must be >= 1"));
        }
        if !(self.tau_factor > 0.0 && self.tau_factor < 2.0) {
            return Err(Error::invalid("tau_factor must lie in (0, 2)"));
        }
        match self.family {
            Family::GroupLasso => {
                let dims = self
                    .group_dims
                    .as_ref()
                    .ok_or_else(|| Error::invalid("group-lasso family needs group_dims"))?;
                if dims.len() != self.groups {
                    return Err(Error::invalid(format!(
                        "group_dims has {} entries for G = {}",
                        dims.len(),
                        self.groups
                    )));
                }
                KernelSpec::LinearGroupProjection {
                    group_dims: dims.clone(),
                }
                .validate(self.p)?;
            }
            Family::GaussianKernel => {
                let [lo, hi] = self
                    .sigma_range
                    .ok_or_else(|| Error::invalid("gaussian-kernel family needs sigma_range"))?;
                if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                    return Err(Error::invalid(format!("invalid sigma_range [{lo}, {hi}]")));
                }
            }
        }
        Ok(())
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            step: StepSize::Relative(self.tau_factor),
            max_iters: self.iters,
            stop_tol: 0.0,
            record_trace: self.record_traces,
            trace_stride: self.trace_stride,
        }
    }

    pub fn reference_solver_config(&self) -> SolverConfig {
        SolverConfig {
            step: StepSize::Relative(self.tau_factor),
            max_iters: self.iters.saturating_mul(self.reference_factor),
            stop_tol: self.reference_stop_tol,
            record_trace: false,
            trace_stride: 1,
        }
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of instance `index`: `splitmix64(master_seed ^ splitmix64(index))`.
pub fn instance_seed(master_seed: u64, index: usize) -> u64 {
    splitmix64(master_seed ^ splitmix64(index as u64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedInstance {
    pub index: usize,
    pub seed: u64,
    pub problem: ProblemInstance,
    pub kernel: KernelSpec,
    pub alpha_star: DualCoefficients,
}

pub fn generate_instance(config: &ExperimentConfig, index: usize) -> Result<GeneratedInstance> {
    generate_instance_with(config, index, Parallelism::Sequential)
}

pub fn generate_instance_with(
    config: &ExperimentConfig,
    index: usize,
    par: Parallelism,
) -> Result<GeneratedInstance> {
    config.validate()?;
    if index >= config.n_instances {
        return Err(Error::invalid(format!(
            "instance index {index} out of range (n_instances = {})",
            config.n_instances
        )));
    }
    let seed = instance_seed(config.master_seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, groups, p) = (config.m, config.groups, config.p);

    let mut points = DMatrix::zeros(m, p);
    for i in 0..m {
        for j in 0..p {
            points[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let kernel = match config.family {
        Family::GroupLasso => KernelSpec::LinearGroupProjection {
            group_dims: config.group_dims.clone().unwrap_or_default(),
        },
        Family::GaussianKernel => {
            let [lo, hi] = config.sigma_range.unwrap_or([1.0, 1.0]);
            let (llo, lhi) = (lo.ln(), hi.ln());
            let sigmas = (0..groups)
                .map(|_| (llo + (lhi - llo) * rng.random::<f64>()).exp())
                .collect();
            KernelSpec::GaussianFamily { sigmas }
        }
    };
    let mut chosen = sample(&mut rng, groups, config.s).into_vec();
    chosen.sort_unstable();
    let mut alpha_star = DMatrix::zeros(m, groups);
    for &g in &chosen {
        for i in 0..m {
            alpha_star[(i, g)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let noise: Vec<f64> = (0..m)
        .map(|_| config.noise_std * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let placeholder = Dataset::new(points, DVector::zeros(m))?;
    let gram = assemble_gram_blocks_with(&placeholder, &kernel, SAFETY_FACTOR, par)?;
    let alpha_star = DualCoefficients::from_matrix(alpha_star)?;
    // K alpha* via the same summation as `residual`, so noise_std = 0 gives an exact fit
    let clean = residual(&alpha_star, &gram, &DVector::zeros(m))?;
    let y = DVector::from_iterator(m, clean.iter().zip(&noise).map(|(c, e)| c + e));
    let dataset = placeholder.with_responses(y)?;
    let problem = ProblemInstance::new(dataset, gram, config.lambda, config.lambda_convention)?;
    Ok(GeneratedInstance {
        index,
        seed,
        problem,
        kernel,
        alpha_star,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub index: usize,
    pub seed: u64,
    pub true_support: Vec<usize>,
    pub final_support: Vec<usize>,
    pub final_support_size: usize,
    pub final_objective: f64,
    pub final_step_norm: f64,
    pub last_support_change: usize,
    pub reference_support: Vec<usize>,
    pub reference_extended_support: Vec<usize>,
    pub reference_objective: f64,
    pub reference_iters: usize,
    pub reference_step_norm: f64,
    pub qc_margin: f64,
    pub qc_holds: bool,
    pub sandwich: SandwichVerdict,
}

/// Support evolution of one run at the recorded iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub run: usize,
    pub iters: Vec<usize>,
    pub supports: Vec<Vec<usize>>,
    pub objectives: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub config: ExperimentConfig,
    /// Final support size -> number of runs.
    pub histogram: BTreeMap<usize, usize>,
    pub per_run: Vec<RunRecord>,
    #[serde(skip)]
    pub traces: Option<Vec<RunTrace>>,
}

pub fn run_batch(config: &ExperimentConfig) -> Result<BatchResult> {
    run_batch_with(config, Parallelism::default())
}

/// Generates and solves every instance; instances are processed
/// independently and aggregated in index order.
pub fn run_batch_with(config: &ExperimentConfig, par: Parallelism) -> Result<BatchResult> {
    config.validate()?;
    let outcomes = par.map(config.n_instances, |index| {
        run_instance(config, index).map_err(|e| Error::Batch {
            index,
            source: Box::new(e),
        })
    });
    let mut histogram = BTreeMap::new();
    let mut per_run = Vec::with_capacity(config.n_instances);
    let mut traces = config.record_traces.then(Vec::new);
    for outcome in outcomes {
        let (record, trace) = outcome?;
        *histogram.entry(record.final_support_size).or_insert(0) += 1;
        per_run.push(record);
        if let (Some(all), Some(t)) = (traces.as_mut(), trace) {
            all.push(t);
        }
    }
    Ok(BatchResult {
        config: config.clone(),
        histogram,
        per_run,
        traces,
    })
}

fn run_instance(config: &ExperimentConfig, index: usize) -> Result<(RunRecord, Option<RunTrace>)> {
    let inst = generate_instance(config, index)?;
    let problem = &inst.problem;
    let (alpha, trace) = solve_from_zero(problem, &config.solver_config())?;
    let (reference, ref_trace) = solve_from_zero(problem, &config.reference_solver_config())?;
    let report = qualification_check(&reference, problem, config.eps_rel)?;
    let sandwich = sandwich_check(&trace, &report, trace.last_support_change())?;
    let final_support = support_of(&alpha);
    let record = RunRecord {
        index,
        seed: inst.seed,
        true_support: support_of(&inst.alpha_star).labels(),
        final_support_size: final_support.count(),
        final_support: final_support.labels(),
        final_objective: trace
            .objectives
            .last()
            .copied()
            .unwrap_or(trace.initial_objective),
        final_step_norm: trace.final_step_norm,
        last_support_change: trace.last_support_change(),
        reference_support: report.support.labels(),
        reference_extended_support: report.extended_support.labels(),
        reference_objective: ref_trace
            .objectives
            .last()
            .copied()
            .unwrap_or(ref_trace.initial_objective),
        reference_iters: ref_trace.iters_run,
        reference_step_norm: ref_trace.final_step_norm,
        qc_margin: report.qc_margin,
        qc_holds: report.qc_holds,
        sandwich,
    };
    let run_trace = config.record_traces.then(|| RunTrace {
        run: index,
        iters: trace.iters.clone(),
        supports: trace.supports.iter().map(|s| s.labels()).collect(),
        objectives: trace.objectives.clone(),
    });
    Ok((record, run_trace))
}

/// CSV `support_size,count`, ascending by size.
pub fn write_histogram<W: Write>(histogram: &BTreeMap<usize, usize>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["support_size", "count"])?;
    for (size, count) in histogram {
        w.serialize((size, count))?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_histogram(result: &BatchResult, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_histogram(&result.histogram, std::io::BufWriter::new(file))
}

pub fn read_histogram(path: &Path) -> Result<BTreeMap<usize, usize>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for row in reader.deserialize() {
        let (size, count): (usize, usize) = row?;
        if out.insert(size, count).is_some() {
            return Err(Error::Serialization(format!(
                "duplicate support size {size}"
            )));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub run: usize,
    pub iter: usize,
    pub support: Vec<usize>,
    pub objective: f64,
}

/// JSON lines, one per recorded iteration. With `final_sizes`, only runs
/// whose final support size is listed are written.
pub fn write_traces<W: Write>(
    result: &BatchResult,
    final_sizes: Option<&[usize]>,
    mut out: W,
) -> Result<usize> {
    let traces = result
        .traces
        .as_ref()
        .ok_or_else(|| Error::invalid("batch was run without trace recording"))?;
    let mut written = 0;
    for (trace, record) in traces.iter().zip(&result.per_run) {
        if let Some(sizes) = final_sizes {
            if !sizes.contains(&record.final_support_size) {
                continue;
            }
        }
        for ((iter, support), objective) in trace
            .iters
            .iter()
            .zip(&trace.supports)
            .zip(&trace.objectives)
        {
            let line = TraceLine {
                run: trace.run,
                iter: *iter,
                support: support.clone(),
                objective: *objective,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
            written += 1;
        }
    }
    out.flush()?;
    Ok(written)
}

pub fn emit_traces(
    result: &BatchResult,
    path: &Path,
    final_sizes: Option<&[usize]>,
) -> Result<usize> {
    let file = std::fs::File::create(path)?;
    write_traces(result, final_sizes, std::io::BufWriter::new(file))
}

pub fn read_traces(path: &Path) -> Result<Vec<TraceLine>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    file.lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

/// Config echo, histogram and per-run records as pretty JSON.
pub fn emit_summary(result: &BatchResult, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, result)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
