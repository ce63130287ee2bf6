use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nalgebra::DMatrix;
use smkl::experiments::{
    emit_histogram, emit_summary, emit_traces, generate_instance, run_batch_with, TraceLine,
    DEFAULT_MASTER_SEED,
};
use smkl::kernels::{assemble_gram_blocks, SAFETY_FACTOR};
use smkl::model::objective;
use smkl::oracle::{bcd_solve, enumerate_solve, MAX_ENUMERATION_GROUPS};
use smkl::solver::solve_from_zero;
use smkl::strata::{verify_lattice, LatticeVerdict};
use smkl::support::{
    certificate_norms, qualification_check, report_from_parts, sandwich_check, support_of,
    DEFAULT_EPS_REL,
};
use smkl::{
    Dataset, DualCoefficients, ExperimentConfig, Family, GramBlocks, LambdaConvention, Parallelism,
    ProblemInstance, SolverConfig, StepSize, SupportReport,
};

use crate::config::{self, invalid, FileConfig, Invalid};
use crate::manifest::RunManifest;
use crate::{BatchArgs, Common, Example, ReferenceKind, SolveArgs, Suite, VerifyArgs};

/// Verification check failure marker (exit code 4).
#[derive(Debug)]
struct ChecksFailed(usize);

impl std::fmt::Display for ChecksFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} check(s) failed", self.0)
    }
}

impl std::error::Error for ChecksFailed {}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Invalid>() {
            return 1;
        }
        if cause.is::<ChecksFailed>() {
            return 4;
        }
        if let Some(e) = cause.downcast_ref::<smkl::Error>() {
            match e {
                smkl::Error::Diverged { .. } => return 2,
                smkl::Error::Io(_) => return 3,
                smkl::Error::Batch { .. } => continue,
                _ => return 1,
            }
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 3;
        }
    }
    1
}

fn check_common(common: &Common) -> Result<()> {
    config::check_positive("iters", common.iters)?;
    config::check_positive("jobs", common.jobs)?;
    Ok(())
}

fn out_dir(common: &Common, file: &FileConfig) -> PathBuf {
    common
        .out_dir
        .clone()
        .or_else(|| file.output.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("smkl-out"))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn apply_overrides(cfg: &mut ExperimentConfig, common: &Common, file: &FileConfig) {
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(iters) = common.iters {
        cfg.iters = iters;
    }
    if let Some(lambda) = common.lambda {
        cfg.lambda = lambda;
    }
    if let Some(t) = common.tau_factor.or(file.solver.tau_factor) {
        cfg.tau_factor = t;
    }
    if let Some(eps) = file.solver.eps_rel {
        cfg.eps_rel = eps;
    }
}

struct SolveSetup {
    problem: ProblemInstance,
    alpha0: DualCoefficients,
    solver: SolverConfig,
    eps_rel: f64,
    echo: serde_json::Value,
    master_seed: Option<u64>,
}

fn scalar_example(args: &SolveArgs, file: &FileConfig) -> Result<SolveSetup> {
    let lambda = args.common.lambda.unwrap_or(1.0);
    let ds = Dataset::from_rows(&[vec![1.0]], &[1.0])?;
    let gram = GramBlocks::from_blocks(
        vec![DMatrix::from_element(1, 1, 1.0)],
        Some(vec![1]),
        SAFETY_FACTOR,
    )?;
    let problem = ProblemInstance::new(ds, gram, lambda, LambdaConvention::Raw)?;
    let step = match args.common.tau_factor {
        Some(f) => StepSize::Relative(f),
        None => StepSize::Absolute(0.5),
    };
    let solver = SolverConfig {
        step,
        max_iters: args.common.iters.or(file.solver.max_iters).unwrap_or(50),
        stop_tol: args.stop_tol.or(file.solver.stop_tol).unwrap_or(0.0),
        record_trace: true,
        trace_stride: file.solver.trace_stride.unwrap_or(1),
    };
    Ok(SolveSetup {
        problem,
        alpha0: DualCoefficients::from_element(1, 1, 1.0)?,
        echo: serde_json::json!({ "example": "paper-1d", "lambda": lambda, "solver": solver }),
        solver,
        eps_rel: file.solver.eps_rel.unwrap_or(DEFAULT_EPS_REL),
        master_seed: None,
    })
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening dataset {}", path.display()))?;
    let mut rows = Vec::new();
    let mut responses = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("reading dataset {}", path.display()))?;
        let values: Vec<f64> = record
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| invalid(format!("{} row {}: {e}", path.display(), i + 1)))?;
        let Some((&y, x)) = values.split_last() else {
            return Err(invalid(format!(
                "{} row {} is empty",
                path.display(),
                i + 1
            )));
        };
        if x.is_empty() {
            return Err(invalid(format!(
                "{} row {} has no features",
                path.display(),
                i + 1
            )));
        }
        rows.push(x.to_vec());
        responses.push(y);
    }
    if rows.is_empty() {
        return Err(invalid(format!("{} has no rows", path.display())));
    }
    Ok(Dataset::from_rows(&rows, &responses)?)
}

fn data_problem(args: &SolveArgs, file: &FileConfig) -> Result<SolveSetup> {
    let section = file.data.clone();
    let path = args
        .data
        .clone()
        .or_else(|| section.as_ref().map(|d| d.path.clone()))
        .ok_or_else(|| invalid("missing key `data.path`"))?;
    let kernel = file
        .kernel
        .clone()
        .ok_or_else(|| invalid("missing section `[kernel]` (needed with a dataset)"))?;
    let lambda = args
        .common
        .lambda
        .or(section.as_ref().and_then(|d| d.lambda))
        .ok_or_else(|| invalid("missing key `data.lambda` (or pass --lambda)"))?;
    let convention = section
        .as_ref()
        .map(|d| d.lambda_convention)
        .unwrap_or_default();
    let ds = read_dataset(&path)?;
    let gram = assemble_gram_blocks(&ds, &kernel, SAFETY_FACTOR)?;
    let problem = ProblemInstance::new(ds, gram, lambda, convention)?;
    let solver = SolverConfig {
        step: StepSize::Relative(
            args.common
                .tau_factor
                .or(file.solver.tau_factor)
                .unwrap_or(0.8),
        ),
        max_iters: args.common.iters.or(file.solver.max_iters).unwrap_or(5000),
        stop_tol: args.stop_tol.or(file.solver.stop_tol).unwrap_or(0.0),
        record_trace: true,
        trace_stride: file.solver.trace_stride.unwrap_or(1),
    };
    Ok(SolveSetup {
        alpha0: problem.zero_coefficients(),
        echo: serde_json::json!({
            "data": path, "kernel": kernel, "lambda": lambda, "lambda_convention": convention, "solver": solver,
        }),
        problem,
        solver,
        eps_rel: file.solver.eps_rel.unwrap_or(DEFAULT_EPS_REL),
        master_seed: None,
    })
}

fn generated_problem(args: &SolveArgs, file: &FileConfig) -> Result<SolveSetup> {
    let mut cfg = config::experiment(file, args.common.preset.as_deref())?.ok_or_else(|| {
        invalid("no problem given: pass --example, --data, --preset or a config with [experiment]")
    })?;
    apply_overrides(&mut cfg, &args.common, file);
    if let Some(n) = file
        .solver
        .max_iters
        .filter(|_| args.common.iters.is_none())
    {
        cfg.iters = n;
    }
    cfg.validate()?;
    if args.instance >= cfg.n_instances {
        return Err(invalid(format!(
            "--instance {} out of range for n_instances = {}",
            args.instance, cfg.n_instances
        )));
    }
    let inst = generate_instance(&cfg, args.instance)?;
    let solver = SolverConfig {
        stop_tol: args.stop_tol.or(file.solver.stop_tol).unwrap_or(0.0),
        record_trace: true,
        trace_stride: file.solver.trace_stride.unwrap_or(1),
        ..cfg.solver_config()
    };
    Ok(SolveSetup {
        alpha0: inst.problem.zero_coefficients(),
        echo: serde_json::json!({
            "experiment": cfg, "instance": args.instance, "instance_seed": inst.seed, "solver": solver,
        }),
        problem: inst.problem,
        solver,
        eps_rel: cfg.eps_rel,
        master_seed: Some(cfg.master_seed),
    })
}

/// Reference solution's report and a label for the method used.
fn reference_report(
    setup: &SolveSetup,
    kind: ReferenceKind,
) -> Result<(SupportReport, &'static str)> {
    let problem = &setup.problem;
    let small = problem.n_groups() <= 6 && problem.n_samples() <= 20;
    let use_oracle = match kind {
        ReferenceKind::Oracle => true,
        ReferenceKind::LongRun => false,
        ReferenceKind::Auto => small,
    };
    if use_oracle {
        if problem.n_groups() > MAX_ENUMERATION_GROUPS {
            return Err(invalid(format!(
                "oracle reference needs G <= {MAX_ENUMERATION_GROUPS}"
            )));
        }
        let oracle = enumerate_solve(problem, 1e-12)?;
        let report = report_from_parts(oracle.support, oracle.certificate_norms, setup.eps_rel);
        Ok((report, "oracle"))
    } else {
        let long = SolverConfig {
            max_iters: setup.solver.max_iters.saturating_mul(10),
            stop_tol: 1e-12,
            record_trace: false,
            ..setup.solver.clone()
        };
        let (alpha, _) = smkl::solver::solve(problem, &long, &setup.alpha0)?;
        Ok((
            qualification_check(&alpha, problem, setup.eps_rel)?,
            "long-run",
        ))
    }
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn solve(args: SolveArgs) -> Result<()> {
    check_common(&args.common)?;
    let file = config::load(args.common.config.as_deref())?;
    let setup = match (args.example, args.data.is_some() || file.data.is_some()) {
        (Some(Example::Scalar), _) => scalar_example(&args, &file)?,
        (None, true) => data_problem(&args, &file)?,
        (None, false) => generated_problem(&args, &file)?,
    };
    setup.solver.validate()?;
    if args.common.dry_run {
        println!("{}", serde_json::to_string_pretty(&setup.echo)?);
        return Ok(());
    }

    let mut manifest = RunManifest::new("solve", setup.echo.clone(), setup.master_seed);
    let (alpha, trace) = manifest.time("solve", || {
        smkl::solver::solve(&setup.problem, &setup.solver, &setup.alpha0)
    })?;
    let (reference, method) =
        manifest.time("reference", || reference_report(&setup, args.reference))?;
    let sandwich = sandwich_check(&trace, &reference, trace.last_support_change())?;
    let support = support_of(&alpha);

    let mut text = String::new();
    writeln!(text, "iterations={}", trace.iters_run)?;
    writeln!(text, "objective={}", objective(&alpha, &setup.problem)?)?;
    writeln!(text, "final_step_norm={}", trace.final_step_norm)?;
    writeln!(text, "supp={support}")?;
    writeln!(text, "supp_size={}", support.count())?;
    writeln!(text, "last_support_change={}", trace.last_support_change())?;
    writeln!(text, "reference={method}")?;
    writeln!(text, "reference_supp={}", reference.support)?;
    writeln!(text, "esupp={}", reference.extended_support)?;
    writeln!(
        text,
        "certificate_norms={}",
        join(&reference.certificate_norms)
    )?;
    writeln!(text, "qc_holds={}", reference.qc_holds)?;
    writeln!(text, "qc_margin={}", reference.qc_margin)?;
    writeln!(text, "eps_rel={}", reference.eps_rel)?;
    writeln!(
        text,
        "sandwich={}",
        if sandwich.passed() {
            "pass".to_string()
        } else {
            format!("{sandwich:?}").to_lowercase()
        }
    )?;
    writeln!(
        text,
        "iterate_certificate_norms={}",
        join(&certificate_norms(&alpha, &setup.problem)?)
    )?;
    print!("{text}");

    let dir = out_dir(&args.common, &file);
    create_dir(&dir)?;
    let report_path = dir.join("report.txt");
    std::fs::write(&report_path, &text)
        .with_context(|| format!("writing {}", report_path.display()))?;
    manifest.outputs.push(report_path);
    if args.traces || file.output.traces {
        let path = dir.join("traces.jsonl");
        let mut out = std::io::BufWriter::new(
            std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        );
        for ((iter, s), objective) in trace
            .iters
            .iter()
            .zip(&trace.supports)
            .zip(&trace.objectives)
        {
            let line = TraceLine {
                run: 0,
                iter: *iter,
                support: s.labels(),
                objective: *objective,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        manifest.outputs.push(path);
    }
    manifest.write(&dir)?;
    Ok(())
}

pub fn batch(args: BatchArgs) -> Result<()> {
    check_common(&args.common)?;
    config::check_positive("instances", args.instances)?;
    config::check_positive("trace-stride", args.trace_stride)?;
    let file = config::load(args.common.config.as_deref())?;
    let mut cfg = config::experiment(&file, args.common.preset.as_deref())?.ok_or_else(|| {
        invalid("no experiment given: pass --preset or a config with [experiment]")
    })?;
    apply_overrides(&mut cfg, &args.common, &file);
    if let Some(n) = args.instances {
        cfg.n_instances = n;
    }
    let trace_sizes = args
        .trace_sizes
        .clone()
        .or_else(|| file.output.trace_sizes.clone());
    cfg.record_traces |= args.traces || file.output.traces || trace_sizes.is_some();
    if let Some(stride) = args.trace_stride.or(file.solver.trace_stride) {
        cfg.trace_stride = stride;
    }
    cfg.validate()?;
    if args.common.dry_run {
        print!(
            "{}",
            toml::to_string(&cfg).context("encoding configuration")?
        );
        return Ok(());
    }

    let dir = out_dir(&args.common, &file);
    create_dir(&dir)?;
    let par = match args.common.jobs {
        Some(n) => Parallelism::with_jobs(Some(n)),
        None => Parallelism::default(),
    };
    let mut manifest =
        RunManifest::new("batch", serde_json::to_value(&cfg)?, Some(cfg.master_seed));
    let result = manifest.time("batch", || run_batch_with(&cfg, par))?;
    let write_start = std::time::Instant::now();
    let hist = dir.join("histogram.csv");
    emit_histogram(&result, &hist)?;
    manifest.outputs.push(hist);
    let summary = dir.join("summary.json");
    emit_summary(&result, &summary)?;
    manifest.outputs.push(summary);
    if cfg.record_traces {
        let traces = dir.join("traces.jsonl");
        emit_traces(&result, &traces, trace_sizes.as_deref())?;
        manifest.outputs.push(traces);
    }
    manifest.timings.push(crate::manifest::Phase {
        name: "write".into(),
        seconds: write_start.elapsed().as_secs_f64(),
    });
    let hist: Vec<String> = result
        .histogram
        .iter()
        .map(|(s, c)| format!("{s}:{c}"))
        .collect();
    println!("instances={}", cfg.n_instances);
    println!("histogram={}", hist.join(" "));
    println!(
        "sandwich_pass={}/{}",
        result
            .per_run
            .iter()
            .filter(|r| r.sandwich.passed())
            .count(),
        result.per_run.len()
    );
    manifest.write(&dir)?;
    println!("out_dir={}", dir.display());
    Ok(())
}

struct SuiteOutcome {
    objective: usize,
    bcd: usize,
    sandwich: usize,
    total: usize,
}

fn oracle_suite(n: usize, seed: u64) -> Result<SuiteOutcome> {
    let cfg = ExperimentConfig {
        family: Family::GroupLasso,
        m: 8,
        groups: 4,
        s: 2,
        p: 8,
        group_dims: Some(vec![2; 4]),
        n_instances: n,
        master_seed: seed,
        ..ExperimentConfig::group_lasso_paper()
    };
    let solver = SolverConfig {
        max_iters: 1_000_000,
        stop_tol: 1e-12,
        ..SolverConfig::default()
    };
    let mut out = SuiteOutcome {
        objective: 0,
        bcd: 0,
        sandwich: 0,
        total: n,
    };
    for i in 0..n {
        let problem = generate_instance(&cfg, i)?.problem;
        // lambda swept over [0.05, 1.95] * max_g ||X_g^* y||
        let unit = problem.with_lambda(1.0)?;
        let lmax = certificate_norms(&unit.zero_coefficients(), &unit)?
            .into_iter()
            .fold(0.0, f64::max);
        let factor = 0.05 + 1.9 * (i as f64 + 0.5) / n as f64;
        let problem = problem.with_lambda(factor * lmax)?;
        let (alpha, trace) = solve_from_zero(&problem, &solver)?;
        let oracle = enumerate_solve(&problem, 1e-10)?;
        let scale = oracle.objective.abs().max(f64::MIN_POSITIVE);
        let f = objective(&alpha, &problem)?;
        out.objective += usize::from((f - oracle.objective).abs() <= 1e-6 * scale);
        let bcd = bcd_solve(&problem, 1e-15, 1_000_000)?;
        out.bcd += usize::from((bcd.objective - oracle.objective).abs() <= 1e-6 * scale);
        let report = report_from_parts(oracle.support, oracle.certificate_norms, DEFAULT_EPS_REL);
        out.sandwich +=
            usize::from(sandwich_check(&trace, &report, trace.last_support_change())?.passed());
    }
    Ok(out)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn verify(args: VerifyArgs) -> Result<()> {
    check_common(&args.common)?;
    config::check_positive("instances", args.instances)?;
    let file = config::load(args.common.config.as_deref())?;
    let (lattice, suite) = match (args.lattice_g, args.oracle_suite) {
        (None, None) => (Some(8), Some(Suite::Small)),
        other => other,
    };
    if let Some(g) = lattice {
        if g == 0 || g > smkl::strata::MAX_LATTICE_GROUPS {
            return Err(invalid(format!(
                "--lattice-G must lie in 1..={}, got {g}",
                smkl::strata::MAX_LATTICE_GROUPS
            )));
        }
    }
    let instances = args.instances.unwrap_or(20);
    let seed = args.common.seed.unwrap_or(DEFAULT_MASTER_SEED);
    let echo = serde_json::json!({
        "lattice_G": lattice,
        "oracle_suite": suite.map(|_| "small"),
        "instances": instances,
        "master_seed": seed,
    });
    if args.common.dry_run {
        println!("{}", serde_json::to_string_pretty(&echo)?);
        return Ok(());
    }

    let mut manifest = RunManifest::new("verify", echo, Some(seed));
    let mut failed = 0;
    if let Some(g) = lattice {
        let v = manifest.time("lattice", || verify_lattice(g))?;
        match &v {
            LatticeVerdict::Pass { strata, pairs } => {
                println!("lattice G={g}: PASS ({strata} strata, {pairs} ordered pairs)")
            }
            LatticeVerdict::Fail(reason) => println!("lattice G={g}: FAIL {reason:?}"),
        }
        failed += usize::from(!v.passed());
    }
    if suite.is_some() {
        let o = manifest.time("oracle-suite", || oracle_suite(instances, seed))?;
        for (name, count) in [
            ("objective", o.objective),
            ("bcd", o.bcd),
            ("sandwich", o.sandwich),
        ] {
            println!(
                "oracle-suite small {name}: {} ({count}/{})",
                verdict(count == o.total),
                o.total
            );
            failed += usize::from(count != o.total);
        }
    }
    let dir = out_dir(&args.common, &file);
    create_dir(&dir)?;
    manifest.write(&dir)?;
    if failed > 0 {
        return Err(ChecksFailed(failed).into());
    }
    Ok(())
}
