//! Sequential vs rayon execution of the data-parallel loops.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use smkl::experiments::{generate_instance, run_batch_with};
use smkl::kernels::{assemble_gram_blocks_with, SAFETY_FACTOR};
use smkl::oracle::enumerate_solve_with;
use smkl::strata::{transfer_jr, transfer_jr_star, verify_lattice_with};
use smkl::{ExperimentConfig, Parallelism};

const MODES: [(&str, Parallelism); 2] = [
    ("sequential", Parallelism::Sequential),
    ("parallel", Parallelism::Parallel(None)),
];

fn small_batch() -> ExperimentConfig {
    ExperimentConfig {
        m: 20,
        groups: 8,
        s: 3,
        p: 16,
        group_dims: Some(vec![2; 8]),
        n_instances: 8,
        iters: 500,
        ..ExperimentConfig::group_lasso_paper()
    }
}

fn batch(c: &mut Criterion) {
    let cfg = small_batch();
    let mut group = c.benchmark_group("run_batch");
    group.sample_size(10);
    for (name, par) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_batch_with(black_box(&cfg), par).unwrap())
        });
    }
    group.finish();
}

fn assemble(c: &mut Criterion) {
    let cfg = ExperimentConfig {
        n_instances: 1,
        ..ExperimentConfig::gaussian_kernel_paper()
    };
    let inst = generate_instance(&cfg, 0).unwrap();
    let mut group = c.benchmark_group("assemble_gaussian_blocks");
    for (name, par) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                assemble_gram_blocks_with(inst.problem.dataset(), &inst.kernel, SAFETY_FACTOR, par)
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn enumerate(c: &mut Criterion) {
    let cfg = ExperimentConfig {
        m: 10,
        groups: 6,
        s: 2,
        p: 12,
        group_dims: Some(vec![2; 6]),
        lambda: 1.0,
        n_instances: 1,
        ..ExperimentConfig::group_lasso_paper()
    };
    let problem = generate_instance(&cfg, 0).unwrap().problem;
    let mut group = c.benchmark_group("enumerate_solve");
    group.sample_size(10);
    for (name, par) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| enumerate_solve_with(black_box(&problem), 1e-10, par).unwrap())
        });
    }
    group.finish();
}

fn lattice(c: &mut Criterion) {
    let mut group = c.benchmark_group("verify_lattice_g8");
    for (name, par) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                verify_lattice_with(black_box(8), transfer_jr, transfer_jr_star, par).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, batch, assemble, enumerate, lattice);
criterion_main!(benches);
