//! Sparse multiple kernel learning.
//!
//! The solver works entirely in representer coordinates: a model over `G`
//! feature maps is described by `G` Gram blocks `K_g` (each `m x m`) and a
//! coefficient matrix `alpha` with one column per group, the implicit primal
//! block being `w_g = X_g^* alpha_g`. On top of the iterative kernel
//! thresholding solver the crate provides support / extended-support
//! reporting, the strata lattice of the group norm, two independent oracle
//! solvers for small instances and a deterministic synthetic experiment
//! harness.
//!
//! With the default `parallel` feature, batch-level work (instances, oracle
//! candidates, Gram blocks, lattice rows) is spread over a rayon pool.
//! Without it every [`Parallelism`] request runs sequentially. Results are
//! bit-identical either way.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod kernels;
pub mod model;
pub mod oracle;
pub mod parallel;
pub mod solver;
pub mod strata;
pub mod support;

pub use error::{Error, Result};
pub use experiments::{BatchResult, ExperimentConfig, Family};
pub use kernels::KernelSpec;
pub use model::{Dataset, DualCoefficients, GramBlocks, LambdaConvention, ProblemInstance};
pub use parallel::Parallelism;
pub use solver::{SolveTrace, SolverConfig, StepSize};
pub use support::{GroupSet, SupportReport};
