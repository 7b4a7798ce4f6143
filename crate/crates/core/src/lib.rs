//! Energy-aware multi-robot sensing: choose at most one trajectory per robot
//! to maximize mutual information about moving targets minus weighted energy
//! cost, by centralized or distributed local search.

// NaN has to fail the `!(x > 0.0)` parameter checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod central;
pub mod dls;
pub mod error;
pub mod experiment;
pub mod filtering;
pub mod objective;
pub mod plot;
pub mod scenario;
pub mod solver;
pub mod trace;
pub mod trajgen;
pub mod verify;
pub mod world;

pub use error::{Error, Result};
pub use objective::{
    CountingOracle, Objective, PartitionMatroid, Problem, SetOracle, SolutionSet, Target, TrajId, Trajectory,
};
pub use solver::{LocalOp, OpKind, RunMetrics, SolverResult};
