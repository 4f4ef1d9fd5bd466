//! Delayed-rejection adaptive Metropolis sampling.
//!
//! The sampler keeps a compact chain of uniquely accepted states, adapts a
//! multivariate-normal proposal from the full chain history, checkpoints
//! enough state to resume bitwise-identically, and runs either one chain
//! with fork-join parallel proposals or several independent chains.

// `!(x > 0.0)` checks are meant to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chainio;
pub mod error;
pub mod kernel;
pub mod parallel;
pub mod proposal;
pub mod refine;
pub mod rng;
pub mod simulation;
pub mod spec;
pub mod target;

pub use error::{Error, Result};
pub use kernel::{ChainRow, ChainRun, ChainStats};
pub use simulation::{run_simulation, SimulationOptions, SimulationResult};
pub use spec::{validate_spec, RawSpec, SpecSet};
pub use target::{FnObjective, Objective};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
