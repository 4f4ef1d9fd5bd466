//! Parallel execution: fork-join single chains, independent multi-chains
//! and the contribution and speedup model.

mod fabric;
mod forkjoin;
mod model;
mod multichain;

pub use fabric::{Evaluation, Fabric, LocalFabric, ObjectiveFactory, ThreadFabric};
pub use forkjoin::{run_fork_join, FabricKind, ForkJoinRun, ScalingReport};
pub use model::{fit_effective_acceptance, geometric_contribution, predict_speedup, SpeedupPrediction};
pub use multichain::{
    ks_matrix, run_multi_chain, run_multi_chain_sessions, KsEntry, KsMatrix, MultiChainRun, RankSession,
    KS_WARNING_LEVEL,
};
