//! Adaptive treatment allocation for average-treatment-effect estimation.
//!
//! The crate implements the optimistic policy-tracking allocation rule
//! (`optrack`), which plays the point of a confidence sequence for the Neyman
//! allocation closest to `1/2`, together with the A2IPW estimator, clipping
//! baselines, Neyman oracles, an exact evaluator and a deterministic Monte
//! Carlo harness.

pub mod concentration;
pub mod config;
pub mod domain;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod harness;
pub mod plot;
pub mod policies;
pub mod report;

pub use concentration::{boundary, neyman_cs, stdev_cs, CsParams};
pub use config::{parse_config, SimulationConfig};
pub use domain::{sample_outcome, Arm, ArmStats, Environment, Interval, RandomStream, RoundRecord, Trajectory};
pub use error::{Error, Result};
pub use estimators::{a2ipw_term, ipw_term, EstimatorState};
pub use evaluation::{
    analytic_variance, brute_force_mse, detect_exploration_end, enumerate, neyman_loss, regret_step, RunMetrics,
    TruthContext,
};
pub use harness::{derive_seed, run_grid, run_replication, AggregateMetrics, CellResult, StreamKey};
pub use policies::{Algorithm, BoundaryTimeMode, PolicySettings, PolicyState, RewardModel};
pub use report::{read_results, write_results, ResultRow};
