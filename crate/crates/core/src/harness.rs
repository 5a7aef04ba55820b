//! Deterministic parallel Monte Carlo engine.
//!
//! Every replication owns a ChaCha8 stream keyed by
//! `(master_seed, instance, algorithm, horizon)` with the replication index as
//! the stream id, so results never depend on scheduling or worker count.
//! Replications run on a rayon pool and are reduced in index order.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::concentration::{stdev_cs, CsParams};
use crate::config::SimulationConfig;
use crate::domain::{sample_outcome, Arm, ArmStats, Environment, RandomStream, RoundRecord, Trajectory};
use crate::error::{Error, Result};
use crate::estimators::{a2ipw_term, EstimatorState};
use crate::evaluation::{is_exploring, neyman_loss, regret_step, RunMetrics, TruthContext};
use crate::policies::{Algorithm, PolicySettings, PolicyState};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Coordinates of one replication inside a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub instance: u64,
    pub algorithm: u64,
    pub horizon: u64,
    pub replication: u64,
}

/// Random stream for one grid coordinate.
///
/// The 256-bit ChaCha key is the mixed master seed followed by the raw
/// instance, algorithm and horizon indices, and the replication index selects
/// the ChaCha stream, so distinct tuples always map to distinct streams.
pub fn derive_seed(master_seed: u64, key: StreamKey) -> RandomStream {
    let words = [splitmix64(master_seed), key.instance, key.algorithm, key.horizon];
    let mut bytes = [0u8; 32];
    for (chunk, w) in bytes.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    RandomStream::from_key(bytes, key.replication)
}

/// Runs one replication of `horizon` rounds, optionally recording the trajectory.
pub fn simulate(
    env: &Environment,
    algorithm: Algorithm,
    settings: PolicySettings,
    horizon: u64,
    rng: &mut RandomStream,
    record: bool,
) -> Result<(RunMetrics, Option<Trajectory>)> {
    if horizon == 0 {
        return Err(Error::domain("horizon must be at least 1"));
    }
    let truth = TruthContext::new(*env)?;
    let sigmas = Arm::BOTH.map(|arm| env.sigma(arm));
    let mut policy = PolicyState::new(algorithm, settings, env);
    let mut estimator = EstimatorState::new();
    let mut trajectory = record.then(|| Trajectory::with_capacity(horizon as usize));
    let mut cum_regret = 0.0;
    let mut exploration_time = None;
    let mut cs_violations = 0;

    for t in 1..=horizon {
        let pi = policy.select();
        if !(pi > 0.0 && pi < 1.0) {
            return Err(Error::Invariant(format!("{algorithm} produced allocation {pi} at round {t}")));
        }
        let model = policy.reward_model();
        let loss = neyman_loss(pi, &model, &truth);
        cum_regret += regret_step(loss, &truth);
        if exploration_time.is_none() && !is_exploring(pi) {
            exploration_time = Some(t);
        }
        let cs = policy.sigma_cs();
        if cs.iter().zip(sigmas).any(|(i, s)| !i.contains(s)) {
            cs_violations += 1;
        }

        let action = if rng.bernoulli(pi) { Arm::Treatment } else { Arm::Control };
        let outcome = sample_outcome(env, action, rng);
        let term = a2ipw_term(pi, action, outcome, &model)?;
        if !term.is_finite() {
            return Err(Error::Invariant(format!("non-finite estimator term at round {t}")));
        }
        estimator.push(term);
        policy.observe(action, outcome)?;
        if let Some(traj) = trajectory.as_mut() {
            traj.rounds.push(RoundRecord {
                pi,
                action,
                outcome,
                a2ipw_term: term,
                loss,
            });
        }
    }

    let estimate = estimator.finalize()?;
    let metrics = RunMetrics {
        estimate,
        sq_error: (estimate - env.ate()).powi(2),
        cum_regret,
        exploration_time,
        cs_violations,
        horizon,
    };
    Ok((metrics, trajectory))
}

fn grid_inputs(config: &SimulationConfig, instance_idx: usize, algorithm_idx: usize, horizon_idx: usize) -> Result<(Environment, Algorithm, u64)> {
    let &(mu0, mu1) = config
        .instances
        .get(instance_idx)
        .ok_or_else(|| Error::domain(format!("instance index {instance_idx} out of range")))?;
    let algorithm = *config
        .algorithms
        .get(algorithm_idx)
        .ok_or_else(|| Error::domain(format!("algorithm index {algorithm_idx} out of range")))?;
    let horizon = *config
        .horizons
        .get(horizon_idx)
        .ok_or_else(|| Error::domain(format!("horizon index {horizon_idx} out of range")))?;
    Ok((Environment::bernoulli(mu0, mu1)?, algorithm, horizon))
}

/// One replication at a grid coordinate.
pub fn run_replication(
    config: &SimulationConfig,
    instance_idx: usize,
    algorithm_idx: usize,
    horizon_idx: usize,
    replication_idx: u64,
) -> Result<RunMetrics> {
    run_replication_traced(config, instance_idx, algorithm_idx, horizon_idx, replication_idx, false).map(|(m, _)| m)
}

pub fn run_replication_traced(
    config: &SimulationConfig,
    instance_idx: usize,
    algorithm_idx: usize,
    horizon_idx: usize,
    replication_idx: u64,
    record: bool,
) -> Result<(RunMetrics, Option<Trajectory>)> {
    let (env, algorithm, horizon) = grid_inputs(config, instance_idx, algorithm_idx, horizon_idx)?;
    let mut rng = derive_seed(
        config.master_seed,
        StreamKey {
            instance: instance_idx as u64,
            algorithm: algorithm_idx as u64,
            horizon: horizon_idx as u64,
            replication: replication_idx,
        },
    );
    simulate(&env, algorithm, config.policy_settings()?, horizon, &mut rng, record)
}

/// Running mean and unbiased variance.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Standard error of the mean; zero for a single observation.
    fn standard_error(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
        }
    }
}

/// Per-cell summary across replications.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateMetrics {
    pub replications: u64,
    /// `T * mean((estimate - ate)^2)`.
    pub normalized_mse: f64,
    pub normalized_mse_se: f64,
    /// Mean of `sum_t (loss_t - vstar)`.
    pub mean_regret: f64,
    pub mean_regret_se: f64,
    /// `normalized_mse - vstar`.
    pub mse_regret: f64,
    pub mean_estimate: f64,
    pub estimate_se: f64,
    /// `None` when the median replication never left `1/2`.
    pub median_exploration_time: Option<f64>,
    /// Fraction of replications with at least one confidence-sequence violation.
    pub cs_violation_rate: f64,
    pub wall_time: Duration,
}

/// Reduces replications in slice order.
pub fn aggregate(runs: &[RunMetrics], truth: &TruthContext, wall_time: Duration) -> Result<AggregateMetrics> {
    let first = runs.first().ok_or_else(|| Error::domain("cannot aggregate zero replications"))?;
    let horizon = first.horizon as f64;
    let mut sq = Moments::default();
    let mut regret = Moments::default();
    let mut est = Moments::default();
    let mut violated = 0u64;
    for r in runs {
        sq.push(r.sq_error);
        regret.push(r.cum_regret);
        est.push(r.estimate);
        violated += u64::from(r.cs_violations > 0);
    }
    let normalized_mse = horizon * sq.mean;
    Ok(AggregateMetrics {
        replications: runs.len() as u64,
        normalized_mse,
        normalized_mse_se: horizon * sq.standard_error(),
        mean_regret: regret.mean,
        mean_regret_se: regret.standard_error(),
        mse_regret: normalized_mse - truth.vstar,
        mean_estimate: est.mean,
        estimate_se: est.standard_error(),
        median_exploration_time: median_exploration_time(runs),
        cs_violation_rate: violated as f64 / runs.len() as f64,
        wall_time,
    })
}

/// Median with "never" ordered after every finite time.
pub fn median_exploration_time(runs: &[RunMetrics]) -> Option<f64> {
    let mut times: Vec<f64> = runs
        .iter()
        .map(|r| r.exploration_time.map_or(f64::INFINITY, |t| t as f64))
        .collect();
    if times.is_empty() {
        return None;
    }
    times.sort_by(f64::total_cmp);
    let n = times.len();
    let median = if n % 2 == 1 {
        times[n / 2]
    } else {
        0.5 * (times[n / 2 - 1] + times[n / 2])
    };
    median.is_finite().then_some(median)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellKey {
    pub instance_idx: usize,
    pub mu0: f64,
    pub mu1: f64,
    pub algorithm_idx: usize,
    pub algorithm: Algorithm,
    pub horizon_idx: usize,
    pub horizon: u64,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub key: CellKey,
    /// Aggregate metrics, or the first failing replication's diagnostic.
    pub outcome: std::result::Result<AggregateMetrics, String>,
}

fn build_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n.max(1));
    }
    builder
        .build()
        .map_err(|e| Error::Invariant(format!("cannot start worker pool: {e}")))
}

/// All replications of one cell, in replication order.
pub fn run_cell(config: &SimulationConfig, instance_idx: usize, algorithm_idx: usize, horizon_idx: usize) -> Result<Vec<RunMetrics>> {
    (0..config.replications)
        .into_par_iter()
        .map(|rep| run_replication(config, instance_idx, algorithm_idx, horizon_idx, rep))
        .collect()
}

/// Runs every `(instance, algorithm, horizon)` cell. Failing cells are
/// reported in their [`CellResult`] and do not stop the grid.
pub fn run_grid(config: &SimulationConfig, workers: Option<usize>) -> Result<Vec<CellResult>> {
    config.validate()?;
    let pool = build_pool(workers)?;
    let mut cells = Vec::new();
    for (instance_idx, &(mu0, mu1)) in config.instances.iter().enumerate() {
        let truth = TruthContext::new(Environment::bernoulli(mu0, mu1)?)?;
        for (algorithm_idx, &algorithm) in config.algorithms.iter().enumerate() {
            for (horizon_idx, &horizon) in config.horizons.iter().enumerate() {
                let key = CellKey {
                    instance_idx,
                    mu0,
                    mu1,
                    algorithm_idx,
                    algorithm,
                    horizon_idx,
                    horizon,
                };
                let start = Instant::now();
                let runs = pool.install(|| run_cell(config, instance_idx, algorithm_idx, horizon_idx));
                let outcome = runs
                    .and_then(|runs| aggregate(&runs, &truth, start.elapsed()))
                    .map_err(|e| e.to_string());
                cells.push(CellResult { key, outcome });
            }
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub streams: u64,
    pub horizon: u64,
    pub delta: f64,
    pub violating_streams: u64,
}

impl CoverageReport {
    pub fn violation_rate(&self) -> f64 {
        self.violating_streams as f64 / self.streams as f64
    }
}

/// Fraction of i.i.d. Bernoulli(`mu`) streams whose true standard deviation
/// leaves the interval at level `delta` at any count in `2..=horizon`.
pub fn coverage_experiment(mu: f64, delta: f64, horizon: u64, streams: u64, master_seed: u64, workers: Option<usize>) -> Result<CoverageReport> {
    let params = CsParams::new(delta)?;
    let env = Environment::bernoulli(mu, mu)?;
    let sigma = env.sigma(Arm::Treatment);
    let pool = build_pool(workers)?;
    let violating: Result<u64> = pool.install(|| {
        (0..streams)
            .into_par_iter()
            .map(|s| {
                let mut rng = derive_seed(
                    master_seed,
                    StreamKey {
                        instance: u64::MAX,
                        algorithm: 0,
                        horizon,
                        replication: s,
                    },
                );
                let mut stats = ArmStats::new();
                for n in 1..=horizon {
                    stats.update(sample_outcome(&env, Arm::Treatment, &mut rng))?;
                    if n >= 2 && !stdev_cs(&stats, &params).contains(sigma) {
                        return Ok(1);
                    }
                }
                Ok(0)
            })
            .try_reduce(|| 0, |a, b| Ok(a + b))
    });
    Ok(CoverageReport {
        streams,
        horizon,
        delta,
        violating_streams: violating?,
    })
}
