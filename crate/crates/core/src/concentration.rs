//! Time-uniform confidence sequences for arm standard deviations and the
//! induced confidence sequence for the Neyman allocation.
//!
//! The standard-deviation sequence is the empirical-Bernstein style interval
//! `[sigma_hat - 1.7 sqrt(L), sigma_hat + 4.2 sqrt(L)]` with
//! `L = boundary(n, delta) / n` and
//! `boundary(n, delta) = ln ln(2n) + 0.72 ln(5.2 / delta)`.
//! It is valid simultaneously for every `n >= 2` with probability `1 - delta`
//! for `[0, 1]`-valued observations.

use serde::{Deserialize, Serialize};

use crate::domain::{ArmStats, Interval};
use crate::error::{Error, Result};

/// Largest standard deviation a `[0, 1]`-valued variable can have.
pub const MAX_STDEV: f64 = 0.5;

/// Number of components in the good-event union bound; each per-arm
/// standard-deviation sequence runs at `delta / GOOD_EVENT_SPLIT`.
pub const GOOD_EVENT_SPLIT: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsParams {
    pub delta: f64,
    pub lower_c: f64,
    pub upper_c: f64,
}

impl CsParams {
    pub fn new(delta: f64) -> Result<Self> {
        check_delta(delta)?;
        Ok(Self {
            delta,
            lower_c: 1.7,
            upper_c: 4.2,
        })
    }

    /// Same constants at `delta / 5`.
    pub fn per_arm(&self) -> Self {
        Self {
            delta: self.delta / GOOD_EVENT_SPLIT,
            ..*self
        }
    }
}

impl Default for CsParams {
    fn default() -> Self {
        Self {
            delta: 0.05,
            lower_c: 1.7,
            upper_c: 4.2,
        }
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("delta = {delta} is outside (0, 1)")))
    }
}

/// `ln ln(2n) + 0.72 ln(5.2 / delta)`, defined for `n >= 2`.
pub fn boundary(n: u64, delta: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::domain(format!("boundary requires n >= 2, got {n}")));
    }
    check_delta(delta)?;
    Ok(boundary_unchecked(n, delta))
}

#[inline]
fn boundary_unchecked(n: u64, delta: f64) -> f64 {
    (2.0 * n as f64).ln().ln() + 0.72 * (5.2 / delta).ln()
}

/// Interval of all `[0, 1]` standard deviations.
pub fn vacuous_stdev_interval() -> Interval {
    Interval::ordered(0.0, MAX_STDEV)
}

/// Standard-deviation confidence interval using the arm's own count as the time index.
pub fn stdev_cs(stats: &ArmStats, params: &CsParams) -> Interval {
    stdev_cs_at(stats, params, stats.count())
}

/// Standard-deviation confidence interval with the boundary evaluated at
/// `time` (clamped to at least 2) and the width divided by the arm count.
pub fn stdev_cs_at(stats: &ArmStats, params: &CsParams, time: u64) -> Interval {
    let n = stats.count();
    if n < 2 {
        return vacuous_stdev_interval();
    }
    let radius = (boundary_unchecked(time.max(2), params.delta) / n as f64).sqrt();
    let sigma_hat = stats.stdev();
    let lo = (sigma_hat - params.lower_c * radius).max(0.0);
    let hi = (sigma_hat + params.upper_c * radius).min(MAX_STDEV);
    // lo can only exceed hi if sigma_hat exceeds the clamp through round-off
    Interval::ordered(lo.min(hi), hi)
}

/// Confidence interval for `sigma1 / (sigma0 + sigma1)` from per-arm intervals.
pub fn neyman_cs(cs0: &Interval, cs1: &Interval) -> Interval {
    let lo_den = cs0.hi() + cs1.lo();
    let hi_den = cs0.lo() + cs1.hi();
    let lo = if lo_den > 0.0 { cs1.lo() / lo_den } else { 0.0 };
    let hi = if hi_den > 0.0 { cs1.hi() / hi_den } else { 1.0 };
    Interval::ordered(lo, hi.max(lo))
}
