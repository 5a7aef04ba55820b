//! Per-round A2IPW and IPW terms and the running average that turns them into
//! an ATE estimate.

use crate::domain::{arm_probability, Arm};
use crate::error::{Error, Result};
use crate::policies::RewardModel;

fn check_pi(pi: f64) -> Result<()> {
    if pi > 0.0 && pi < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("allocation {pi} is outside (0, 1)")))
    }
}

/// `g / pi(a) * (y - r(a)) + (r(1) - r(0))` with `g = +1` for treatment and `-1` for control.
pub fn a2ipw_term(pi: f64, action: Arm, outcome: f64, model: &RewardModel) -> Result<f64> {
    check_pi(pi)?;
    let residual = outcome - model.get(action);
    Ok(action.sign() / arm_probability(pi, action) * residual + model.effect())
}

/// Inverse-propensity term `g / pi(a) * y`.
pub fn ipw_term(pi: f64, action: Arm, outcome: f64) -> Result<f64> {
    check_pi(pi)?;
    Ok(action.sign() / arm_probability(pi, action) * outcome)
}

/// Running mean of per-round terms, accumulated with Neumaier summation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EstimatorState {
    sum: f64,
    compensation: f64,
    rounds: u64,
}

impl EstimatorState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, term: f64) {
        let t = self.sum + term;
        if self.sum.abs() >= term.abs() {
            self.compensation += (self.sum - t) + term;
        } else {
            self.compensation += (term - t) + self.sum;
        }
        self.sum = t;
        self.rounds += 1;
    }

    pub fn sum_terms(&self) -> f64 {
        self.sum + self.compensation
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn finalize(&self) -> Result<f64> {
        if self.rounds == 0 {
            return Err(Error::domain("cannot finalize an estimator with no rounds"));
        }
        Ok(self.sum_terms() / self.rounds as f64)
    }
}

impl Extend<f64> for EstimatorState {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for t in iter {
            self.push(t);
        }
    }
}
