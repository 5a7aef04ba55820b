//! Environment-aware metrics: Neyman loss and regret, exploration time, the
//! closed-form A2IPW variance for fixed designs, and an exact enumeration
//! oracle for tiny horizons.

use crate::domain::{arm_probability, Arm, Environment, OutcomeFamily, Trajectory};
use crate::error::{Error, Result};
use crate::estimators::{a2ipw_term, EstimatorState};
use crate::policies::{PolicyState, RewardModel};

/// Tolerance used to decide whether an allocation still equals `1/2`.
pub const EXPLORATION_TOLERANCE: f64 = 1e-12;

/// Largest horizon accepted by the enumeration oracle (`4^T` leaves).
pub const MAX_ENUMERATION_HORIZON: usize = 4;

/// Ground truth needed to score a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthContext {
    pub env: Environment,
    /// Optimal variance `(sigma0 + sigma1)^2`.
    pub vstar: f64,
    pub neyman: f64,
    /// `sigma1 - sigma0`.
    pub sigma_gap: f64,
}

impl TruthContext {
    pub fn new(env: Environment) -> Result<Self> {
        let (s0, s1) = (env.sigma(Arm::Control), env.sigma(Arm::Treatment));
        let neyman = env.neyman();
        let closed_form = (s0 + s1) * (s0 + s1);
        // Evaluate vstar through the same loss expression the evaluator uses so
        // that the Neyman oracle's per-round regret is exactly zero.
        let vstar = if neyman > 0.0 && neyman < 1.0 {
            fixed_design_variance(&env, neyman)
        } else {
            closed_form
        };
        if (vstar - closed_form).abs() > 1e-12 {
            return Err(Error::Invariant(format!(
                "optimal variance {vstar} disagrees with (sigma0 + sigma1)^2 = {closed_form}"
            )));
        }
        Ok(Self {
            env,
            vstar,
            neyman,
            sigma_gap: s1 - s0,
        })
    }
}

fn fixed_design_variance(env: &Environment, pi: f64) -> f64 {
    neyman_loss_terms(env, pi, RewardModel::true_means(env))
}

#[inline]
fn neyman_loss_terms(env: &Environment, pi: f64, model: RewardModel) -> f64 {
    Arm::BOTH
        .iter()
        .map(|&arm| {
            let p = arm_probability(pi, arm);
            let eps = env.mean(arm) - model.get(arm);
            env.variance(arm) / p + (1.0 - p) / p * eps * eps
        })
        .sum()
}

/// `sum_a [ sigma_a^2 / pi(a) + (1 - pi(a)) / pi(a) * eps(a)^2 ]` with `eps(a) = mu_a - r(a)`.
pub fn neyman_loss(pi: f64, model: &RewardModel, truth: &TruthContext) -> f64 {
    neyman_loss_terms(&truth.env, pi, *model)
}

/// Exact conditional variance of one A2IPW term given the allocation and
/// reward model: `sum_a (sigma_a^2 + eps(a)^2) / pi(a) - (eps(1) - eps(0))^2`.
///
/// This equals `neyman_loss + 2 eps(0) eps(1)`; the cross term vanishes
/// whenever either reward estimate is exact.
pub fn a2ipw_conditional_variance(pi: f64, model: &RewardModel, truth: &TruthContext) -> f64 {
    let env = &truth.env;
    let eps = Arm::BOTH.map(|arm| env.mean(arm) - model.get(arm));
    let second_moment: f64 = Arm::BOTH
        .iter()
        .map(|&arm| (env.variance(arm) + eps[arm.index()].powi(2)) / arm_probability(pi, arm))
        .sum();
    second_moment - (eps[1] - eps[0]).powi(2)
}

/// Per-round Neyman regret `loss - vstar`; zero when both sigmas vanish.
pub fn regret_step(loss: f64, truth: &TruthContext) -> f64 {
    if truth.env.is_degenerate() {
        0.0
    } else {
        loss - truth.vstar
    }
}

pub fn is_exploring(pi: f64) -> bool {
    (pi - 0.5).abs() <= EXPLORATION_TOLERANCE
}

/// First (1-based) round whose allocation differs from `1/2`.
pub fn detect_exploration_end(trajectory: &Trajectory) -> Option<u64> {
    first_non_half(trajectory.allocations())
}

pub fn first_non_half(allocations: impl IntoIterator<Item = f64>) -> Option<u64> {
    allocations
        .into_iter()
        .position(|pi| !is_exploring(pi))
        .map(|i| i as u64 + 1)
}

/// Summary of one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub estimate: f64,
    pub sq_error: f64,
    /// `sum_t (loss_t - vstar)`.
    pub cum_regret: f64,
    pub exploration_time: Option<u64>,
    /// Rounds in which a true sigma fell outside its confidence interval.
    pub cs_violations: u64,
    pub horizon: u64,
}

impl RunMetrics {
    /// `T (estimate - ate)^2 - vstar`.
    pub fn normalized_mse_regret(&self, truth: &TruthContext) -> f64 {
        self.horizon as f64 * self.sq_error - truth.vstar
    }
}

/// Variance of the final estimate for a non-adaptive design:
/// `(1/T^2) sum_t Var[term_t]` with each term's exact conditional variance.
pub fn analytic_variance(allocations: &[f64], models: &[RewardModel], truth: &TruthContext) -> Result<f64> {
    if allocations.len() != models.len() {
        return Err(Error::domain(format!(
            "{} allocations but {} reward models",
            allocations.len(),
            models.len()
        )));
    }
    if allocations.is_empty() {
        return Err(Error::domain("empty design"));
    }
    if let Some(pi) = allocations.iter().find(|&&pi| !(pi > 0.0 && pi < 1.0)) {
        return Err(Error::domain(format!("allocation {pi} is outside (0, 1)")));
    }
    let t = allocations.len() as f64;
    let total: f64 = allocations
        .iter()
        .zip(models)
        .map(|(&pi, m)| a2ipw_conditional_variance(pi, m, truth))
        .sum();
    Ok(total / (t * t))
}

/// Exact moments of the final estimate obtained by enumerating every
/// `(action, outcome)` sequence.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnumerationReport {
    pub horizon: usize,
    /// Total probability mass visited; `1` up to round-off.
    pub total_probability: f64,
    pub mean: f64,
    pub mse: f64,
    /// `(1/T^2) sum_t E[Var(term_t | history)]`, via the exact conditional variance.
    pub expected_conditional_variance: f64,
    /// `(1/T^2) sum_t E[neyman_loss_t]`.
    pub expected_loss_variance: f64,
    pub leaves: usize,
}

/// Enumerates every branch of `policy` (in its current state) over `horizon` rounds.
pub fn enumerate(env: &Environment, policy: &PolicyState, horizon: usize) -> Result<EnumerationReport> {
    if env.family() != OutcomeFamily::Bernoulli {
        return Err(Error::domain("enumeration requires Bernoulli arms"));
    }
    if horizon == 0 || horizon > MAX_ENUMERATION_HORIZON {
        return Err(Error::domain(format!(
            "enumeration horizon must be in 1..={MAX_ENUMERATION_HORIZON}, got {horizon}"
        )));
    }
    let truth = TruthContext::new(*env)?;
    let mut acc = EnumerationReport {
        horizon,
        ..Default::default()
    };
    visit(&truth, policy.clone(), EstimatorState::new(), 1.0, horizon, &mut acc)?;
    let t2 = (horizon * horizon) as f64;
    acc.expected_conditional_variance /= t2;
    acc.expected_loss_variance /= t2;
    Ok(acc)
}

fn visit(
    truth: &TruthContext,
    policy: PolicyState,
    estimator: EstimatorState,
    prob: f64,
    remaining: usize,
    acc: &mut EnumerationReport,
) -> Result<()> {
    if remaining == 0 {
        let estimate = estimator.finalize()?;
        acc.total_probability += prob;
        acc.mean += prob * estimate;
        acc.mse += prob * (estimate - truth.env.ate()).powi(2);
        acc.leaves += 1;
        return Ok(());
    }
    let pi = policy.select();
    let model = policy.reward_model();
    acc.expected_conditional_variance += prob * a2ipw_conditional_variance(pi, &model, truth);
    acc.expected_loss_variance += prob * neyman_loss(pi, &model, truth);
    for action in Arm::BOTH {
        let p_action = arm_probability(pi, action);
        let mu = truth.env.mean(action);
        for (outcome, p_outcome) in [(0.0, 1.0 - mu), (1.0, mu)] {
            let p = prob * p_action * p_outcome;
            if p == 0.0 {
                continue;
            }
            let mut next_policy = policy.clone();
            let mut next_estimator = estimator;
            next_estimator.push(a2ipw_term(pi, action, outcome, &model)?);
            next_policy.observe(action, outcome)?;
            visit(truth, next_policy, next_estimator, p, remaining - 1, acc)?;
        }
    }
    Ok(())
}

/// Exact MSE of the final estimate under `policy` for horizon `T <= 4`.
pub fn brute_force_mse(env: &Environment, policy: &PolicyState, horizon: usize) -> Result<f64> {
    enumerate(env, policy, horizon).map(|r| r.mse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::RoundRecord;
    use crate::policies::{Algorithm, PolicySettings};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn truth(mu0: f64, mu1: f64) -> TruthContext {
        TruthContext::new(Environment::bernoulli(mu0, mu1).unwrap()).unwrap()
    }

    fn exact(t: &TruthContext) -> RewardModel {
        RewardModel::true_means(&t.env)
    }

    #[test]
    fn truth_context_values() {
        let t = truth(0.1, 0.5);
        assert_relative_eq!(t.vstar, 0.64, epsilon = 1e-12);
        assert_relative_eq!(t.neyman, 0.625, epsilon = 1e-15);
        assert_relative_eq!(t.sigma_gap, 0.2, epsilon = 1e-15);
        let d = truth(0.0, 1.0);
        assert_eq!(d.vstar, 0.0);
        let one_sided = truth(0.5, 1.0);
        assert_relative_eq!(one_sided.vstar, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn loss_examples() {
        let sym = truth(0.5, 0.5);
        assert_eq!(neyman_loss(0.5, &exact(&sym), &sym), 1.0);
        assert_eq!(neyman_loss(0.5, &exact(&sym), &sym), sym.vstar);

        let t = truth(0.1, 0.5);
        assert_relative_eq!(neyman_loss(0.625, &exact(&t), &t), 0.64, epsilon = 1e-12);

        let off = RewardModel::new(0.4, 0.4);
        assert_relative_eq!(neyman_loss(0.5, &off, &sym), 1.02, epsilon = 1e-12);
    }

    #[test]
    fn regret_examples() {
        let sym = truth(0.5, 0.5);
        assert_eq!(regret_step(sym.vstar, &sym), 0.0);
        let l = neyman_loss(0.4, &exact(&sym), &sym);
        assert_relative_eq!(regret_step(l, &sym), 0.041_666_666_666_7, epsilon = 1e-12);
        let t = truth(0.1, 0.5);
        let l = neyman_loss(0.5, &exact(&t), &t);
        assert_relative_eq!(regret_step(l, &t), 0.04, epsilon = 1e-12);
        assert_eq!(regret_step(neyman_loss(t.neyman, &exact(&t), &t), &t), 0.0);
        let d = truth(0.0, 1.0);
        assert_eq!(regret_step(3.0, &d), 0.0);
    }

    #[test]
    fn exploration_end() {
        let traj = |pis: &[f64]| Trajectory {
            rounds: pis
                .iter()
                .map(|&pi| RoundRecord { pi, action: Arm::Control, outcome: 0.0, a2ipw_term: 0.0, loss: 0.0 })
                .collect(),
        };
        assert_eq!(detect_exploration_end(&traj(&[0.5, 0.5, 0.6, 0.6])), Some(3));
        assert_eq!(detect_exploration_end(&traj(&[0.5; 10])), None);
        assert_eq!(detect_exploration_end(&traj(&[0.625, 0.625])), Some(1));
        assert_eq!(detect_exploration_end(&traj(&[0.5 + 1e-13, 0.5])), None);
    }

    #[test]
    fn analytic_variance_examples() {
        let t = truth(0.1, 0.5);
        let v = analytic_variance(&[t.neyman; 400], &[exact(&t); 400], &t).unwrap();
        assert_relative_eq!(v, 0.0016, epsilon = 1e-12);
        for horizon in [1, 7, 50] {
            let v = analytic_variance(&vec![t.neyman; horizon], &vec![exact(&t); horizon], &t).unwrap();
            assert_relative_eq!(v, t.vstar / horizon as f64, max_relative = 1e-12);
        }
        let sym = truth(0.5, 0.5);
        let v = analytic_variance(&[0.3], &[exact(&sym)], &sym).unwrap();
        assert_relative_eq!(v, 1.190_476_190_476, epsilon = 1e-11);
        assert!(analytic_variance(&[0.3, 0.4], &[exact(&sym)], &sym).is_err());
        assert!(analytic_variance(&[1.0], &[exact(&sym)], &sym).is_err());
    }

    /// Variance of one term by enumerating the four (action, outcome) cells.
    fn enumerated_term_variance(pi: f64, model: &RewardModel, t: &TruthContext) -> (f64, f64) {
        let mut mean = 0.0;
        let mut second = 0.0;
        for action in Arm::BOTH {
            let mu = t.env.mean(action);
            for (y, py) in [(0.0, 1.0 - mu), (1.0, mu)] {
                let p = arm_probability(pi, action) * py;
                let z = a2ipw_term(pi, action, y, model).unwrap();
                mean += p * z;
                second += p * z * z;
            }
        }
        (mean, second - mean * mean)
    }

    #[test]
    fn conditional_variance_identity() {
        let t = truth(0.3, 0.7);
        for (pi, m) in [(0.5, RewardModel::new(0.5, 0.5)), (0.2, RewardModel::new(0.9, 0.1)), (0.8, exact(&t))] {
            let (mean, var) = enumerated_term_variance(pi, &m, &t);
            assert_relative_eq!(mean, t.env.ate(), epsilon = 1e-12);
            let cv = a2ipw_conditional_variance(pi, &m, &t);
            assert_relative_eq!(var, cv, epsilon = 1e-12);
            let e0 = t.env.mean(Arm::Control) - m.r0hat;
            let e1 = t.env.mean(Arm::Treatment) - m.r1hat;
            assert_relative_eq!(cv, neyman_loss(pi, &m, &t) + 2.0 * e0 * e1, epsilon = 1e-12);
        }
    }

    fn policy(algorithm: Algorithm, env: &Environment) -> PolicyState {
        PolicyState::new(algorithm, PolicySettings::default(), env)
    }

    #[test]
    fn brute_force_examples() {
        let sym = Environment::bernoulli(0.5, 0.5).unwrap();
        let mse = brute_force_mse(&sym, &policy(Algorithm::OracleTrueReward, &sym), 2).unwrap();
        assert_relative_eq!(mse, 0.5, epsilon = 1e-12);

        let mse = brute_force_mse(&sym, &policy(Algorithm::Uniform, &sym), 1).unwrap();
        assert_relative_eq!(mse, 1.0, epsilon = 1e-12);

        let det = Environment::bernoulli(0.0, 1.0).unwrap();
        for a in Algorithm::ALL {
            let r = enumerate(&det, &policy(a, &det), 2).unwrap();
            assert_relative_eq!(r.mean, 1.0, epsilon = 1e-12);
            assert_relative_eq!(r.total_probability, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn enumeration_matches_analytic_and_is_unbiased() {
        for (mu0, mu1) in [(0.1, 0.5), (0.3, 0.7), (0.05, 0.9)] {
            let env = Environment::bernoulli(mu0, mu1).unwrap();
            let t = TruthContext::new(env).unwrap();
            for a in Algorithm::ALL {
                for horizon in 1..=MAX_ENUMERATION_HORIZON {
                    let r = enumerate(&env, &policy(a, &env), horizon).unwrap();
                    assert_relative_eq!(r.total_probability, 1.0, epsilon = 1e-12);
                    assert!((r.mean - env.ate()).abs() <= 1e-12, "{a} T={horizon}");
                    assert!((r.mse - r.expected_conditional_variance).abs() <= 1e-12, "{a} T={horizon}");
                }
            }
            for horizon in 1..=MAX_ENUMERATION_HORIZON {
                let r = enumerate(&env, &policy(Algorithm::OracleTrueReward, &env), horizon).unwrap();
                let fixed = analytic_variance(&vec![t.neyman; horizon], &vec![exact(&t); horizon], &t).unwrap();
                assert!((r.mse - fixed).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn enumeration_limits() {
        let env = Environment::bernoulli(0.5, 0.5).unwrap();
        assert!(enumerate(&env, &policy(Algorithm::Uniform, &env), 5).is_err());
        assert!(enumerate(&env, &policy(Algorithm::Uniform, &env), 0).is_err());
        assert_eq!(enumerate(&env, &policy(Algorithm::Uniform, &env), 4).unwrap().leaves, 256);
    }

    #[test]
    fn loss_minimised_at_neyman_on_grid() {
        for (mu0, mu1) in [(0.5, 0.5), (0.4, 0.5), (0.1, 0.5), (0.05, 0.5), (0.3, 0.9)] {
            let t = truth(mu0, mu1);
            let m = exact(&t);
            for i in 1..10_000 {
                let pi = i as f64 / 10_000.0;
                let l = neyman_loss(pi, &m, &t);
                assert!(l >= t.vstar - 1e-12);
                if (pi - t.neyman).abs() > 1e-3 {
                    assert!(l > t.vstar);
                }
            }
        }
    }

    #[test]
    fn over_exploring_is_cheaper_than_under_exploring() {
        for mu1 in [0.05, 0.1, 0.2, 0.3, 0.4] {
            // treatment has the smaller sigma so the Neyman allocation is below 1/2
            let t = truth(0.5, mu1);
            assert!(t.neyman < 0.5);
            let m = exact(&t);
            for i in 1..1000 {
                let eps = t.neyman * i as f64 / 1000.0;
                assert!(neyman_loss(t.neyman + eps, &m, &t) < neyman_loss(t.neyman - eps, &m, &t));
            }
        }
    }

    proptest! {
        #[test]
        fn loss_with_exact_rewards_bounds_vstar(mu0 in 0.01f64..0.99, mu1 in 0.01f64..0.99, pi in 0.001f64..0.999) {
            let t = truth(mu0, mu1);
            prop_assert!(neyman_loss(pi, &exact(&t), &t) >= t.vstar - 1e-12);
        }
    }
}
