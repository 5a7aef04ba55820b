//! Allocation rules and the predictable reward model.
//!
//! Every rule maps the history through round `t - 1` (summarised by per-arm
//! [`ArmStats`]) to a treatment probability in `(0, 1)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::concentration::{neyman_cs, stdev_cs_at, CsParams};
use crate::domain::{Arm, ArmStats, Environment, Interval};
use crate::error::Result;

/// Allocations are kept inside `[SAFETY_FLOOR, 1 - SAFETY_FLOOR]` so importance weights stay finite.
pub const SAFETY_FLOOR: f64 = 1e-6;

/// Reward estimate used for an arm with no observations.
pub const DEFAULT_REWARD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Algorithm {
    OpTrack,
    ClipSmt,
    ClipSdt,
    Uniform,
    OracleEstReward,
    OracleTrueReward,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::OpTrack,
        Algorithm::ClipSmt,
        Algorithm::ClipSdt,
        Algorithm::Uniform,
        Algorithm::OracleEstReward,
        Algorithm::OracleTrueReward,
    ];

    /// Reserved for the online-gradient clipping baseline, which is not shipped.
    pub const RESERVED: &'static [&'static str] = &["clip_ogd"];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::OpTrack => "optrack",
            Algorithm::ClipSmt => "clip_smt",
            Algorithm::ClipSdt => "clip_sdt",
            Algorithm::Uniform => "uniform",
            Algorithm::OracleEstReward => "oracle_est_reward",
            Algorithm::OracleTrueReward => "oracle_true_reward",
        }
    }

    pub fn is_oracle(self) -> bool {
        matches!(self, Algorithm::OracleEstReward | Algorithm::OracleTrueReward)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(a) = Algorithm::ALL.into_iter().find(|a| a.name() == s) {
            return Ok(a);
        }
        if Algorithm::RESERVED.contains(&s) {
            return Err(format!("algorithm `{s}` is reserved but not implemented"));
        }
        Err(format!(
            "unknown algorithm `{s}` (expected one of: {})",
            Algorithm::ALL.map(Algorithm::name).join(", ")
        ))
    }
}

impl TryFrom<String> for Algorithm {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Algorithm> for String {
    fn from(a: Algorithm) -> Self {
        a.name().to_owned()
    }
}

/// Time index fed to the confidence-sequence boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTimeMode {
    #[default]
    ArmCount,
    TotalTime,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicySettings {
    /// Overall confidence level; each per-arm sequence runs at `delta / 5`.
    pub cs: CsParams,
    pub boundary_mode: BoundaryTimeMode,
    /// Clipping schedule exponent for `clip_sdt`; `c_t = min(1/2, t^-exponent)`.
    pub clip_exponent: f64,
}

impl Default for PolicySettings {
    fn default() -> Self {
        Self {
            cs: CsParams::default(),
            boundary_mode: BoundaryTimeMode::ArmCount,
            clip_exponent: 1.0 / 3.0,
        }
    }
}

/// Per-arm reward estimates used by the A2IPW estimator at one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardModel {
    pub r0hat: f64,
    pub r1hat: f64,
}

impl RewardModel {
    pub const ZERO: RewardModel = RewardModel { r0hat: 0.0, r1hat: 0.0 };

    pub fn new(r0hat: f64, r1hat: f64) -> Self {
        Self { r0hat, r1hat }
    }

    pub fn true_means(env: &Environment) -> Self {
        Self::new(env.mean(Arm::Control), env.mean(Arm::Treatment))
    }

    pub fn get(&self, arm: Arm) -> f64 {
        match arm {
            Arm::Control => self.r0hat,
            Arm::Treatment => self.r1hat,
        }
    }

    /// Plug-in effect `r1hat - r0hat`.
    pub fn effect(&self) -> f64 {
        self.r1hat - self.r0hat
    }
}

/// Single-owner allocation state advanced one round at a time.
#[derive(Debug, Clone)]
pub struct PolicyState {
    algorithm: Algorithm,
    stats: [ArmStats; 2],
    settings: PolicySettings,
    round: u64,
    truth: Option<Environment>,
}

impl PolicyState {
    /// `env` is retained only by the oracle kinds.
    pub fn new(algorithm: Algorithm, settings: PolicySettings, env: &Environment) -> Self {
        Self {
            algorithm,
            stats: [ArmStats::new(); 2],
            settings,
            round: 1,
            truth: algorithm.is_oracle().then_some(*env),
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn settings(&self) -> &PolicySettings {
        &self.settings
    }

    /// Index `t >= 1` of the round about to be played.
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn stats(&self, arm: Arm) -> &ArmStats {
        &self.stats[arm.index()]
    }

    /// Allocation for the current round.
    pub fn select(&self) -> f64 {
        match self.algorithm {
            Algorithm::OpTrack => optrack_select(self),
            Algorithm::ClipSmt | Algorithm::ClipSdt => clip_select(self),
            Algorithm::Uniform => 0.5,
            Algorithm::OracleEstReward | Algorithm::OracleTrueReward => oracle_select(self),
        }
    }

    pub fn reward_model(&self) -> RewardModel {
        reward_model(self)
    }

    /// Records the round's observation and advances to the next round.
    pub fn observe(&mut self, arm: Arm, outcome: f64) -> Result<()> {
        self.stats[arm.index()].update(outcome)?;
        self.round += 1;
        Ok(())
    }

    /// Per-arm standard-deviation intervals at `delta / 5`.
    pub fn sigma_cs(&self) -> [Interval; 2] {
        let params = self.settings.cs.per_arm();
        let total = self.round - 1;
        Arm::BOTH.map(|arm| {
            let stats = self.stats(arm);
            let time = match self.settings.boundary_mode {
                BoundaryTimeMode::ArmCount => stats.count(),
                BoundaryTimeMode::TotalTime => total,
            };
            stdev_cs_at(stats, &params, time)
        })
    }

    pub fn allocation_cs(&self) -> Interval {
        let [cs0, cs1] = self.sigma_cs();
        neyman_cs(&cs0, &cs1)
    }

    fn clip_exponent(&self) -> f64 {
        match self.algorithm {
            Algorithm::ClipSmt => 1.0 / 3.0,
            _ => self.settings.clip_exponent,
        }
    }
}

/// The point of `cs` closest to `1/2`, after the safety floor.
pub fn optimistic_allocation(cs: &Interval) -> f64 {
    cs.clamp(SAFETY_FLOOR, 1.0 - SAFETY_FLOOR).closest_to(0.5)
}

pub fn optrack_select(state: &PolicyState) -> f64 {
    optimistic_allocation(&state.allocation_cs())
}

/// `c_t = min(1/2, t^-exponent)`.
pub fn clip_level(round: u64, exponent: f64) -> f64 {
    (round as f64).powf(-exponent).min(0.5)
}

/// Plug-in allocation `sigma_hat1 / (sigma_hat0 + sigma_hat1)`, `1/2` until both arms have two samples.
pub fn empirical_allocation(stats0: &ArmStats, stats1: &ArmStats) -> f64 {
    if stats0.count() < 2 || stats1.count() < 2 {
        return 0.5;
    }
    let (s0, s1) = (stats0.stdev(), stats1.stdev());
    if s0 + s1 > 0.0 {
        s1 / (s0 + s1)
    } else {
        0.5
    }
}

pub fn clip_select(state: &PolicyState) -> f64 {
    let pi_hat = empirical_allocation(state.stats(Arm::Control), state.stats(Arm::Treatment));
    let c = clip_level(state.round, state.clip_exponent()).max(SAFETY_FLOOR);
    pi_hat.clamp(c, 1.0 - c)
}

pub fn oracle_select(state: &PolicyState) -> f64 {
    state
        .truth
        .map_or(0.5, |env| env.neyman())
        .clamp(SAFETY_FLOOR, 1.0 - SAFETY_FLOOR)
}

pub fn reward_model(state: &PolicyState) -> RewardModel {
    match (state.algorithm, state.truth) {
        (Algorithm::OracleTrueReward, Some(env)) => RewardModel::true_means(&env),
        _ => {
            let [r0, r1] = Arm::BOTH.map(|arm| {
                let s = state.stats(arm);
                if s.count() > 0 {
                    s.mean()
                } else {
                    DEFAULT_REWARD
                }
            });
            RewardModel::new(r0, r1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn env(mu0: f64, mu1: f64) -> Environment {
        Environment::bernoulli(mu0, mu1).unwrap()
    }

    fn state_with(algorithm: Algorithm, env: &Environment, arm0: &[f64], arm1: &[f64]) -> PolicyState {
        let mut s = PolicyState::new(algorithm, PolicySettings::default(), env);
        for &y in arm0 {
            s.observe(Arm::Control, y).unwrap();
        }
        for &y in arm1 {
            s.observe(Arm::Treatment, y).unwrap();
        }
        s
    }

    #[test]
    fn optrack_unseen_arms_plays_half() {
        let s = PolicyState::new(Algorithm::OpTrack, PolicySettings::default(), &env(0.1, 0.5));
        assert_eq!(s.allocation_cs(), Interval::ordered(0.0, 1.0));
        assert_eq!(s.select(), 0.5);
    }

    #[test]
    fn optimistic_allocation_cases() {
        let cs = crate::concentration::neyman_cs(&Interval::ordered(0.1, 0.3), &Interval::ordered(0.4, 0.6));
        assert_relative_eq!(optimistic_allocation(&cs), 0.571_43, epsilon = 1e-5);
        assert_eq!(optimistic_allocation(&Interval::ordered(0.2, 0.4)), 0.4);
        assert_eq!(optimistic_allocation(&Interval::ordered(0.3, 0.8)), 0.5);
        assert_eq!(optimistic_allocation(&Interval::ordered(0.0, 0.0)), SAFETY_FLOOR);
        assert_eq!(optimistic_allocation(&Interval::ordered(1.0, 1.0)), 1.0 - SAFETY_FLOOR);
    }

    #[test]
    fn clip_examples() {
        assert_relative_eq!(clip_level(8, 1.0 / 3.0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(clip_level(1000, 1.0 / 3.0), 0.1, epsilon = 1e-12);
        assert_eq!(clip_level(1, 1.0 / 3.0), 0.5);
        let pi_hat: f64 = 0.9;
        assert_relative_eq!(pi_hat.clamp(clip_level(8, 1.0 / 3.0), 1.0 - clip_level(8, 1.0 / 3.0)), 0.5, epsilon = 1e-12);
        assert_eq!(pi_hat.clamp(clip_level(1000, 1.0 / 3.0), 1.0 - clip_level(1000, 1.0 / 3.0)), 0.9);
    }

    #[test]
    fn clip_select_unclipped_interior() {
        // arm 0: stdev 1/18 scaled so pi_hat = 0.9 exactly is awkward; use 1:9 ratio of stdevs
        let e = env(0.5, 0.5);
        let arm0 = [0.45, 0.55];
        let arm1 = [0.05, 0.95];
        let mut s = state_with(Algorithm::ClipSmt, &e, &arm0, &arm1);
        assert_relative_eq!(empirical_allocation(s.stats(Arm::Control), s.stats(Arm::Treatment)), 0.9, epsilon = 1e-12);
        assert_eq!(s.round(), 5);
        let c = clip_level(5, 1.0 / 3.0);
        assert_relative_eq!(s.select(), 1.0 - c, epsilon = 1e-15);
        while s.round() < 1000 {
            s.observe(Arm::Control, 0.5).unwrap();
        }
        // more control mass at 0.5 shrinks sigma_hat0, pi_hat moves further toward 1
        let pi = s.select();
        assert!(pi <= 1.0 - clip_level(1000, 1.0 / 3.0) + 1e-15);
    }

    #[test]
    fn clip_symmetric_estimates_give_half() {
        let e = env(0.5, 0.5);
        let s = state_with(Algorithm::ClipSdt, &e, &[0.0, 1.0, 1.0], &[1.0, 0.0, 1.0]);
        assert_eq!(s.select(), 0.5);
        assert_eq!(state_with(Algorithm::ClipSdt, &e, &[0.0], &[1.0, 0.0]).select(), 0.5);
    }

    #[test]
    fn oracle_allocations() {
        let settings = PolicySettings::default();
        let cases = [((0.5, 0.5), 0.5), ((0.1, 0.5), 0.625), ((0.05, 0.5), 0.696_43)];
        for ((mu0, mu1), expected) in cases {
            let s = PolicyState::new(Algorithm::OracleEstReward, settings, &env(mu0, mu1));
            assert_relative_eq!(s.select(), expected, epsilon = 1e-5);
        }
        let degenerate = PolicyState::new(Algorithm::OracleTrueReward, settings, &env(0.0, 1.0));
        assert_eq!(degenerate.select(), 0.5);
    }

    #[test]
    fn non_oracles_do_not_hold_truth() {
        for a in Algorithm::ALL {
            let s = PolicyState::new(a, PolicySettings::default(), &env(0.1, 0.5));
            assert_eq!(s.truth.is_some(), a.is_oracle());
        }
    }

    #[test]
    fn reward_models() {
        let e = env(0.3, 0.5);
        let s = PolicyState::new(Algorithm::OpTrack, PolicySettings::default(), &e);
        assert_eq!(s.reward_model(), RewardModel::new(0.5, 0.5));

        let s = state_with(Algorithm::ClipSdt, &e, &[], &[1.0, 0.0, 1.0, 1.0]);
        assert_eq!(s.reward_model().r1hat, 0.75);
        assert_eq!(s.reward_model().r0hat, 0.5);

        let s = state_with(Algorithm::OracleTrueReward, &e, &[1.0, 1.0], &[0.0]);
        assert_eq!(s.reward_model(), RewardModel::new(0.3, 0.5));
        let s = state_with(Algorithm::OracleEstReward, &e, &[1.0, 1.0], &[0.0]);
        assert_eq!(s.reward_model(), RewardModel::new(1.0, 0.0));
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>(), Ok(a));
        }
        assert!("clip_ogd".parse::<Algorithm>().unwrap_err().contains("reserved"));
        assert!("thompson".parse::<Algorithm>().is_err());
    }
}
