//! Shared domain types: the two-arm environment, per-arm running statistics,
//! closed intervals, per-round trajectory records and the seeded random stream.
//!
//! All outcomes live in `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the two actions: control (`0`) or treatment (`1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    Control,
    Treatment,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treatment];

    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treatment => 1,
        }
    }

    /// `+1` for treatment, `-1` for control.
    pub fn sign(self) -> f64 {
        match self {
            Arm::Control => -1.0,
            Arm::Treatment => 1.0,
        }
    }

    pub fn other(self) -> Arm {
        match self {
            Arm::Control => Arm::Treatment,
            Arm::Treatment => Arm::Control,
        }
    }
}

/// Probability that `arm` is played under treatment allocation `pi`.
#[inline]
pub fn arm_probability(pi: f64, arm: Arm) -> f64 {
    match arm {
        Arm::Treatment => pi,
        Arm::Control => 1.0 - pi,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OutcomeFamily {
    #[default]
    Bernoulli,
}

/// Ground-truth two-arm environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Environment {
    mu0: f64,
    mu1: f64,
    family: OutcomeFamily,
}

impl Environment {
    pub fn bernoulli(mu0: f64, mu1: f64) -> Result<Self> {
        Self::new(mu0, mu1, OutcomeFamily::Bernoulli)
    }

    pub fn new(mu0: f64, mu1: f64, family: OutcomeFamily) -> Result<Self> {
        for (name, mu) in [("mu0", mu0), ("mu1", mu1)] {
            if !(0.0..=1.0).contains(&mu) {
                return Err(Error::domain(format!("{name} = {mu} is outside [0, 1]")));
            }
        }
        Ok(Self { mu0, mu1, family })
    }

    pub fn family(&self) -> OutcomeFamily {
        self.family
    }

    pub fn mean(&self, arm: Arm) -> f64 {
        match arm {
            Arm::Control => self.mu0,
            Arm::Treatment => self.mu1,
        }
    }

    pub fn variance(&self, arm: Arm) -> f64 {
        let mu = self.mean(arm);
        match self.family {
            OutcomeFamily::Bernoulli => mu * (1.0 - mu),
        }
    }

    pub fn sigma(&self, arm: Arm) -> f64 {
        self.variance(arm).sqrt()
    }

    /// Average treatment effect `mu1 - mu0`.
    pub fn ate(&self) -> f64 {
        self.mu1 - self.mu0
    }

    /// Neyman allocation `sigma1 / (sigma0 + sigma1)`; `1/2` when both sigmas vanish.
    pub fn neyman(&self) -> f64 {
        let (s0, s1) = (self.sigma(Arm::Control), self.sigma(Arm::Treatment));
        if s0 + s1 > 0.0 {
            s1 / (s0 + s1)
        } else {
            0.5
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.sigma(Arm::Control) + self.sigma(Arm::Treatment) == 0.0
    }
}

/// Draws one outcome for `arm` from the environment.
pub fn sample_outcome(env: &Environment, arm: Arm, rng: &mut RandomStream) -> f64 {
    match env.family {
        OutcomeFamily::Bernoulli => {
            if rng.bernoulli(env.mean(arm)) {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Online count, mean and sum of squared deviations of one arm's outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArmStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl ArmStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_outcomes(outcomes: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut stats = Self::new();
        for y in outcomes {
            stats.update(y)?;
        }
        Ok(stats)
    }

    /// Welford update. Outcomes outside `[0, 1]` are rejected.
    pub fn update(&mut self, outcome: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&outcome) {
            return Err(Error::domain(format!("outcome {outcome} is outside [0, 1]")));
        }
        self.count += 1;
        let delta = outcome - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (outcome - self.mean);
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn m2(&self) -> f64 {
        self.m2
    }

    /// Biased (`1/N`) variance; zero with no data.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0)
        }
    }

    pub fn stdev(&self) -> f64 {
        self.variance().sqrt()
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo <= hi {
            Ok(Self { lo, hi })
        } else {
            Err(Error::domain(format!("interval [{lo}, {hi}] has lo > hi")))
        }
    }

    pub(crate) fn ordered(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "interval [{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Interval {
        Interval::ordered(self.lo.clamp(lo, hi), self.hi.clamp(lo, hi))
    }

    /// The point of the interval closest to `x`.
    pub fn closest_to(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub pi: f64,
    pub action: Arm,
    pub outcome: f64,
    pub a2ipw_term: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub rounds: Vec<RoundRecord>,
}

impl Trajectory {
    pub fn with_capacity(horizon: usize) -> Self {
        Self {
            rounds: Vec::with_capacity(horizon),
        }
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn allocations(&self) -> impl Iterator<Item = f64> + '_ {
        self.rounds.iter().map(|r| r.pi)
    }
}

/// Seeded ChaCha8 stream. A `(key, stream)` pair always yields the same draws.
#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn from_key(key: [u8; 32], stream: u64) -> Self {
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream);
        Self { rng }
    }

    pub fn seed_from_u64(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// `true` with probability `p`; exact for `p = 0` and `p = 1`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn direct_biased_variance(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
    }

    #[test]
    fn single_sample_has_zero_variance() {
        let s = ArmStats::from_outcomes([1.0]).unwrap();
        assert_eq!(s.count(), 1);
        assert_eq!(s.mean(), 1.0);
        assert_eq!(s.variance(), 0.0);
    }

    #[test]
    fn four_outcomes_match_direct_formula() {
        let xs = [1.0, 0.0, 1.0, 1.0];
        let s = ArmStats::from_outcomes(xs).unwrap();
        assert_relative_eq!(s.mean(), 0.75, epsilon = 1e-15);
        assert_relative_eq!(s.variance(), 0.1875, max_relative = 1e-12);
        assert_relative_eq!(s.variance(), direct_biased_variance(&xs), max_relative = 1e-12);
        assert_relative_eq!(s.stdev(), 0.43301, epsilon = 1e-5);
    }

    #[test]
    fn constant_sequence_has_zero_variance() {
        for n in [1, 2, 17, 1000] {
            let s = ArmStats::from_outcomes(std::iter::repeat_n(0.5, n)).unwrap();
            assert_eq!(s.variance(), 0.0);
        }
    }

    #[test]
    fn empty_stats_follow_convention() {
        let s = ArmStats::new();
        assert_eq!((s.count(), s.mean(), s.m2()), (0, 0.0, 0.0));
        assert_eq!(s.variance(), 0.0);
    }

    #[test]
    fn out_of_range_outcome_is_rejected() {
        let mut s = ArmStats::new();
        assert!(matches!(s.update(1.5), Err(Error::Domain(_))));
        assert!(matches!(s.update(-0.1), Err(Error::Domain(_))));
        assert!(s.update(f64::NAN).is_err());
        assert_eq!(s.count(), 0);
    }

    #[test]
    fn degenerate_bernoulli_arms() {
        let env = Environment::bernoulli(0.0, 1.0).unwrap();
        let mut rng = RandomStream::seed_from_u64(3);
        for _ in 0..1000 {
            assert_eq!(sample_outcome(&env, Arm::Treatment, &mut rng), 1.0);
            assert_eq!(sample_outcome(&env, Arm::Control, &mut rng), 0.0);
        }
        assert!(env.is_degenerate());
        assert_eq!(env.neyman(), 0.5);
    }

    #[test]
    fn fair_coin_mean_within_three_sigma() {
        let env = Environment::bernoulli(0.5, 0.5).unwrap();
        let mut rng = RandomStream::seed_from_u64(11);
        let n = 100_000;
        let total: f64 = (0..n)
            .map(|_| sample_outcome(&env, Arm::Treatment, &mut rng))
            .sum();
        assert!((total / n as f64 - 0.5).abs() < 0.006);
    }

    #[test]
    fn same_stream_position_same_draws() {
        let key = [7u8; 32];
        let mut a = RandomStream::from_key(key, 4);
        let mut b = RandomStream::from_key(key, 4);
        let xs: Vec<f64> = (0..64).map(|_| a.uniform()).collect();
        let ys: Vec<f64> = (0..64).map(|_| b.uniform()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn environment_derived_quantities() {
        let env = Environment::bernoulli(0.1, 0.5).unwrap();
        assert_relative_eq!(env.sigma(Arm::Control), 0.3, epsilon = 1e-15);
        assert_relative_eq!(env.sigma(Arm::Treatment), 0.5, epsilon = 1e-15);
        assert_relative_eq!(env.ate(), 0.4, epsilon = 1e-15);
        assert_relative_eq!(env.neyman(), 0.625, epsilon = 1e-15);
        assert_eq!(Environment::bernoulli(0.3, 0.3).unwrap().neyman(), 0.5);
        assert_eq!(Environment::bernoulli(0.3, 0.7).unwrap().neyman(), 0.5);
        assert!(Environment::bernoulli(-0.1, 0.5).is_err());
        assert!(Environment::bernoulli(0.1, 1.01).is_err());
    }

    #[test]
    fn sample_sigma_converges_to_analytic_sigma() {
        let env = Environment::bernoulli(0.2, 0.5).unwrap();
        let mut rng = RandomStream::seed_from_u64(5);
        let mut stats = ArmStats::new();
        for _ in 0..1_000_000 {
            stats.update(sample_outcome(&env, Arm::Control, &mut rng)).unwrap();
        }
        assert!((stats.stdev() - env.sigma(Arm::Control)).abs() < 0.002);
    }

    #[test]
    fn closest_point_of_interval() {
        let i = Interval::new(0.2, 0.4).unwrap();
        assert_eq!(i.closest_to(0.5), 0.4);
        assert_eq!(Interval::new(0.6, 0.9).unwrap().closest_to(0.5), 0.6);
        assert_eq!(Interval::new(0.0, 1.0).unwrap().closest_to(0.5), 0.5);
        assert!(Interval::new(0.5, 0.4).is_err());
    }

    proptest! {
        #[test]
        fn welford_matches_direct_and_is_order_insensitive(
            mut xs in prop::collection::vec(0.0f64..=1.0, 1..200),
            seed in any::<u64>(),
        ) {
            let forward = ArmStats::from_outcomes(xs.iter().copied()).unwrap();
            let direct = direct_biased_variance(&xs);
            prop_assert!((forward.variance() - direct).abs() <= 1e-12 * direct.max(1e-3));
            prop_assert!(forward.variance() <= 0.25 + 1e-15);
            prop_assert!((0.0..=1.0).contains(&forward.mean()));

            // deterministic shuffle
            let mut state = seed | 1;
            for i in (1..xs.len()).rev() {
                state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                xs.swap(i, (state % (i as u64 + 1)) as usize);
            }
            let shuffled = ArmStats::from_outcomes(xs.iter().copied()).unwrap();
            prop_assert_eq!(forward.count(), shuffled.count());
            prop_assert!((forward.mean() - shuffled.mean()).abs() <= 1e-9);
            prop_assert!((forward.variance() - shuffled.variance()).abs() <= 1e-9);
        }

        #[test]
        fn neyman_strictly_inside_when_sigmas_positive(mu0 in 0.001f64..0.999, mu1 in 0.001f64..0.999) {
            let env = Environment::bernoulli(mu0, mu1).unwrap();
            let pi = env.neyman();
            prop_assert!(pi > 0.0 && pi < 1.0);
        }
    }
}
