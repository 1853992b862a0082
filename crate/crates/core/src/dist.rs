//! Holding-time distributions for primary-user ON and OFF periods.
//!
//! Two families are supported: the exponential distribution and the
//! hyper-exponential distribution (HED), a probability-weighted mixture of
//! exponentials used to approximate heavy-tailed idle times. Both expose
//! their mean, Laplace transform, complementary CDF and a sampler.
//!
//! Distributions have a compact literal form used in scenario files:
//!
//! ```text
//! exp(2.5)
//! hed(0.9:10, 0.1:0.1)      # weight:rate pairs
//! ```

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution as _, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Weight sums within this distance of one are renormalized silently.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Minimum relative gap between two HED phase rates.
pub const RATE_GAP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("rate must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("phase weight must be positive and finite, got {0}")]
    InvalidWeight(f64),
    #[error("phase weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("repeated rates {0} and {1}; perturb one of them so the phases are distinct")]
    RepeatedRates(f64, f64),
    #[error("hyper-exponential distribution needs at least one phase")]
    NoPhases,
    #[error("duty cycle must lie in (0, 1), got {0}")]
    InvalidDutyCycle(f64),
    #[error("scale factor must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("cannot parse distribution literal `{literal}`: {reason}")]
    Parse { literal: String, reason: String },
}

/// Exponential distribution with the given rate (1/second).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpDist {
    rate: f64,
}

impl ExpDist {
    pub fn new(rate: f64) -> Result<Self, DistError> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(DistError::InvalidRate(rate));
        }
        Ok(Self { rate })
    }

    /// Exponential distribution with the given mean (seconds).
    pub fn with_mean(mean: f64) -> Result<Self, DistError> {
        Self::new(1.0 / mean)
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mean(&self) -> f64 {
        1.0 / self.rate
    }

    pub fn laplace(&self, s: f64) -> f64 {
        self.rate / (s + self.rate)
    }

    pub fn ccdf(&self, t: f64) -> f64 {
        (-self.rate * t.max(0.0)).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let e: f64 = Exp1.sample(rng);
        e / self.rate
    }
}

/// One exponential phase of a hyper-exponential mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub weight: f64,
    pub rate: f64,
}

/// Hyper-exponential distribution: with probability `weight_i` the holding
/// time is exponential with rate `rate_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedDist {
    phases: Vec<Phase>,
}

impl HedDist {
    /// Validates and normalizes the phases.
    ///
    /// Weights summing to within [`WEIGHT_SUM_TOLERANCE`] of one are rescaled
    /// to sum to one; rates closer than [`RATE_GAP_TOLERANCE`] (relative) are
    /// rejected because the residue inversion assumes simple poles.
    pub fn new(phases: Vec<Phase>) -> Result<Self, DistError> {
        if phases.is_empty() {
            return Err(DistError::NoPhases);
        }
        for p in &phases {
            if !(p.weight.is_finite() && p.weight > 0.0) {
                return Err(DistError::InvalidWeight(p.weight));
            }
            if !(p.rate.is_finite() && p.rate > 0.0) {
                return Err(DistError::InvalidRate(p.rate));
            }
        }
        let sum: f64 = phases.iter().map(|p| p.weight).sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(DistError::WeightSum(sum));
        }
        for (i, a) in phases.iter().enumerate() {
            for b in &phases[i + 1..] {
                if rates_coincide(a.rate, b.rate) {
                    return Err(DistError::RepeatedRates(a.rate, b.rate));
                }
            }
        }
        let phases = phases
            .into_iter()
            .map(|p| Phase {
                weight: p.weight / sum,
                rate: p.rate,
            })
            .collect();
        Ok(Self { phases })
    }

    /// Convenience constructor from `(weight, rate)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, DistError> {
        Self::new(
            pairs
                .iter()
                .map(|&(weight, rate)| Phase { weight, rate })
                .collect(),
        )
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn n_phases(&self) -> usize {
        self.phases.len()
    }

    pub fn mean(&self) -> f64 {
        self.phases.iter().map(|p| p.weight / p.rate).sum()
    }

    pub fn laplace(&self, s: f64) -> f64 {
        self.phases
            .iter()
            .map(|p| p.weight * p.rate / (s + p.rate))
            .sum()
    }

    pub fn ccdf(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        self.phases
            .iter()
            .map(|p| p.weight * (-p.rate * t).exp())
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.phases[self.phases.len() - 1];
        for p in &self.phases {
            acc += p.weight;
            if u < acc {
                chosen = *p;
                break;
            }
        }
        let e: f64 = Exp1.sample(rng);
        e / chosen.rate
    }
}

fn rates_coincide(a: f64, b: f64) -> bool {
    (a - b).abs() <= RATE_GAP_TOLERANCE * a.abs().max(b.abs())
}

/// A holding-time law: exponential or hyper-exponential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    Exp(ExpDist),
    Hed(HedDist),
}

impl Distribution {
    pub fn exp(rate: f64) -> Result<Self, DistError> {
        ExpDist::new(rate).map(Self::Exp)
    }

    pub fn hed(pairs: &[(f64, f64)]) -> Result<Self, DistError> {
        HedDist::from_pairs(pairs).map(Self::Hed)
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Exp(d) => d.mean(),
            Self::Hed(d) => d.mean(),
        }
    }

    pub fn laplace(&self, s: f64) -> f64 {
        match self {
            Self::Exp(d) => d.laplace(s),
            Self::Hed(d) => d.laplace(s),
        }
    }

    pub fn ccdf(&self, t: f64) -> f64 {
        match self {
            Self::Exp(d) => d.ccdf(t),
            Self::Hed(d) => d.ccdf(t),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Exp(d) => d.sample(rng),
            Self::Hed(d) => d.sample(rng),
        }
    }

    /// The mixture phases; an exponential is a single phase of weight one.
    pub fn phases(&self) -> Vec<Phase> {
        match self {
            Self::Exp(d) => vec![Phase {
                weight: 1.0,
                rate: d.rate,
            }],
            Self::Hed(d) => d.phases.clone(),
        }
    }

    /// Law of the residual holding time seen from a uniformly random instant
    /// inside a period, with density `ccdf(r) / mean`.
    ///
    /// For a mixture of exponentials this is again a mixture with the same
    /// rates and weights proportional to `weight_i / rate_i`.
    pub fn equilibrium(&self) -> Distribution {
        match self {
            Self::Exp(d) => Self::Exp(*d),
            Self::Hed(d) => {
                let mean = d.mean();
                let phases = d
                    .phases
                    .iter()
                    .map(|p| Phase {
                        weight: p.weight / p.rate / mean,
                        rate: p.rate,
                    })
                    .collect();
                Self::Hed(HedDist { phases })
            }
        }
    }

    /// Multiplies every holding time by `factor` (divides every rate).
    pub fn scaled(&self, factor: f64) -> Result<Self, DistError> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(DistError::InvalidScale(factor));
        }
        Ok(match self {
            Self::Exp(d) => Self::Exp(ExpDist::new(d.rate / factor)?),
            Self::Hed(d) => Self::Hed(HedDist {
                phases: d
                    .phases
                    .iter()
                    .map(|p| Phase {
                        weight: p.weight,
                        rate: p.rate / factor,
                    })
                    .collect(),
            }),
        })
    }
}

impl From<ExpDist> for Distribution {
    fn from(d: ExpDist) -> Self {
        Self::Exp(d)
    }
}

impl From<HedDist> for Distribution {
    fn from(d: HedDist) -> Self {
        Self::Hed(d)
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Exp(d) => write!(f, "exp({})", d.rate),
            Self::Hed(d) => {
                write!(f, "hed(")?;
                for (i, p) in d.phases.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{}:{}", p.weight, p.rate)?;
                }
                write!(f, ")")
            }
        }
    }
}

impl FromStr for Distribution {
    type Err = DistError;

    fn from_str(literal: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| DistError::Parse {
            literal: literal.to_string(),
            reason: reason.to_string(),
        };
        let text = literal.trim();
        let open = text.find('(').ok_or_else(|| err("missing `(`"))?;
        let body = text[open + 1..]
            .strip_suffix(')')
            .ok_or_else(|| err("missing closing `)`"))?;
        let number = |s: &str| -> Result<f64, DistError> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| err(&format!("`{}` is not a number", s.trim())))
        };
        match text[..open].trim().to_ascii_lowercase().as_str() {
            "exp" => Distribution::exp(number(body)?),
            "hed" => {
                let mut phases = Vec::new();
                for item in body.split(',') {
                    let (w, r) = item
                        .split_once(':')
                        .ok_or_else(|| err("hed phases are written weight:rate"))?;
                    phases.push(Phase {
                        weight: number(w)?,
                        rate: number(r)?,
                    });
                }
                HedDist::new(phases).map(Distribution::Hed)
            }
            other => Err(err(&format!("unknown family `{other}`"))),
        }
    }
}

/// ON/OFF holding-time pair for one channel's primary user.
///
/// ON times are exponential; OFF times are exponential or hyper-exponential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnOffModel {
    pub on: ExpDist,
    pub off: Distribution,
}

impl OnOffModel {
    pub fn new(on: ExpDist, off: Distribution) -> Self {
        Self { on, off }
    }

    /// Picks the ON rate so that the long-run busy fraction equals `duty_cycle`.
    pub fn with_duty_cycle(off: Distribution, duty_cycle: f64) -> Result<Self, DistError> {
        if !(duty_cycle > 0.0 && duty_cycle < 1.0) {
            return Err(DistError::InvalidDutyCycle(duty_cycle));
        }
        let mean_on = off.mean() * duty_cycle / (1.0 - duty_cycle);
        Ok(Self {
            on: ExpDist::with_mean(mean_on)?,
            off,
        })
    }

    /// E(X)
    pub fn mean_on(&self) -> f64 {
        self.on.mean()
    }

    /// E(Y)
    pub fn mean_off(&self) -> f64 {
        self.off.mean()
    }

    pub fn mean_cycle(&self) -> f64 {
        self.mean_on() + self.mean_off()
    }

    /// Long-run fraction of time the primary user is ON.
    pub fn duty_cycle(&self) -> f64 {
        self.mean_on() / self.mean_cycle()
    }

    /// Long-run fraction of time the channel is idle.
    pub fn idle_fraction(&self) -> f64 {
        self.mean_off() / self.mean_cycle()
    }

    /// Same ON law, exponential OFF law with the same mean OFF time.
    pub fn exponential_equivalent(&self) -> Self {
        Self {
            on: self.on,
            off: Distribution::Exp(ExpDist {
                rate: 1.0 / self.mean_off(),
            }),
        }
    }

    /// Multiplies every mean holding time by `factor`; the duty cycle is kept.
    pub fn scaled(&self, factor: f64) -> Result<Self, DistError> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(DistError::InvalidScale(factor));
        }
        Ok(Self {
            on: ExpDist::new(self.on.rate / factor)?,
            off: self.off.scaled(factor)?,
        })
    }
}

impl fmt::Display for OnOffModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} / {}", Distribution::Exp(self.on), self.off)
    }
}

/// Parses `ON / OFF`, e.g. `exp(2) / hed(0.5:1, 0.5:5)`.
impl FromStr for OnOffModel {
    type Err = DistError;

    fn from_str(literal: &str) -> Result<Self, Self::Err> {
        let (on, off) = literal.split_once('/').ok_or_else(|| DistError::Parse {
            literal: literal.to_string(),
            reason: "expected `ON / OFF`".into(),
        })?;
        let on = match on.parse::<Distribution>()? {
            Distribution::Exp(d) => d,
            Distribution::Hed(_) => {
                return Err(DistError::Parse {
                    literal: literal.to_string(),
                    reason: "ON times must be exponential".into(),
                })
            }
        };
        Ok(Self::new(on, off.parse()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hed(pairs: &[(f64, f64)]) -> Distribution {
        Distribution::hed(pairs).unwrap()
    }

    #[test]
    fn means() {
        assert_eq!(Distribution::exp(2.0).unwrap().mean(), 0.5);
        assert_eq!(hed(&[(1.0, 4.0)]).mean(), 0.25);
        assert!((hed(&[(0.5, 1.0), (0.5, 2.0)]).mean() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn laplace_values() {
        for d in [Distribution::exp(3.0).unwrap(), hed(&[(0.2, 1.0), (0.8, 7.0)])] {
            assert!((d.laplace(0.0) - 1.0).abs() < 1e-15);
        }
        assert_eq!(Distribution::exp(1.0).unwrap().laplace(1.0), 0.5);
        assert!((hed(&[(0.5, 1.0), (0.5, 3.0)]).laplace(1.0) - 0.625).abs() < 1e-15);
    }

    #[test]
    fn laplace_strictly_decreasing() {
        let d = hed(&[(0.9, 10.0), (0.1, 0.1)]);
        let mut prev = d.laplace(0.0);
        for i in 1..200 {
            let v = d.laplace(i as f64 * 0.25);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn single_phase_matches_exponential() {
        let e = Distribution::exp(2.7).unwrap();
        let h = hed(&[(1.0, 2.7)]);
        for i in 0..100 {
            let s = i as f64 * 0.37;
            assert!((e.laplace(s) - h.laplace(s)).abs() <= 1e-15);
        }
    }

    #[test]
    fn weights_are_normalized_or_rejected() {
        let d = HedDist::from_pairs(&[(0.5, 1.0), (0.5 + 5e-10, 2.0)]).unwrap();
        let sum: f64 = d.phases().iter().map(|p| p.weight).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(matches!(
            HedDist::from_pairs(&[(0.5, 1.0), (0.4, 2.0)]),
            Err(DistError::WeightSum(_))
        ));
    }

    #[test]
    fn invalid_parameters() {
        assert!(ExpDist::new(0.0).is_err());
        assert!(ExpDist::new(f64::NAN).is_err());
        assert!(matches!(HedDist::new(vec![]), Err(DistError::NoPhases)));
        assert!(matches!(
            HedDist::from_pairs(&[(0.5, 1.0), (0.5, 1.0)]),
            Err(DistError::RepeatedRates(..))
        ));
        assert!(matches!(
            HedDist::from_pairs(&[(1.2, 1.0), (-0.2, 3.0)]),
            Err(DistError::InvalidWeight(_))
        ));
    }

    #[test]
    fn literal_round_trip() {
        for text in ["exp(2.5)", "hed(0.9:10, 0.1:0.1)", "hed(0.25:1, 0.25:3, 0.5:9)"] {
            let d: Distribution = text.parse().unwrap();
            assert_eq!(d.to_string(), text);
        }
        let d: Distribution = " HED( 0.5 : 1.0 ,0.5:5.0 ) ".parse().unwrap();
        assert_eq!(d.phases().len(), 2);
        assert!("gamma(1)".parse::<Distribution>().is_err());
        assert!("exp(1".parse::<Distribution>().is_err());
        assert!("hed(0.5, 0.5)".parse::<Distribution>().is_err());
    }

    #[test]
    fn model_literal() {
        let m: OnOffModel = "exp(2) / hed(0.5:1, 0.5:5)".parse().unwrap();
        assert_eq!(m.on.rate(), 2.0);
        assert!((m.mean_off() - 0.6).abs() < 1e-15);
        assert!("hed(1:2) / exp(1)".parse::<OnOffModel>().is_err());
    }

    #[test]
    fn duty_cycle_construction_and_scaling() {
        let m = OnOffModel::with_duty_cycle(hed(&[(0.9, 10.0), (0.1, 0.1)]), 0.3).unwrap();
        assert!((m.duty_cycle() - 0.3).abs() < 1e-12);
        let s = m.scaled(2.0).unwrap();
        assert!((s.duty_cycle() - m.duty_cycle()).abs() < 1e-12);
        assert!((s.mean_cycle() - 2.0 * m.mean_cycle()).abs() < 1e-12);
        let e = m.exponential_equivalent();
        assert!((e.mean_off() - m.mean_off()).abs() < 1e-15);
        assert!(OnOffModel::with_duty_cycle(hed(&[(1.0, 1.0)]), 1.0).is_err());
    }

    #[test]
    fn equilibrium_weights() {
        let d = hed(&[(0.9, 10.0), (0.1, 0.1)]);
        let q = d.equilibrium().phases();
        assert!((q[0].weight - 0.09 / 1.09).abs() < 1e-15);
        assert!((q[1].weight - 1.0 / 1.09).abs() < 1e-15);
    }

    fn sample_mean_check(d: &Distribution, n: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - d.mean()).abs() <= 3.0 * se,
            "{d}: sample mean {mean}, expected {} (se {se})",
            d.mean()
        );
    }

    #[test]
    fn sample_means() {
        sample_mean_check(&Distribution::exp(1.0).unwrap(), 1_000_000, 1);
        let h = hed(&[(0.9, 10.0), (0.1, 0.1)]);
        assert!((h.mean() - 1.09).abs() < 1e-12);
        sample_mean_check(&h, 1_000_000, 2);
    }

    // Two-sample Kolmogorov-Smirnov: a one-phase mixture draws from the
    // same law as the exponential with that rate.
    #[test]
    fn single_phase_sampling_matches_exponential() {
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut a: Vec<f64> = (0..n)
            .map(|_| Distribution::exp(2.0).unwrap().sample(&mut rng))
            .collect();
        let mut b: Vec<f64> = (0..n).map(|_| hed(&[(1.0, 2.0)]).sample(&mut rng)).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < n && j < n {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 - j as f64).abs() / n as f64);
        }
        // Critical value for p = 0.01 with equal sample sizes.
        let critical = 1.628 * (2.0 / n as f64).sqrt();
        assert!(d < critical, "KS statistic {d} >= {critical}");
    }
}
