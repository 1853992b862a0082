//! Conditional channel-idle probabilities for an ON/OFF primary user.
//!
//! For exponential ON times and hyper-exponential OFF times the Laplace
//! transform of `P_OFF,OFF` is rational:
//!
//! ```text
//! P*_OFF,OFF(s) = 1/s - N(s) / (E(Y) s D(s))
//! N(s) = sum_i p_i prod_{j != i} (s + l_j)
//! D(s) = prod_i (s + l_i) + l_on N(s)
//! ```
//!
//! `D` is monic of degree `N` with `N` simple, real, negative roots `r_k`
//! (they interlace the poles `-l_i`). Summing residues at `0` and every `r_k`
//! gives
//!
//! ```text
//! R(t) = N(0) / prod_k(-r_k) + sum_k N(r_k) e^{r_k t} / (r_k prod_{j != k}(r_k - r_j))
//! P_OFF,OFF(t) = 1 - R(t) / E(Y)
//! P_ON,ON(t)   = 1 - R(t) / E(X)
//! ```
//!
//! because swapping the roles of the ON and OFF laws leaves the second term
//! unchanged apart from the mean in front. A Monte Carlo simulation of the
//! alternating renewal process, started at a stationary point, serves as an
//! independent check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{Distribution, OnOffModel};
use crate::poly::Poly;

/// Relative gap below which two roots of `D(s)` are treated as repeated.
pub const ROOT_GAP_TOLERANCE: f64 = 1e-9;

/// Maximum `|D(r)|` relative to the magnitude of its terms.
pub const ROOT_RESIDUAL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IdleProbError {
    #[error("denominator roots {0} and {1} coincide; perturb the HED rates slightly")]
    RepeatedRoots(f64, f64),
    #[error("root finding failed: {0}")]
    NumericalFailure(String),
}

/// Precomputed residue expansion of the idle probabilities for one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdleProbTable {
    model: OnOffModel,
    /// Roots of `D(s)`, ordered from closest to zero to most negative.
    roots: Vec<f64>,
    /// `R(t) = constant + sum_k coefficients[k] e^{roots[k] t}`.
    residue_constant: f64,
    residue_coefficients: Vec<f64>,
    /// `R / E(Y)`, the OFF-conditioned expansion.
    off_constant: f64,
    off_coefficients: Vec<f64>,
    /// `R / E(X)`, the ON-conditioned expansion.
    on_constant: f64,
    on_coefficients: Vec<f64>,
}

/// Numerator and denominator polynomials `N(s)`, `D(s)` for a model.
pub fn transform_polynomials(model: &OnOffModel) -> (Poly, Poly) {
    let phases = model.off.phases();
    let mut poles = Poly::constant(1.0);
    for p in &phases {
        poles = poles.mul(&Poly::linear(p.rate));
    }
    let mut numerator = Poly::constant(0.0);
    for (i, p) in phases.iter().enumerate() {
        let mut term = Poly::constant(p.weight);
        for (j, q) in phases.iter().enumerate() {
            if i != j {
                term = term.mul(&Poly::linear(q.rate));
            }
        }
        numerator = numerator.add(&term);
    }
    let denominator = poles.add(&numerator.scale(model.on.rate()));
    (numerator, denominator)
}

impl IdleProbTable {
    pub fn build(model: &OnOffModel) -> Result<Self, IdleProbError> {
        let (numerator, denominator) = transform_polynomials(model);
        let n = denominator.degree();

        let mut roots = Vec::with_capacity(n);
        for (re, im) in denominator.companion_roots() {
            let r = denominator.polish(re);
            let scale = denominator.term_scale(r).max(f64::MIN_POSITIVE);
            if im.abs() > 1e-6 * re.abs().max(1.0) {
                return Err(IdleProbError::NumericalFailure(format!(
                    "complex root {re}{im:+}i of D(s) for model {model}"
                )));
            }
            let residual = denominator.eval(r).abs();
            if residual.is_nan() || residual > ROOT_RESIDUAL_TOLERANCE * scale {
                return Err(IdleProbError::NumericalFailure(format!(
                    "|D({r})| = {residual:e} exceeds tolerance for model {model}"
                )));
            }
            if r.is_nan() || r >= 0.0 {
                return Err(IdleProbError::NumericalFailure(format!(
                    "root {r} of D(s) is not negative for model {model}"
                )));
            }
            roots.push(r);
        }
        roots.sort_by(|a, b| b.total_cmp(a));
        for w in roots.windows(2) {
            if (w[0] - w[1]).abs() <= ROOT_GAP_TOLERANCE * w[0].abs().max(w[1].abs()) {
                return Err(IdleProbError::RepeatedRoots(w[0], w[1]));
            }
        }
        Ok(Self::from_roots(model.clone(), &numerator, roots))
    }

    fn from_roots(model: OnOffModel, numerator: &Poly, roots: Vec<f64>) -> Self {
        let residue_constant = numerator.eval(0.0) / roots.iter().map(|r| -r).product::<f64>();
        let residue_coefficients: Vec<f64> = roots
            .iter()
            .enumerate()
            .map(|(k, &rk)| {
                let spread: f64 = roots
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != k)
                    .map(|(_, &rj)| rk - rj)
                    .product();
                numerator.eval(rk) / (rk * spread)
            })
            .collect();
        let mean_off = model.mean_off();
        let mean_on = model.mean_on();
        Self {
            off_constant: residue_constant / mean_off,
            off_coefficients: residue_coefficients.iter().map(|c| c / mean_off).collect(),
            on_constant: residue_constant / mean_on,
            on_coefficients: residue_coefficients.iter().map(|c| c / mean_on).collect(),
            residue_constant,
            residue_coefficients,
            roots,
            model,
        }
    }

    /// Replaces the root at `index` by `factor` times itself and recomputes
    /// the coefficients without validation. Used to check that the oracle
    /// comparison detects a broken table.
    #[doc(hidden)]
    pub fn with_corrupted_root(&self, index: usize, factor: f64) -> Self {
        let (numerator, _) = transform_polynomials(&self.model);
        let mut roots = self.roots.clone();
        roots[index] *= factor;
        Self::from_roots(self.model.clone(), &numerator, roots)
    }

    pub fn model(&self) -> &OnOffModel {
        &self.model
    }

    pub fn roots(&self) -> &[f64] {
        &self.roots
    }

    pub fn residue_constant(&self) -> f64 {
        self.residue_constant
    }

    pub fn residue_coefficients(&self) -> &[f64] {
        &self.residue_coefficients
    }

    /// The common residue sum `R(dt)`, unscaled and unclamped.
    pub fn residue_sum(&self, dt: f64) -> f64 {
        expand(self.residue_constant, &self.residue_coefficients, &self.roots, dt)
    }

    /// `1 - R(dt)/E(Y)` before clamping to `[0, 1]`.
    pub fn p_off_off_unclamped(&self, dt: f64) -> f64 {
        1.0 - expand(self.off_constant, &self.off_coefficients, &self.roots, dt)
    }

    /// `1 - R(dt)/E(X)` before clamping to `[0, 1]`.
    pub fn p_on_on_unclamped(&self, dt: f64) -> f64 {
        1.0 - expand(self.on_constant, &self.on_coefficients, &self.roots, dt)
    }

    /// Probability the channel is idle `dt` seconds after it was sensed idle.
    pub fn p_off_off(&self, dt: f64) -> f64 {
        self.p_off_off_unclamped(dt.max(0.0)).clamp(0.0, 1.0)
    }

    /// Probability the channel is busy `dt` seconds after it was sensed busy.
    pub fn p_on_on(&self, dt: f64) -> f64 {
        self.p_on_on_unclamped(dt.max(0.0)).clamp(0.0, 1.0)
    }

    /// Probability the channel is idle `dt` seconds after it was sensed busy.
    pub fn p_on_off(&self, dt: f64) -> f64 {
        1.0 - self.p_on_on(dt)
    }

    /// `E(Y) / (E(X) + E(Y))`, the limit of both idle probabilities.
    pub fn stationary_idle(&self) -> f64 {
        self.model.idle_fraction()
    }
}

fn expand(constant: f64, coefficients: &[f64], roots: &[f64], dt: f64) -> f64 {
    constant
        + coefficients
            .iter()
            .zip(roots)
            .map(|(c, r)| c * (r * dt).exp())
            .sum::<f64>()
}

/// Monte Carlo estimate of a conditional state probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenewalOracleEstimate {
    pub probability: f64,
    pub standard_error: f64,
    pub trials: u64,
}

impl RenewalOracleEstimate {
    fn from_hits(hits: u64, trials: u64) -> Self {
        let p = hits as f64 / trials as f64;
        Self {
            probability: p,
            standard_error: (p * (1.0 - p) / trials as f64).sqrt(),
            trials,
        }
    }

    /// `(value - probability) / standard_error`; zero when both agree exactly.
    pub fn z_score(&self, value: f64) -> f64 {
        let diff = value - self.probability;
        if diff == 0.0 {
            0.0
        } else {
            diff / self.standard_error
        }
    }
}

const ORACLE_CHUNK: u64 = 1 << 14;

/// Fraction of trials in which the channel is OFF `dt` seconds after a
/// stationary instant inside an OFF period.
pub fn oracle_p_off_off<R: Rng + ?Sized>(
    model: &OnOffModel,
    dt: f64,
    trials: u64,
    rng: &mut R,
) -> RenewalOracleEstimate {
    let hits = run_oracle(model, dt, trials, rng.random(), true);
    RenewalOracleEstimate::from_hits(hits, trials)
}

/// Fraction of trials in which the channel is ON `dt` seconds after a
/// stationary instant inside an ON period.
pub fn oracle_p_on_on<R: Rng + ?Sized>(
    model: &OnOffModel,
    dt: f64,
    trials: u64,
    rng: &mut R,
) -> RenewalOracleEstimate {
    let hits = run_oracle(model, dt, trials, rng.random(), false);
    RenewalOracleEstimate::from_hits(hits, trials)
}

// Trials are split into fixed-size chunks, each with its own ChaCha stream,
// so the estimate does not depend on the number of worker threads.
fn run_oracle(model: &OnOffModel, dt: f64, trials: u64, seed: u64, start_off: bool) -> u64 {
    let on = Distribution::Exp(model.on);
    let (same, other) = if start_off {
        (&model.off, &on)
    } else {
        (&on, &model.off)
    };
    let first = same.equilibrium();
    let chunks = trials.div_ceil(ORACLE_CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk);
            let n = ORACLE_CHUNK.min(trials - chunk * ORACLE_CHUNK);
            let mut hits = 0u64;
            for _ in 0..n {
                let mut t = first.sample(&mut rng);
                let mut in_start_state = true;
                while t <= dt {
                    in_start_state = !in_start_state;
                    t += if in_start_state {
                        same.sample(&mut rng)
                    } else {
                        other.sample(&mut rng)
                    };
                }
                hits += in_start_state as u64;
            }
            hits
        })
        .sum()
}
