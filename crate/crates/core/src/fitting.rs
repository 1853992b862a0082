//! Hyper-exponential parameters from data: a loader for distribution
//! literals and an EM fitter for mixtures of exponentials.

use std::io::BufRead;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{DistError, Distribution, HedDist, Phase};

/// Relative gap below which fitted rates are merged.
pub const MERGE_GAP: f64 = 1e-6;
/// Phases whose weight falls below this are dropped and flagged.
pub const MIN_WEIGHT: f64 = 1e-10;
pub const MAX_PHASES: usize = 6;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("cannot parse `{literal}`: {reason}")]
    Parse { literal: String, reason: String },
    #[error("invalid parameters: {0}")]
    InvalidParams(DistError),
    #[error("sample value {value} on line {line} is not a positive number")]
    BadSample { line: usize, value: String },
    #[error("{count} samples are too few for {phases} phases (need {need})")]
    InsufficientSamples { count: usize, phases: usize, need: usize },
    #[error("phase count {0} outside 1..={MAX_PHASES}")]
    PhaseCount(usize),
    #[error("log-likelihood decreased from {before} to {after} at iteration {iteration}")]
    LikelihoodDecreased { iteration: usize, before: f64, after: f64 },
    #[error("no convergence after {} iterations; best fit {}", .0.iterations, .0.distribution())]
    NonConvergence(Box<HedFit>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Positive idle-time observations in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdleTimeSample {
    pub values: Vec<f64>,
    pub source: String,
}

impl IdleTimeSample {
    pub fn new(values: Vec<f64>, source: impl Into<String>) -> Result<Self, FitError> {
        if values.is_empty() {
            return Err(FitError::InsufficientSamples {
                count: 0,
                phases: 1,
                need: 1,
            });
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(FitError::BadSample {
                line: i + 1,
                value: v.to_string(),
            });
        }
        Ok(Self {
            values,
            source: source.into(),
        })
    }

    /// One value per line; blank lines and `#` comments are skipped.
    pub fn read<R: BufRead>(input: R, source: impl Into<String>) -> Result<Self, FitError> {
        let mut values = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let text = line.split('#').next().unwrap_or("").trim();
            if text.is_empty() {
                continue;
            }
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() && v > 0.0 => values.push(v),
                _ => {
                    return Err(FitError::BadSample {
                        line: i + 1,
                        value: text.to_string(),
                    })
                }
            }
        }
        Self::new(values, source)
    }

    pub fn load(path: &Path) -> Result<Self, FitError> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file), path.display().to_string())
    }
}

/// Parses a `hed(...)` or `exp(...)` literal into a hyper-exponential.
pub fn parse_hed_params(literal: &str) -> Result<HedDist, FitError> {
    match literal.trim().parse::<Distribution>() {
        Ok(Distribution::Hed(h)) => Ok(h),
        Ok(Distribution::Exp(e)) => HedDist::from_pairs(&[(1.0, e.rate())]).map_err(FitError::InvalidParams),
        Err(DistError::Parse { literal, reason }) => Err(FitError::Parse { literal, reason }),
        Err(e) => Err(FitError::InvalidParams(e)),
    }
}

/// Reads a distribution literal from a file (first non-comment line).
pub fn load_hed_params(path: &Path) -> Result<HedDist, FitError> {
    let text = std::fs::read_to_string(path)?;
    let line = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .find(|l| !l.is_empty())
        .unwrap_or("");
    parse_hed_params(line)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Stop when the relative log-likelihood gain falls below this.
    pub tol: f64,
    /// `None` starts from rates log-spaced between `1/max` and `1/min` of
    /// the sample; a seed draws the starting rates log-uniformly from the
    /// same range instead.
    pub seed: Option<u64>,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            tol: 1e-12,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcdfRow {
    pub t: f64,
    pub empirical: f64,
    pub model: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedFit {
    pub hed: HedDist,
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Some phase collapsed (vanishing weight) or two rates were merged.
    pub degenerate: bool,
    pub ccdf: Vec<CcdfRow>,
    pub seed: Option<u64>,
}

impl HedFit {
    pub fn distribution(&self) -> Distribution {
        Distribution::Hed(self.hed.clone())
    }

    pub fn final_log_likelihood(&self) -> f64 {
        self.log_likelihood.last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

fn log_likelihood(x: &[f64], w: &[f64], r: &[f64]) -> f64 {
    x.iter()
        .map(|&xi| {
            let terms: Vec<f64> = w.iter().zip(r).map(|(&wj, &rj)| wj.ln() + rj.ln() - rj * xi).collect();
            log_sum_exp(&terms)
        })
        .sum()
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn initial_rates(x: &[f64], k: usize, seed: Option<u64>) -> Vec<f64> {
    let max = x.iter().copied().fold(0.0, f64::max);
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let (lo, hi) = ((1.0 / max).ln(), (1.0 / min).ln());
    match seed {
        None if k == 1 => vec![((lo + hi) / 2.0).exp()],
        None => (0..k).map(|j| (lo + (hi - lo) * j as f64 / (k - 1) as f64).exp()).collect(),
        Some(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut r: Vec<f64> = (0..k).map(|_| (lo + (hi - lo) * rng.random::<f64>()).exp()).collect();
            r.sort_by(f64::total_cmp);
            r
        }
    }
}

/// Merges rates closer than [`MERGE_GAP`] and drops vanishing weights.
fn tidy(w: &[f64], r: &[f64]) -> (Vec<Phase>, bool) {
    let mut phases: Vec<Phase> = w
        .iter()
        .zip(r)
        .filter(|(wj, _)| **wj > MIN_WEIGHT)
        .map(|(&weight, &rate)| Phase { weight, rate })
        .collect();
    let mut degenerate = phases.len() < w.len();
    phases.sort_by(|a, b| a.rate.total_cmp(&b.rate));
    let mut merged: Vec<Phase> = Vec::with_capacity(phases.len());
    for p in phases {
        match merged.last_mut() {
            Some(last) if (p.rate - last.rate).abs() < MERGE_GAP * p.rate.max(last.rate) => {
                let weight = last.weight + p.weight;
                last.rate = (last.weight * last.rate + p.weight * p.rate) / weight;
                last.weight = weight;
                degenerate = true;
            }
            _ => merged.push(p),
        }
    }
    let total: f64 = merged.iter().map(|p| p.weight).sum();
    for p in &mut merged {
        p.weight /= total;
    }
    (merged, degenerate)
}

/// Empirical vs model CCDF at `points` log-spaced times across the sample.
pub fn ccdf_table(x: &[f64], model: &HedDist, points: usize) -> Vec<CcdfRow> {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let n = sorted.len() as f64;
    (0..points)
        .map(|i| {
            let t = if points == 1 || min == max {
                min
            } else {
                (min.ln() + (max.ln() - min.ln()) * i as f64 / (points - 1) as f64).exp()
            };
            let above = sorted.len() - sorted.partition_point(|&v| v <= t);
            CcdfRow {
                t,
                empirical: above as f64 / n,
                model: model.ccdf(t),
            }
        })
        .collect()
}

pub const CCDF_POINTS: usize = 40;

/// EM fit of an `n_phases` mixture of exponentials.
pub fn fit_hed_em(sample: &IdleTimeSample, n_phases: usize, opts: &EmOptions) -> Result<HedFit, FitError> {
    if n_phases == 0 || n_phases > MAX_PHASES {
        return Err(FitError::PhaseCount(n_phases));
    }
    let x = &sample.values;
    let need = 10 * n_phases;
    if x.len() < need {
        return Err(FitError::InsufficientSamples {
            count: x.len(),
            phases: n_phases,
            need,
        });
    }
    let n = x.len() as f64;
    let mut r = initial_rates(x, n_phases, opts.seed);
    let mut w = vec![1.0 / n_phases as f64; n_phases];
    let mut trajectory = vec![log_likelihood(x, &w, &r)];
    let mut converged = false;
    let mut resp = vec![0.0; n_phases];
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut sum_r = vec![0.0; n_phases];
        let mut sum_rx = vec![0.0; n_phases];
        for &xi in x {
            for j in 0..n_phases {
                resp[j] = if w[j] > 0.0 {
                    w[j].ln() + r[j].ln() - r[j] * xi
                } else {
                    f64::NEG_INFINITY
                };
            }
            let norm = log_sum_exp(&resp);
            for j in 0..n_phases {
                let g = (resp[j] - norm).exp();
                sum_r[j] += g;
                sum_rx[j] += g * xi;
            }
        }
        for j in 0..n_phases {
            w[j] = sum_r[j] / n;
            if sum_rx[j] > 0.0 {
                r[j] = sum_r[j] / sum_rx[j];
            }
        }
        let ll = log_likelihood(x, &w, &r);
        let before = *trajectory.last().unwrap();
        if ll < before - 1e-9 * before.abs().max(1.0) {
            return Err(FitError::LikelihoodDecreased {
                iteration: iterations,
                before,
                after: ll,
            });
        }
        trajectory.push(ll);
        if (ll - before).abs() <= opts.tol * ll.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    let (phases, degenerate) = tidy(&w, &r);
    let hed = HedDist::new(phases).map_err(FitError::InvalidParams)?;
    let fit = HedFit {
        ccdf: ccdf_table(x, &hed, CCDF_POINTS),
        hed,
        log_likelihood: trajectory,
        iterations,
        converged,
        degenerate,
        seed: opts.seed,
    };
    if converged {
        Ok(fit)
    } else {
        Err(FitError::NonConvergence(Box::new(fit)))
    }
}

/// Runs the unseeded start plus one fit per seed in parallel and keeps the
/// highest likelihood, breaking ties in favour of the unseeded start, then
/// the smaller seed. Non-converged fits take part.
pub fn fit_hed_em_restarts(
    sample: &IdleTimeSample,
    n_phases: usize,
    opts: &EmOptions,
    seeds: &[u64],
) -> Result<HedFit, FitError> {
    let starts: Vec<Option<u64>> = std::iter::once(None).chain(seeds.iter().copied().map(Some)).collect();
    let mut results: Vec<(Option<u64>, Result<HedFit, FitError>)> = starts
        .par_iter()
        .map(|&seed| {
            let o = EmOptions { seed, ..*opts };
            (seed, fit_hed_em(sample, n_phases, &o))
        })
        .collect();
    results.sort_by_key(|(s, _)| *s);
    results.dedup_by_key(|(s, _)| *s);
    let score = |r: &Result<HedFit, FitError>| match r {
        Ok(f) => Some(f.final_log_likelihood()),
        Err(FitError::NonConvergence(f)) => Some(f.final_log_likelihood()),
        Err(_) => None,
    };
    let mut best: Option<(f64, usize)> = None;
    for (i, (_, r)) in results.iter().enumerate() {
        if let Some(ll) = score(r) {
            if best.is_none_or(|(b, _)| ll > b) {
                best = Some((ll, i));
            }
        }
    }
    match best {
        Some((_, i)) => results.swap_remove(i).1,
        None => results
            .into_iter()
            .next()
            .map(|(_, r)| r)
            .unwrap_or(Err(FitError::PhaseCount(n_phases))),
    }
}
