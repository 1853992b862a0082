//! Channel-selection algorithms (CSAs).
//!
//! Every policy keeps a belief: the probability that each channel is free
//! of its primary user right now. The predictive kinds compute it from the
//! last sensing result and the time elapsed since, using the channel's
//! [`IdleProbTable`]; the greedy kind propagates a belief vector forward one
//! step at a time. Selection is an argmax with ties broken by lowest index.

pub mod slotted;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::OnOffModel;
use crate::idleprob::{IdleProbError, IdleProbTable};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CsaError {
    #[error("channel {0} has never been sensed")]
    NeverSensed(usize),
    #[error("expected {expected} initial beliefs, got {got}")]
    BeliefLength { expected: usize, got: usize },
    #[error("initial belief {0} is outside [0, 1]")]
    InvalidBelief(f64),
    #[error("at least one channel is required")]
    NoChannels,
    #[error("unknown policy `{0}`; expected generalized_predictive, predictive_exponential, greedy, round_robin or random")]
    UnknownPolicy(String),
    #[error("channel {channel}: {source}")]
    Table {
        channel: usize,
        #[source]
        source: IdleProbError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SenseResult {
    Idle,
    Busy,
}

impl SenseResult {
    pub fn is_idle(self) -> bool {
        self == SenseResult::Idle
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsaKind {
    /// Predictive CSA using the true (possibly hyper-exponential) OFF law.
    GeneralizedPredictive,
    /// Predictive CSA that assumes exponential OFF times with the true mean.
    PredictiveExponential,
    /// Myopic POMDP policy with step-by-step belief propagation.
    Greedy,
    RoundRobin,
    Random,
}

impl CsaKind {
    pub const ALL: [CsaKind; 5] = [
        CsaKind::GeneralizedPredictive,
        CsaKind::PredictiveExponential,
        CsaKind::Greedy,
        CsaKind::RoundRobin,
        CsaKind::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CsaKind::GeneralizedPredictive => "generalized_predictive",
            CsaKind::PredictiveExponential => "predictive_exponential",
            CsaKind::Greedy => "greedy",
            CsaKind::RoundRobin => "round_robin",
            CsaKind::Random => "random",
        }
    }
}

impl fmt::Display for CsaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CsaKind {
    type Err = CsaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CsaKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| CsaError::UnknownPolicy(s.to_string()))
    }
}

/// The outcome of sensing one channel at a given time.
///
/// `at` is a slot index in slotted mode and a nanosecond timestamp in the
/// event-driven simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub at: u64,
    pub result: SenseResult,
}

/// Per-channel sensing history plus the prior belief vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub omega: Vec<f64>,
    pub last: Vec<Option<Observation>>,
    pub initial_omega: Vec<f64>,
}

impl BeliefState {
    pub fn new(initial_omega: Vec<f64>) -> Self {
        Self {
            omega: initial_omega.clone(),
            last: vec![None; initial_omega.len()],
            initial_omega,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.initial_omega.len()
    }

    pub fn record(&mut self, channel: usize, at: u64, result: SenseResult) {
        self.last[channel] = Some(Observation { at, result });
    }
}

/// A channel-selection policy together with its per-channel tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsaPolicy {
    kind: CsaKind,
    tables: Vec<IdleProbTable>,
    initial_omega: Vec<f64>,
    slot_duration_ns: Option<u64>,
}

impl CsaPolicy {
    /// Builds the per-channel tables from the true channel models.
    ///
    /// `PredictiveExponential` replaces every OFF law by the exponential law
    /// with the same mean. The default prior is each channel's stationary
    /// idle probability under its true model.
    pub fn new(
        kind: CsaKind,
        models: &[OnOffModel],
        initial_omega: Option<Vec<f64>>,
    ) -> Result<Self, CsaError> {
        if models.is_empty() {
            return Err(CsaError::NoChannels);
        }
        let initial_omega =
            initial_omega.unwrap_or_else(|| models.iter().map(|m| m.idle_fraction()).collect());
        if initial_omega.len() != models.len() {
            return Err(CsaError::BeliefLength {
                expected: models.len(),
                got: initial_omega.len(),
            });
        }
        if let Some(&w) = initial_omega.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(CsaError::InvalidBelief(w));
        }
        let tables = models
            .iter()
            .enumerate()
            .map(|(channel, m)| {
                let model = match kind {
                    CsaKind::PredictiveExponential => m.exponential_equivalent(),
                    _ => m.clone(),
                };
                IdleProbTable::build(&model).map_err(|source| CsaError::Table { channel, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            kind,
            tables,
            initial_omega,
            slot_duration_ns: None,
        })
    }

    pub fn with_slot_duration(mut self, slot_duration_ns: u64) -> Self {
        self.slot_duration_ns = Some(slot_duration_ns);
        self
    }

    pub fn kind(&self) -> CsaKind {
        self.kind
    }

    pub fn tables(&self) -> &[IdleProbTable] {
        &self.tables
    }

    pub fn n_channels(&self) -> usize {
        self.tables.len()
    }

    pub fn initial_omega(&self) -> &[f64] {
        &self.initial_omega
    }

    pub fn slot_duration_ns(&self) -> Option<u64> {
        self.slot_duration_ns
    }

    pub fn slot_seconds(&self) -> f64 {
        self.slot_duration_ns.unwrap_or(0) as f64 * 1e-9
    }

    /// `P_OFF,OFF` of a channel after `dt` seconds.
    pub fn p11(&self, channel: usize, dt: f64) -> f64 {
        self.tables[channel].p_off_off(dt)
    }

    /// `P_ON,OFF` of a channel after `dt` seconds.
    pub fn p01(&self, channel: usize, dt: f64) -> f64 {
        self.tables[channel].p_on_off(dt)
    }

    /// Belief of a channel sensed before, `now - last sensing` nanoseconds later.
    pub fn omega_predictive(
        &self,
        channel: usize,
        now_ns: u64,
        history: &BeliefState,
    ) -> Result<f64, CsaError> {
        let obs = history.last[channel].ok_or(CsaError::NeverSensed(channel))?;
        let dt = now_ns.saturating_sub(obs.at) as f64 * 1e-9;
        Ok(match obs.result {
            SenseResult::Idle => self.p11(channel, dt),
            SenseResult::Busy => self.p01(channel, dt),
        })
    }

    /// Belief of a never-sensed channel at the start of slot `k`.
    pub fn initial_belief(&self, channel: usize, k: u64) -> f64 {
        self.initial_belief_after(channel, k as f64 * self.slot_seconds())
    }

    /// Belief of a never-sensed channel `elapsed` seconds after the start.
    pub fn initial_belief_after(&self, channel: usize, elapsed: f64) -> f64 {
        let w = self.initial_omega[channel];
        w * self.p11(channel, elapsed) + (1.0 - w) * self.p01(channel, elapsed)
    }

    /// Predictive belief at `now_ns`, falling back to the prior for
    /// channels that were never sensed.
    pub fn belief_at(&self, channel: usize, now_ns: u64, history: &BeliefState) -> f64 {
        match self.omega_predictive(channel, now_ns, history) {
            Ok(w) => w,
            Err(_) => self.initial_belief_after(channel, now_ns as f64 * 1e-9),
        }
    }

    /// Descending initial belief, ties by index.
    pub fn round_robin_order(&self) -> Vec<usize> {
        round_robin_order(&self.initial_omega)
    }
}

pub fn round_robin_order(initial_omega: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..initial_omega.len()).collect();
    order.sort_by(|&a, &b| initial_omega[b].total_cmp(&initial_omega[a]).then(a.cmp(&b)));
    order
}

/// Index of the largest belief; the lowest index wins ties.
pub fn select_channel(beliefs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &w) in beliefs.iter().enumerate().skip(1) {
        if w > beliefs[best] {
            best = i;
        }
    }
    best
}

/// One greedy belief update after sensing `sensed`, with `p11`/`p01` taken
/// at one slot duration.
pub fn greedy_update(
    policy: &CsaPolicy,
    beliefs: &[f64],
    sensed: usize,
    result: SenseResult,
) -> Vec<f64> {
    let dt = policy.slot_seconds();
    beliefs
        .iter()
        .enumerate()
        .map(|(a, &w)| {
            if a == sensed {
                if result.is_idle() {
                    1.0
                } else {
                    0.0
                }
            } else {
                w * policy.p11(a, dt) + (1.0 - w) * policy.p01(a, dt)
            }
        })
        .collect()
}

/// Stateful channel selection for the event-driven simulator.
///
/// Times are nanoseconds since the start of the run.
#[derive(Debug, Clone)]
pub struct ChannelSelector<'a> {
    policy: &'a CsaPolicy,
    history: BeliefState,
    greedy_omega: Vec<f64>,
    greedy_at: u64,
    rr_order: Vec<usize>,
    rng: ChaCha8Rng,
    belief_evaluations: u64,
}

impl<'a> ChannelSelector<'a> {
    pub fn new(policy: &'a CsaPolicy, seed: u64) -> Self {
        Self {
            policy,
            history: BeliefState::new(policy.initial_omega.clone()),
            greedy_omega: policy.initial_omega.clone(),
            greedy_at: 0,
            rr_order: policy.round_robin_order(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            belief_evaluations: 0,
        }
    }

    pub fn history(&self) -> &BeliefState {
        &self.history
    }

    /// Number of single-channel belief evaluations performed so far.
    pub fn belief_evaluations(&self) -> u64 {
        self.belief_evaluations
    }

    /// Channel to tune to at time zero.
    pub fn initial_channel(&mut self) -> usize {
        match self.policy.kind {
            CsaKind::RoundRobin => self.rr_order[0],
            CsaKind::Random => self.rng.random_range(0..self.policy.n_channels()),
            _ => {
                let beliefs = self.beliefs(0);
                select_channel(&beliefs)
            }
        }
    }

    pub fn record(&mut self, channel: usize, at_ns: u64, result: SenseResult) {
        if self.policy.kind == CsaKind::Greedy {
            self.greedy_omega = self.propagate(at_ns);
            self.greedy_at = at_ns;
            self.greedy_omega[channel] = if result.is_idle() { 1.0 } else { 0.0 };
        }
        self.history.record(channel, at_ns, result);
    }

    /// Belief vector at `now_ns`.
    pub fn beliefs(&mut self, now_ns: u64) -> Vec<f64> {
        let n = self.policy.n_channels();
        self.belief_evaluations += n as u64;
        match self.policy.kind {
            CsaKind::Greedy => self.propagate(now_ns),
            _ => (0..n)
                .map(|a| self.policy.belief_at(a, now_ns, &self.history))
                .collect(),
        }
    }

    fn propagate(&self, now_ns: u64) -> Vec<f64> {
        let dt = now_ns.saturating_sub(self.greedy_at) as f64 * 1e-9;
        self.greedy_omega
            .iter()
            .enumerate()
            .map(|(a, &w)| w * self.policy.p11(a, dt) + (1.0 - w) * self.policy.p01(a, dt))
            .collect()
    }

    /// Next channel to sense after `current` was found busy.
    pub fn next_after_busy(&mut self, current: usize, now_ns: u64) -> usize {
        let n = self.policy.n_channels();
        match self.policy.kind {
            CsaKind::RoundRobin => {
                let pos = self.rr_order.iter().position(|&c| c == current).unwrap_or(0);
                self.rr_order[(pos + 1) % n]
            }
            CsaKind::Random if n > 1 => {
                let pick = self.rng.random_range(0..n - 1);
                if pick >= current {
                    pick + 1
                } else {
                    pick
                }
            }
            CsaKind::Random => current,
            _ => {
                let beliefs = self.beliefs(now_ns);
                select_channel(&beliefs)
            }
        }
    }

    /// Channel to sense after a backoff period.
    pub fn after_backoff(&mut self, current: usize, now_ns: u64) -> usize {
        match self.policy.kind {
            CsaKind::Random => self.rng.random_range(0..self.policy.n_channels()),
            _ => self.next_after_busy(current, now_ns),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{Distribution, ExpDist};

    fn exp_model(on: f64, off: f64) -> OnOffModel {
        OnOffModel::new(ExpDist::new(on).unwrap(), Distribution::exp(off).unwrap())
    }

    fn symmetric_policy(kind: CsaKind, omega: Vec<f64>) -> CsaPolicy {
        let models = vec![exp_model(1.0, 1.0); omega.len()];
        CsaPolicy::new(kind, &models, Some(omega)).unwrap()
    }

    const LN2_NS: u64 = 693_147_181;

    #[test]
    fn predictive_belief_values() {
        let p = symmetric_policy(CsaKind::GeneralizedPredictive, vec![0.5]);
        let mut h = BeliefState::new(vec![0.5]);
        assert!(matches!(
            p.omega_predictive(0, 0, &h),
            Err(CsaError::NeverSensed(0))
        ));
        h.record(0, 100, SenseResult::Idle);
        assert_eq!(p.omega_predictive(0, 100, &h).unwrap(), 1.0);
        let w = p.omega_predictive(0, 100 + LN2_NS, &h).unwrap();
        assert!((w - 0.625).abs() < 1e-9);
        h.record(0, 100, SenseResult::Busy);
        assert!(p.omega_predictive(0, 100, &h).unwrap().abs() < 1e-15);
    }

    #[test]
    fn initial_belief_values() {
        let p = symmetric_policy(CsaKind::GeneralizedPredictive, vec![1.0, 0.5])
            .with_slot_duration(LN2_NS);
        assert_eq!(p.initial_belief(0, 0), 1.0);
        assert_eq!(p.initial_belief(1, 0), 0.5);
        assert!((p.initial_belief(1, 1) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn argmax_and_ties() {
        assert_eq!(select_channel(&[0.2, 0.9, 0.4]), 1);
        assert_eq!(select_channel(&[0.5, 0.5]), 0);
        assert_eq!(select_channel(&[0.7]), 0);
    }

    #[test]
    fn round_robin_cycle() {
        let p = symmetric_policy(CsaKind::RoundRobin, vec![0.3, 0.9, 0.6]);
        let mut s = ChannelSelector::new(&p, 0);
        let mut seq = vec![s.initial_channel()];
        for _ in 0..5 {
            let cur = *seq.last().unwrap();
            seq.push(s.next_after_busy(cur, 0));
        }
        assert_eq!(seq, vec![1, 2, 0, 1, 2, 0]);
    }

    #[test]
    fn greedy_update_values() {
        let p = symmetric_policy(CsaKind::Greedy, vec![0.5, 0.5]).with_slot_duration(LN2_NS);
        let next = greedy_update(&p, &[0.3, 1.0], 0, SenseResult::Idle);
        assert_eq!(next[0], 1.0);
        assert!((next[1] - 0.625).abs() < 1e-9);
        let next = greedy_update(&p, &[0.3, 0.0], 0, SenseResult::Busy);
        assert_eq!(next[0], 0.0);
        assert!((next[1] - 0.375).abs() < 1e-9);
    }

    #[test]
    fn random_never_repeats_busy_channel() {
        let p = symmetric_policy(CsaKind::Random, vec![0.5; 4]);
        let mut s = ChannelSelector::new(&p, 42);
        for i in 0..200 {
            let cur = i % 4;
            assert_ne!(s.next_after_busy(cur, 0), cur);
        }
    }

    #[test]
    fn exponential_policy_uses_moment_matched_tables() {
        let m = OnOffModel::new(
            ExpDist::new(2.0).unwrap(),
            "hed(0.9:10, 0.1:0.1)".parse().unwrap(),
        );
        let p = CsaPolicy::new(CsaKind::PredictiveExponential, std::slice::from_ref(&m), None).unwrap();
        assert_eq!(p.tables()[0].roots().len(), 1);
        assert!((p.tables()[0].model().mean_off() - m.mean_off()).abs() < 1e-15);
        assert!((p.initial_omega()[0] - m.idle_fraction()).abs() < 1e-15);
    }

    #[test]
    fn policy_strings() {
        for k in CsaKind::ALL {
            assert_eq!(k.to_string().parse::<CsaKind>().unwrap(), k);
        }
        assert!("best".parse::<CsaKind>().is_err());
    }

    #[test]
    fn rejects_bad_priors() {
        let models = vec![exp_model(1.0, 1.0); 2];
        assert!(CsaPolicy::new(CsaKind::Greedy, &models, Some(vec![0.5])).is_err());
        assert!(CsaPolicy::new(CsaKind::Greedy, &models, Some(vec![0.5, 1.5])).is_err());
        assert!(CsaPolicy::new(CsaKind::Greedy, &[], None).is_err());
    }
}
