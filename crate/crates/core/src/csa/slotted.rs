//! Slotted secondary access: the predictive CSA evaluated from the last
//! sensing slot, the greedy (myopic POMDP) CSA with one-slot propagation,
//! and executable checks of their equivalence and of the round-robin and
//! even-gap structure for identical channels.
//!
//! Channels are described by their multi-slot transition probabilities
//! through [`SlotTransitions`]. [`RenewalSlots`] evaluates an
//! [`IdleProbTable`] at `n` slot durations; [`MarkovSlots`] is a two-state
//! Markov chain observed once per slot. The two agree for exponential ON/OFF
//! channels. For hyper-exponential OFF times the renewal probabilities do
//! not satisfy `p11(n + 1) = p11(n) p11 + (1 - p11(n)) p01`, so the greedy
//! recursion and the predictive lookup drift apart; the checks here report
//! the gap instead of assuming it away.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{round_robin_order, select_channel, BeliefState, CsaError, CsaPolicy, SenseResult};
use crate::idleprob::IdleProbTable;

/// `n`-slot idle probabilities of one channel.
pub trait SlotTransitions {
    /// Probability idle `n` slots after being sensed idle.
    fn p11(&self, n: u64) -> f64;
    /// Probability idle `n` slots after being sensed busy.
    fn p01(&self, n: u64) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenewalSlots {
    table: IdleProbTable,
    slot_seconds: f64,
}

impl RenewalSlots {
    pub fn new(table: IdleProbTable, slot_seconds: f64) -> Self {
        Self {
            table,
            slot_seconds,
        }
    }

    /// One-slot Markov chain with the same one-slot probabilities.
    pub fn markov_approximation(&self) -> MarkovSlots {
        MarkovSlots {
            p11: self.p11(1),
            p01: self.p01(1),
        }
    }
}

impl SlotTransitions for RenewalSlots {
    fn p11(&self, n: u64) -> f64 {
        self.table.p_off_off(n as f64 * self.slot_seconds)
    }

    fn p01(&self, n: u64) -> f64 {
        self.table.p_on_off(n as f64 * self.slot_seconds)
    }
}

impl CsaPolicy {
    /// Per-channel renewal slot transitions at this policy's slot duration.
    pub fn renewal_slots(&self) -> Vec<RenewalSlots> {
        self.tables()
            .iter()
            .map(|t| RenewalSlots::new(t.clone(), self.slot_seconds()))
            .collect()
    }
}

/// Two-state channel observed once per slot (Gilbert-Elliott).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkovSlots {
    pub p11: f64,
    pub p01: f64,
}

impl MarkovSlots {
    pub fn new(p11: f64, p01: f64) -> Result<Self, CsaError> {
        for p in [p11, p01] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CsaError::InvalidBelief(p));
            }
        }
        Ok(Self { p11, p01 })
    }

    /// Second eigenvalue `p11 - p01` of the transition matrix.
    fn correlation(&self) -> f64 {
        self.p11 - self.p01
    }

    pub fn stationary_idle(&self) -> f64 {
        let denom = 1.0 - self.correlation();
        if denom <= f64::EPSILON {
            // Absorbing chain; every state persists.
            0.5
        } else {
            self.p01 / denom
        }
    }

    /// Idle flags for slots `0..=slots`; slot 0 is idle with `initial_idle`.
    pub fn sample_path<R: Rng + ?Sized>(
        &self,
        slots: u64,
        initial_idle: f64,
        rng: &mut R,
    ) -> Vec<bool> {
        let mut idle = rng.random::<f64>() < initial_idle;
        let mut path = Vec::with_capacity(slots as usize + 1);
        path.push(idle);
        for _ in 0..slots {
            let p = if idle { self.p11 } else { self.p01 };
            idle = rng.random::<f64>() < p;
            path.push(idle);
        }
        path
    }
}

impl SlotTransitions for MarkovSlots {
    fn p11(&self, n: u64) -> f64 {
        let pi = self.stationary_idle();
        pi + (1.0 - pi) * self.correlation().powi(n as i32)
    }

    fn p01(&self, n: u64) -> f64 {
        let pi = self.stationary_idle();
        pi - pi * self.correlation().powi(n as i32)
    }
}

/// Result of one slot of either CSA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotStep {
    pub chosen: usize,
    pub result: SenseResult,
    pub belief_evaluations: u64,
}

/// Predictive beliefs at the start of slot `k` from the last sensing slot,
/// or from the prior for channels never sensed.
pub fn predictive_beliefs<S: SlotTransitions>(
    channels: &[S],
    state: &BeliefState,
    k: u64,
) -> Vec<f64> {
    channels
        .iter()
        .enumerate()
        .map(|(a, ch)| match state.last[a] {
            Some(obs) => {
                let n = k - obs.at;
                match obs.result {
                    SenseResult::Idle => ch.p11(n),
                    SenseResult::Busy => ch.p01(n),
                }
            }
            None => {
                let w = state.initial_omega[a];
                w * ch.p11(k) + (1.0 - w) * ch.p01(k)
            }
        })
        .collect()
}

/// Slot `k >= 1` of the predictive CSA: recompute beliefs, sense the argmax
/// and record the result.
pub fn predictive_slotted_step<S, F>(
    channels: &[S],
    state: &mut BeliefState,
    k: u64,
    mut sense: F,
) -> SlotStep
where
    S: SlotTransitions,
    F: FnMut(usize) -> SenseResult,
{
    state.omega = predictive_beliefs(channels, state, k);
    let chosen = select_channel(&state.omega);
    let result = sense(chosen);
    state.record(chosen, k, result);
    SlotStep {
        chosen,
        result,
        belief_evaluations: channels.len() as u64,
    }
}

/// One-slot greedy propagation `w p11 + (1 - w) p01` of every channel.
pub fn greedy_predict<S: SlotTransitions>(channels: &[S], omega: &[f64]) -> Vec<f64> {
    channels
        .iter()
        .zip(omega)
        .map(|(ch, &w)| w * ch.p11(1) + (1.0 - w) * ch.p01(1))
        .collect()
}

/// One slot of the greedy CSA. `omega` holds the post-update beliefs of the
/// previous slot on entry and of this slot on return.
pub fn greedy_slotted_step<S, F>(channels: &[S], omega: &mut Vec<f64>, mut sense: F) -> SlotStep
where
    S: SlotTransitions,
    F: FnMut(usize) -> SenseResult,
{
    let predicted = greedy_predict(channels, omega);
    let chosen = select_channel(&predicted);
    let result = sense(chosen);
    *omega = predicted;
    omega[chosen] = if result.is_idle() { 1.0 } else { 0.0 };
    SlotStep {
        chosen,
        result,
        belief_evaluations: channels.len() as u64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub slots: u64,
    /// Largest `|w_pr - w_gr|` over all slots and channels.
    pub max_belief_gap: f64,
    pub choices_match: bool,
    pub first_mismatch: Option<u64>,
}

/// Runs the predictive and greedy CSAs side by side for `horizon` slots on
/// the same occupancy realization and the same prior.
///
/// `occupancy(channel, slot)` is the true channel state at that slot.
pub fn equivalence_check<S, F>(
    channels: &[S],
    initial_omega: &[f64],
    horizon: u64,
    occupancy: F,
) -> EquivalenceReport
where
    S: SlotTransitions,
    F: Fn(usize, u64) -> SenseResult,
{
    let mut state = BeliefState::new(initial_omega.to_vec());
    let mut omega = initial_omega.to_vec();
    let mut report = EquivalenceReport {
        slots: horizon,
        max_belief_gap: 0.0,
        choices_match: true,
        first_mismatch: None,
    };
    for k in 1..=horizon {
        let pr = predictive_beliefs(channels, &state, k);
        let gr = greedy_predict(channels, &omega);
        for (a, b) in pr.iter().zip(&gr) {
            report.max_belief_gap = report.max_belief_gap.max((a - b).abs());
        }
        let p = predictive_slotted_step(channels, &mut state, k, |c| occupancy(c, k));
        let g = greedy_slotted_step(channels, &mut omega, |c| occupancy(c, k));
        if p.chosen != g.chosen && report.choices_match {
            report.choices_match = false;
            report.first_mismatch = Some(k);
        }
    }
    report
}

/// Channel sensed in each slot `1..=horizon` by the predictive CSA.
pub fn predictive_visits<S, F>(
    channels: &[S],
    initial_omega: &[f64],
    horizon: u64,
    occupancy: F,
) -> Vec<(usize, SenseResult)>
where
    S: SlotTransitions,
    F: Fn(usize, u64) -> SenseResult,
{
    let mut state = BeliefState::new(initial_omega.to_vec());
    (1..=horizon)
        .map(|k| {
            let s = predictive_slotted_step(channels, &mut state, k, |c| occupancy(c, k));
            (s.chosen, s.result)
        })
        .collect()
}

/// Round robin in descending prior order: stay while idle, advance on busy.
pub fn round_robin_visits<F>(
    initial_omega: &[f64],
    horizon: u64,
    occupancy: F,
) -> Vec<(usize, SenseResult)>
where
    F: Fn(usize, u64) -> SenseResult,
{
    let order = round_robin_order(initial_omega);
    let mut pos = 0;
    (1..=horizon)
        .map(|k| {
            let c = order[pos];
            let r = occupancy(c, k);
            if !r.is_idle() {
                pos = (pos + 1) % order.len();
            }
            (c, r)
        })
        .collect()
}

/// First slot where the predictive and round-robin sequences differ.
pub fn round_robin_mismatch<S, F>(
    channels: &[S],
    initial_omega: &[f64],
    horizon: u64,
    occupancy: F,
) -> Option<u64>
where
    S: SlotTransitions,
    F: Fn(usize, u64) -> SenseResult,
{
    let pr = predictive_visits(channels, initial_omega, horizon, &occupancy);
    let rr = round_robin_visits(initial_omega, horizon, &occupancy);
    pr.iter()
        .zip(&rr)
        .position(|(a, b)| a.0 != b.0)
        .map(|i| i as u64 + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchStructureReport {
    /// Slots in which the sensed channel differs from the previous slot's.
    pub switches: u64,
    /// Switches to a channel last visited an even number of slots earlier.
    pub even_gap_switches: u64,
    /// Slots whose choice breaks the expected structure, with a reason.
    pub violations: Vec<(u64, String)>,
}

/// Checks the myopic structure for identical, negatively correlated
/// channels (`p11 < p01`) started from a uniform prior: the policy stays on
/// a channel after a busy result, and after an idle result switches to the
/// channel visited most recently an even number of slots ago, or when no
/// such channel exists, to a never-visited channel (lowest index) or else
/// the one visited longest ago.
///
/// The prior is taken to be the stationary idle probability of `channel`.
/// A choice whose belief ties the expected one within `1e-12` is accepted,
/// since long gaps drive every belief to the same rounded value.
pub fn negative_correlation_structure(
    channel: &MarkovSlots,
    visits: &[(usize, SenseResult)],
) -> SwitchStructureReport {
    let pi = channel.stationary_idle();
    let n_channels = visits.iter().map(|v| v.0 + 1).max().unwrap_or(0);
    let mut last_visit: Vec<Option<u64>> = vec![None; n_channels];
    let mut report = SwitchStructureReport {
        switches: 0,
        even_gap_switches: 0,
        violations: Vec::new(),
    };
    for (i, &(c, _)) in visits.iter().enumerate() {
        let k = i as u64 + 1;
        if i > 0 {
            let (prev, prev_result) = visits[i - 1];
            if prev != c {
                report.switches += 1;
            }
            if !prev_result.is_idle() {
                if prev != c {
                    report
                        .violations
                        .push((k, format!("left channel {prev} after a busy result")));
                }
            } else {
                let candidates = (0..n_channels).filter(|&a| a != prev);
                let even = candidates
                    .clone()
                    .filter_map(|a| last_visit[a].map(|l| (a, k - l)))
                    .filter(|&(_, gap)| gap % 2 == 0)
                    .min_by_key(|&(_, gap)| gap);
                let expected = match even {
                    Some((a, _)) => a,
                    None => candidates
                        .clone()
                        .find(|&a| last_visit[a].is_none())
                        .or_else(|| candidates.min_by_key(|&a| last_visit[a]))
                        .unwrap_or(prev),
                };
                if let Some(l) = last_visit[c] {
                    if c != prev && (k - l).is_multiple_of(2) {
                        report.even_gap_switches += 1;
                    }
                }
                let belief = |a: usize| last_visit[a].map_or(pi, |l| channel.p11(k - l));
                if c != expected && (belief(c) - belief(expected)).abs() > 1e-12 {
                    report.violations.push((
                        k,
                        format!("switched to channel {c}, expected channel {expected}"),
                    ));
                }
            }
        }
        last_visit[c] = Some(k);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csa::CsaKind;
    use crate::dist::{Distribution, ExpDist, OnOffModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sense_from(paths: &[Vec<bool>]) -> impl Fn(usize, u64) -> SenseResult + '_ {
        move |c, k| {
            if paths[c][k as usize] {
                SenseResult::Idle
            } else {
                SenseResult::Busy
            }
        }
    }

    #[test]
    fn markov_n_step_matches_recursion() {
        let ch = MarkovSlots::new(0.8, 0.3).unwrap();
        let (mut a, mut b) = (1.0, 0.0);
        for n in 1..50 {
            a = a * ch.p11 + (1.0 - a) * ch.p01;
            b = b * ch.p11 + (1.0 - b) * ch.p01;
            assert!((ch.p11(n) - a).abs() < 1e-14);
            assert!((ch.p01(n) - b).abs() < 1e-14);
        }
        assert_eq!(ch.p11(0), 1.0);
        assert!(ch.p01(0).abs() < 1e-15);
    }

    #[test]
    fn single_channel_always_chosen() {
        let ch = [MarkovSlots::new(0.7, 0.2).unwrap()];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let paths = vec![ch[0].sample_path(100, 0.5, &mut rng)];
        let visits = predictive_visits(&ch, &[0.5], 100, sense_from(&paths));
        assert!(visits.iter().all(|v| v.0 == 0));
    }

    #[test]
    fn horizon_zero_is_trivially_equivalent() {
        let ch = [MarkovSlots::new(0.7, 0.2).unwrap(); 3];
        let r = equivalence_check(&ch, &[0.1, 0.5, 0.9], 0, |_, _| SenseResult::Idle);
        assert!(r.choices_match);
        assert_eq!(r.max_belief_gap, 0.0);
    }

    #[test]
    fn renewal_exponential_slots_are_markov() {
        let m = OnOffModel::new(ExpDist::new(3.0).unwrap(), Distribution::exp(1.5).unwrap());
        let p = CsaPolicy::new(CsaKind::GeneralizedPredictive, &[m], None)
            .unwrap()
            .with_slot_duration(100_000_000);
        let slots = p.renewal_slots();
        let markov = slots[0].markov_approximation();
        for n in 0..200 {
            assert!((slots[0].p11(n) - markov.p11(n)).abs() < 1e-12);
            assert!((slots[0].p01(n) - markov.p01(n)).abs() < 1e-12);
        }
    }

    #[test]
    fn renewal_hed_slots_are_not_markov() {
        let m = OnOffModel::new(
            ExpDist::new(2.0).unwrap(),
            "hed(0.5:1, 0.5:5)".parse().unwrap(),
        );
        let p = CsaPolicy::new(CsaKind::GeneralizedPredictive, &[m], None)
            .unwrap()
            .with_slot_duration(300_000_000);
        let slots = p.renewal_slots();
        let markov = slots[0].markov_approximation();
        assert!((slots[0].p11(2) - markov.p11(2)).abs() > 1e-3);
    }

    #[test]
    fn step_cost_is_linear_in_channels() {
        for n in [2usize, 4, 8, 16] {
            let ch = vec![MarkovSlots::new(0.8, 0.1).unwrap(); n];
            let mut state = BeliefState::new(vec![0.5; n]);
            let mut omega = vec![0.5; n];
            let p = predictive_slotted_step(&ch, &mut state, 1, |_| SenseResult::Busy);
            let g = greedy_slotted_step(&ch, &mut omega, |_| SenseResult::Busy);
            assert_eq!(p.belief_evaluations, n as u64);
            assert_eq!(g.belief_evaluations, n as u64);
        }
    }

    #[test]
    fn structure_bookkeeping() {
        use SenseResult::*;
        let visits = [(0, Idle), (1, Idle), (0, Busy), (0, Idle), (2, Busy)];
        let ch = MarkovSlots::new(0.2, 0.7).unwrap();
        let r = negative_correlation_structure(&ch, &visits);
        assert_eq!(r.switches, 3);
        assert_eq!(r.even_gap_switches, 1);
        assert!(r.violations.is_empty(), "{:?}", r.violations);
        let bad = [(0, Busy), (1, Idle)];
        assert_eq!(negative_correlation_structure(&ch, &bad).violations.len(), 1);
    }
}
