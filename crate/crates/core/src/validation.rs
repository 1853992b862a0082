//! Numerical self-checks: closed forms against a Monte Carlo renewal
//! oracle and hand formulas, and the structural properties of the slotted
//! channel-selection policies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::csa::slotted::{
    equivalence_check, negative_correlation_structure, predictive_visits, round_robin_mismatch, EquivalenceReport,
    MarkovSlots, RenewalSlots, SlotTransitions,
};
use crate::csa::{CsaKind, CsaPolicy, SenseResult};
use crate::dist::{Distribution, ExpDist, HedDist, OnOffModel};
use crate::idleprob::{oracle_p_off_off, oracle_p_on_on, IdleProbTable};
use crate::macsim::{MacParams, MS};
use crate::traffic::{generate, PuState, StartState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    /// Reported but not counted towards the overall result.
    pub informational: bool,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
            informational: false,
        }
    }

    fn informational(mut self) -> Self {
        self.informational = true;
        self
    }

    pub fn line(&self) -> String {
        let tag = match (self.passed, self.informational) {
            (true, false) => "PASS",
            (false, false) => "FAIL",
            (true, true) => "info PASS",
            (false, true) => "info FAIL",
        };
        format!("[{tag}] {}: {}", self.name, self.detail)
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed || c.informational)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationOptions {
    pub oracle_trials: u64,
    pub oracle_points: usize,
    /// Allowed |z| between closed form and oracle.
    pub z_limit: f64,
    pub equivalence_scenarios: usize,
    pub equivalence_slots: u64,
    pub structure_slots: u64,
    /// Corrupt one root of one oracle model's table.
    pub inject_fault: bool,
    pub seed: u64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            oracle_trials: 1_000_000,
            oracle_points: 10,
            z_limit: 4.0,
            equivalence_scenarios: 30,
            equivalence_slots: 10_000,
            structure_slots: 1_000,
            inject_fault: false,
            seed: 2024,
        }
    }
}

impl ValidationOptions {
    pub fn quick() -> Self {
        Self {
            oracle_trials: 100_000,
            ..Self::default()
        }
    }
}

/// Exponential model and 1- to 4-phase hyper-exponential OFF models.
pub const ORACLE_MODELS: [&str; 5] = [
    "exp(2) / exp(1)",
    "exp(1) / hed(1:0.5)",
    "exp(2) / hed(0.7:5, 0.3:0.2)",
    "exp(1) / hed(0.5:10, 0.3:1, 0.2:0.1)",
    "exp(3) / hed(0.4:20, 0.3:2, 0.2:0.5, 0.1:0.05)",
];

pub fn oracle_models() -> Vec<OnOffModel> {
    ORACLE_MODELS
        .iter()
    .map(|s| s.parse().expect("valid literal"))
    .collect()
}

/// `points` log-spaced values over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    (0..points)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub model_id: usize,
    /// `p_off_off` or `p_on_on`.
    pub quantity: &'static str,
    pub dt: f64,
    pub closed_form: f64,
    pub oracle: f64,
    pub stderr: f64,
    pub z_score: f64,
}

pub const ORACLE_CSV_HEADER: &str = "model_id,quantity,dt,closed_form,oracle,stderr,z_score";

impl OracleRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{:.6e},{:.12},{:.12},{:.6e},{:.4}",
            self.model_id, self.quantity, self.dt, self.closed_form, self.oracle, self.stderr, self.z_score
        )
    }
}

/// Closed forms against the renewal oracle over a log grid spanning 0.01
/// to 100 mean cycles.
pub fn oracle_table(opts: &ValidationOptions) -> Vec<OracleRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rows = Vec::new();
    for (i, model) in oracle_models().iter().enumerate() {
        let mut table = IdleProbTable::build(model).expect("oracle models are valid");
        if opts.inject_fault && i == 2 {
            table = table.with_corrupted_root(0, 1.5);
        }
        let cycle = model.mean_cycle();
        for dt in log_grid(0.01 * cycle, 100.0 * cycle, opts.oracle_points) {
            let off = oracle_p_off_off(model, dt, opts.oracle_trials, &mut rng);
            let on = oracle_p_on_on(model, dt, opts.oracle_trials, &mut rng);
            for (quantity, est, closed_form) in [("p_off_off", off, table.p_off_off(dt)), ("p_on_on", on, table.p_on_on(dt))] {
                rows.push(OracleRow {
                    model_id: i,
                    quantity,
                    dt,
                    closed_form,
                    oracle: est.probability,
                    stderr: est.standard_error,
                    z_score: est.z_score(closed_form),
                });
            }
        }
    }
    rows
}

/// One check per model from an oracle table.
pub fn oracle_summary(rows: &[OracleRow], opts: &ValidationOptions) -> Vec<Check> {
    ORACLE_MODELS
        .iter()
        .enumerate()
        .map(|(i, model)| {
            let worst = rows
                .iter()
                .filter(|r| r.model_id == i)
                .max_by(|a, b| a.z_score.abs().total_cmp(&b.z_score.abs()))
                .expect("rows for every model");
            Check::new(
                format!("oracle m{i} {model}"),
                worst.z_score.abs() <= opts.z_limit,
                format!(
                    "max |z| = {:.2} ({} at dt = {:.4} s), {} trials x {} points",
                    worst.z_score.abs(),
                    worst.quantity,
                    worst.dt,
                    opts.oracle_trials,
                    opts.oracle_points
                ),
            )
        })
        .collect()
}

pub fn oracle_checks(opts: &ValidationOptions) -> Vec<Check> {
    oracle_summary(&oracle_table(opts), opts)
}

/// Largest deviation of the general path from the two-state exponential
/// formulas over `points` values of `dt`, for a few rate pairs.
pub fn exponential_deviation(points: usize) -> f64 {
    let mut worst = 0.0f64;
    for (l_on, l_off) in [(1.0, 1.0), (2.0, 0.5), (0.3, 7.0), (10.0, 10.0)] {
        let model = OnOffModel::new(
            ExpDist::new(l_on).unwrap(),
            Distribution::Hed(HedDist::from_pairs(&[(1.0, l_off)]).unwrap()),
        );
        let table = IdleProbTable::build(&model).unwrap();
        let lam = l_off / (l_on + l_off);
        let cycle = model.mean_cycle();
        for dt in log_grid(1e-3 * cycle, 30.0 * cycle, points) {
            let decay = (-(l_on + l_off) * dt).exp();
            let off_off = (1.0 - lam) + lam * decay;
            let on_on = lam + (1.0 - lam) * decay;
            for (got, want) in [
                (table.p_off_off_unclamped(dt), off_off),
                (table.p_on_on_unclamped(dt), on_on),
                (table.p_on_off(dt), 1.0 - on_on),
            ] {
                worst = worst.max((got - want).abs());
            }
        }
    }
    worst
}

pub fn exponential_check() -> Check {
    let dev = exponential_deviation(50);
    Check::new(
        "single-phase closed form",
        dev <= 1e-12,
        format!("max deviation {dev:.3e} over 50 points x 4 rate pairs (limit 1e-12)"),
    )
}

fn denominator(model: &OnOffModel, s: f64) -> f64 {
    let phases = model.off.phases();
    let prod: f64 = phases.iter().map(|p| s + p.rate).product();
    let num: f64 = phases
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.weight
                * phases
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, q)| s + q.rate)
                    .product::<f64>()
        })
        .sum();
    prod + model.on.rate() * num
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let fm = f(mid);
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Roots of the transform denominator by bisection: one between each pair
/// of consecutive poles `-lambda_i` and one below the fastest pole.
pub fn bracketed_roots(model: &OnOffModel) -> Vec<f64> {
    let mut rates: Vec<f64> = model.off.phases().iter().map(|p| p.rate).collect();
    rates.sort_by(f64::total_cmp);
    let f = |s: f64| denominator(model, s);
    let mut roots: Vec<f64> = rates.windows(2).map(|w| bisect(f, -w[1], -w[0])).collect();
    let top = -rates[rates.len() - 1];
    let mut lo = top - 1.0;
    while (f(lo) < 0.0) == (f(top) < 0.0) {
        lo = top - 2.0 * (top - lo);
    }
    roots.push(bisect(f, lo, top));
    roots
}

/// Explicit three-root expansion of the residue sum for a three-phase OFF
/// law. Returns `(P_OFF,OFF, P_ON,ON)`.
pub fn three_phase_explicit(model: &OnOffModel, r: [f64; 3], dt: f64) -> (f64, f64) {
    let ph = model.off.phases();
    assert_eq!(ph.len(), 3, "three phases required");
    let (p1, p2, p3) = (ph[0].weight, ph[1].weight, ph[2].weight);
    let (l1, l2, l3) = (ph[0].rate, ph[1].rate, ph[2].rate);
    let constant = (p1 * l2 * l3 + p2 * l1 * l3 + p3 * l1 * l2) / (-r[0] * r[1] * r[2]);
    let term = |a: f64, b: f64, c: f64| {
        (p1 * (a + l2) * (a + l3) + p2 * (a + l1) * (a + l3) + p3 * (a + l1) * (a + l2)) / (a * (a - b) * (a - c))
            * (a * dt).exp()
    };
    let sum = constant + term(r[0], r[1], r[2]) + term(r[1], r[0], r[2]) + term(r[2], r[0], r[1]);
    (1.0 - sum / model.mean_off(), 1.0 - sum / model.mean_on())
}

/// Random three-phase models with distinct rates spread over decades.
pub fn random_three_phase_models(n: usize, seed: u64) -> Vec<OnOffModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let w: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = w.iter().sum();
            let mut rates: Vec<f64> = Vec::new();
            while rates.len() < 3 {
                let r = (rng.random_range(-3.0f64..3.0)).exp();
                if rates.iter().all(|&q: &f64| (q / r).ln().abs() > 0.2) {
                    rates.push(r);
                }
            }
            let pairs: Vec<(f64, f64)> = w.iter().zip(&rates).map(|(&p, &l)| (p / total, l)).collect();
            let on = ExpDist::new(rng.random_range(-2.0f64..2.0).exp()).unwrap();
            OnOffModel::new(on, Distribution::hed(&pairs).unwrap())
        })
        .collect()
}

pub fn three_phase_deviation(n_models: usize, points: usize, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    for model in random_three_phase_models(n_models, seed) {
        let table = IdleProbTable::build(&model).unwrap();
        let r = bracketed_roots(&model);
        let roots = [r[0], r[1], r[2]];
        let cycle = model.mean_cycle();
        for dt in log_grid(1e-3 * cycle, 30.0 * cycle, points) {
            let (off, on) = three_phase_explicit(&model, roots, dt);
            worst = worst
                .max((table.p_off_off_unclamped(dt) - off).abs())
                .max((table.p_on_on_unclamped(dt) - on).abs());
        }
    }
    worst
}

pub fn three_phase_check(seed: u64) -> Check {
    let dev = three_phase_deviation(10, 40, seed);
    Check::new(
        "three-phase expansion",
        dev <= 1e-10,
        format!("max deviation {dev:.3e} over 10 random models x 40 points (limit 1e-10)"),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelMix {
    /// Exponential and hyper-exponential OFF laws mixed.
    Mixed,
    ExponentialOnly,
}

/// Random channel models for equivalence scenarios: mean OFF time near one
/// second, duty cycles in `[0.2, 0.8]`.
pub fn random_channels(rng: &mut ChaCha8Rng, n: usize, mix: ChannelMix) -> Vec<OnOffModel> {
    (0..n)
        .map(|_| {
            let duty = rng.random_range(0.2..0.8);
            let hed = mix == ChannelMix::Mixed && rng.random::<bool>();
            let off = if hed {
                let phases = rng.random_range(2..=3);
                let w: Vec<f64> = (0..phases).map(|_| rng.random_range(0.1..1.0)).collect();
                let total: f64 = w.iter().sum();
                let pairs: Vec<(f64, f64)> = w
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| (p / total, 10f64.powf(i as f64 - 0.5 + rng.random_range(-0.3..0.3))))
                    .collect();
                let d = Distribution::hed(&pairs).unwrap();
                let m = d.mean();
                d.scaled(1.0 / m).unwrap()
            } else {
                Distribution::exp(rng.random_range(0.5..2.0)).unwrap()
            };
            OnOffModel::with_duty_cycle(off, duty).unwrap()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceSummary {
    pub scenarios: usize,
    pub failures: usize,
    pub max_belief_gap: f64,
    pub first_failure: Option<(usize, Option<u64>)>,
}

impl EquivalenceSummary {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Which slot transition law both policies use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotLaw {
    /// Idle probabilities evaluated at `n` slot durations.
    Renewal,
    /// One-slot Markov chain with the same one-slot probabilities.
    MarkovApproximation,
}

pub const EQUIVALENCE_SLOT_NS: u64 = 250 * MS;

/// Greedy and predictive CSAs on random scenarios of 4 to 8 channels,
/// observing the same generated PU traces.
pub fn equivalence_summary(opts: &ValidationOptions, mix: ChannelMix, law: SlotLaw) -> EquivalenceSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7e0);
    let mut summary = EquivalenceSummary {
        scenarios: opts.equivalence_scenarios,
        failures: 0,
        max_belief_gap: 0.0,
        first_failure: None,
    };
    let slot = EQUIVALENCE_SLOT_NS;
    for s in 0..opts.equivalence_scenarios {
        let n = rng.random_range(4..=8);
        let models = random_channels(&mut rng, n, mix);
        let trace_seed: u64 = rng.random();
        let policy = CsaPolicy::new(CsaKind::GeneralizedPredictive, &models, None)
            .unwrap()
            .with_slot_duration(slot);
        let horizon = slot * (opts.equivalence_slots + 1);
        let traces: Vec<_> = models
            .iter()
            .enumerate()
            .map(|(c, m)| generate(m, horizon, trace_seed, c, StartState::StationaryMix).unwrap())
            .collect();
        let occupancy = |c: usize, k: u64| match traces[c].state_at(k * slot).unwrap() {
            PuState::On => SenseResult::Busy,
            PuState::Off => SenseResult::Idle,
        };
        let renewal = policy.renewal_slots();
        let report: EquivalenceReport = match law {
            SlotLaw::Renewal => equivalence_check(&renewal, policy.initial_omega(), opts.equivalence_slots, occupancy),
            SlotLaw::MarkovApproximation => {
                let markov: Vec<MarkovSlots> = renewal.iter().map(RenewalSlots::markov_approximation).collect();
                equivalence_check(&markov, policy.initial_omega(), opts.equivalence_slots, occupancy)
            }
        };
        summary.max_belief_gap = summary.max_belief_gap.max(report.max_belief_gap);
        if !report.choices_match || report.max_belief_gap > 1e-12 {
            summary.failures += 1;
            summary.first_failure.get_or_insert((s, report.first_mismatch));
        }
    }
    summary
}

fn equivalence_detail(s: &EquivalenceSummary, slots: u64) -> String {
    let mut d = format!(
        "{}/{} scenarios x {} slots identical, max belief gap {:.3e}",
        s.scenarios - s.failures,
        s.scenarios,
        slots,
        s.max_belief_gap
    );
    if let Some((sc, slot)) = s.first_failure {
        match slot {
            Some(k) => d += &format!("; first choice mismatch in scenario {sc} at slot {k}"),
            None => d += &format!("; scenario {sc} exceeds the gap limit"),
        }
    }
    d
}

/// Equivalence on mixed renewal channels, which is the stated claim, plus
/// the two premises under which it provably holds.
pub fn equivalence_checks(opts: &ValidationOptions) -> Vec<Check> {
    let runs = [
        ("greedy == predictive, mixed renewal channels", ChannelMix::Mixed, SlotLaw::Renewal),
        ("greedy == predictive, exponential renewal channels", ChannelMix::ExponentialOnly, SlotLaw::Renewal),
        ("greedy == predictive, one-slot Markov channels", ChannelMix::Mixed, SlotLaw::MarkovApproximation),
    ];
    runs.iter()
        .map(|&(name, mix, law)| {
            let s = equivalence_summary(opts, mix, law);
            Check::new(name, s.passed(), equivalence_detail(&s, opts.equivalence_slots))
        })
        .collect()
}

/// Identical channels with positive correlation: the predictive visits
/// follow round robin in descending prior order.
pub fn round_robin_check(slots: u64, seed: u64) -> Check {
    let priors = [0.9, 0.5, 0.7, 0.3, 0.6];
    let models: [&str; 3] = [
        "exp(1) / exp(0.5)",
        "exp(2) / hed(0.7:5, 0.3:0.2)",
        "exp(1) / hed(0.5:10, 0.3:1, 0.2:0.1)",
    ];
    let mut runs = 0;
    let mut failures = Vec::new();
    for lit in models {
        let model: OnOffModel = lit.parse().unwrap();
        let table = IdleProbTable::build(&model).unwrap();
        for slot_ns in [50 * MS, 200 * MS, 500 * MS] {
            let slot_s = slot_ns as f64 * 1e-9;
            let ch = vec![RenewalSlots::new(table.clone(), slot_s); priors.len()];
            assert!(ch[0].p11(1) >= ch[0].p01(1));
            let horizon = slot_ns * (slots + 1);
            let traces: Vec<_> = (0..priors.len())
                .map(|c| generate(&model, horizon, seed, c, StartState::StationaryMix).unwrap())
                .collect();
            let occ = |c: usize, k: u64| match traces[c].state_at(k * slot_ns).unwrap() {
                PuState::On => SenseResult::Busy,
                PuState::Off => SenseResult::Idle,
            };
            runs += 1;
            if let Some(k) = round_robin_mismatch(&ch, &priors, slots, occ) {
                failures.push(format!("{lit} slot {slot_s} s: first mismatch at slot {k}"));
            }
        }
    }
    Check::new(
        "positive correlation: round robin by descending prior",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{runs}/{runs} runs x {slots} slots match")
        } else {
            failures.join("; ")
        },
    )
}

/// Identical negatively correlated Markov channels: stay after busy, and
/// after idle move to the most recent even-gap channel when one exists.
pub fn even_gap_check(slots: u64, seed: u64) -> Check {
    let mut failures = Vec::new();
    let mut switches = 0;
    let mut even = 0;
    for (p11, p01) in [(0.2, 0.7), (0.4, 0.6), (0.1, 0.9)] {
        let chan = MarkovSlots::new(p11, p01).unwrap();
        let n = 6;
        let ch = vec![chan; n];
        let pi = chan.stationary_idle();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let paths: Vec<Vec<bool>> = (0..n).map(|_| chan.sample_path(slots, pi, &mut rng)).collect();
        let occ = |c: usize, k: u64| {
            if paths[c][k as usize] {
                SenseResult::Idle
            } else {
                SenseResult::Busy
            }
        };
        let visits = predictive_visits(&ch, &vec![pi; n], slots, occ);
        let r = negative_correlation_structure(&chan, &visits);
        switches += r.switches;
        even += r.even_gap_switches;
        if let Some((k, why)) = r.violations.first() {
            failures.push(format!("p11 {p11} p01 {p01}: slot {k}: {why}"));
        }
    }
    Check::new(
        "negative correlation: even-gap switching structure",
        failures.is_empty() && switches > 0,
        if failures.is_empty() {
            format!("3 chains x {slots} slots, {switches} switches ({even} to even-gap channels), no violations")
        } else {
            failures.join("; ")
        },
    )
}

pub fn mac_checks() -> Vec<Check> {
    let mut p = MacParams::testbed(4);
    let rep = p.min_repeat_time();
    let n1 = p.n_frames();
    p.t_pu_allow = 3000 * MS;
    let n3 = p.n_frames();
    vec![
        Check::new(
            "initial-frame repetition",
            rep.duration_ns == 235 * MS && rep.repetitions == 2,
            format!("{} ms, {} repetitions", rep.duration_ns as f64 / MS as f64, rep.repetitions),
        ),
        Check::new(
            "frames per interval",
            n1 == 4 && n3 == 14,
            format!("{n1} frames at 1000 ms, {n3} at 3000 ms"),
        ),
    ]
}

/// The oracle table and every check. The mixed renewal equivalence is
/// informational here since it does not hold for hyper-exponential channels.
pub fn run_all(opts: &ValidationOptions) -> (Vec<OracleRow>, Vec<Check>) {
    let rows = oracle_table(opts);
    let mut checks = oracle_summary(&rows, opts);
    checks.push(exponential_check());
    checks.push(three_phase_check(opts.seed));
    let mut equivalence = equivalence_checks(opts);
    equivalence[0] = equivalence[0].clone().informational();
    checks.extend(equivalence);
    checks.push(round_robin_check(opts.structure_slots, opts.seed));
    checks.push(even_gap_check(opts.structure_slots, opts.seed));
    checks.extend(mac_checks());
    (rows, checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bracketed_roots_match_table() {
        for m in random_three_phase_models(5, 1) {
            let mut a = bracketed_roots(&m);
            a.sort_by(|x, y| y.total_cmp(x));
            let b = IdleProbTable::build(&m).unwrap();
            for (x, y) in a.iter().zip(b.roots()) {
                assert!((x - y).abs() <= 1e-9 * y.abs(), "{x} {y}");
            }
        }
    }

    #[test]
    fn small_checks_pass() {
        assert!(exponential_check().passed);
        assert!(three_phase_check(3).passed);
        assert!(mac_checks().iter().all(|c| c.passed));
        assert!(even_gap_check(300, 1).passed);
    }

    #[test]
    fn fault_is_named() {
        let opts = ValidationOptions {
            oracle_trials: 20_000,
            oracle_points: 3,
            inject_fault: true,
            ..ValidationOptions::default()
        };
        let checks = oracle_checks(&opts);
        assert!(!checks[2].passed);
        assert!(checks[2].name.contains("hed(0.7:5, 0.3:0.2)"));
        assert!(checks[0].passed);
    }
}
