//! Primary-user occupancy traces.
//!
//! Each channel's primary user alternates between ON and OFF periods drawn
//! independently from its [`OnOffModel`]. Traces are materialized as a tiling
//! of integer-nanosecond intervals so the simulator has a total order of
//! events, and can be exported to CSV (`channel,state,start_ns,end_ns`) and
//! replayed across policies.

use std::fmt;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dist::{DistError, Distribution, OnOffModel};

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("time {t} ns is outside the trace horizon [0, {end})")]
    OutOfHorizon { t: u64, end: u64 },
    #[error("horizon must be positive")]
    EmptyHorizon,
    #[error("trace CSV line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PuState {
    On,
    Off,
}

impl PuState {
    pub fn toggled(self) -> Self {
        match self {
            PuState::On => PuState::Off,
            PuState::Off => PuState::On,
        }
    }
}

impl fmt::Display for PuState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PuState::On => "ON",
            PuState::Off => "OFF",
        })
    }
}

/// Half-open interval `[start, end)` in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub state: PuState,
    pub start: u64,
    pub end: u64,
}

/// How the first interval of a trace is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartState {
    /// Start inside an OFF period at a stationary residual.
    StationaryOff,
    /// Start inside an ON period at a stationary residual.
    StationaryOn,
    /// ON with probability equal to the duty cycle, then a stationary residual.
    StationaryMix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuTrace {
    pub channel: usize,
    pub intervals: Vec<Interval>,
    /// Generating model and stream seed; absent for imported traces.
    pub model: Option<OnOffModel>,
    pub seed: Option<u64>,
}

/// Random stream for one channel: a ChaCha stream keyed by the global seed,
/// selected by the channel index.
pub fn channel_rng(seed: u64, channel: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(channel as u64);
    rng
}

/// Seconds to nanoseconds, rounding half up.
pub fn seconds_to_ns(seconds: f64) -> u64 {
    (seconds * 1e9 + 0.5).floor() as u64
}

fn draw_ns<R: Rng + ?Sized>(d: &Distribution, rng: &mut R) -> u64 {
    loop {
        let ns = seconds_to_ns(d.sample(rng));
        if ns > 0 {
            return ns;
        }
    }
}

/// Generates a trace covering at least `[0, horizon_ns)`.
pub fn generate(
    model: &OnOffModel,
    horizon_ns: u64,
    seed: u64,
    channel: usize,
    start: StartState,
) -> Result<PuTrace, TrafficError> {
    if horizon_ns == 0 {
        return Err(TrafficError::EmptyHorizon);
    }
    let mut rng = channel_rng(seed, channel);
    let on = Distribution::Exp(model.on);
    let mut state = match start {
        StartState::StationaryOff => PuState::Off,
        StartState::StationaryOn => PuState::On,
        StartState::StationaryMix => {
            if rng.random::<f64>() < model.duty_cycle() {
                PuState::On
            } else {
                PuState::Off
            }
        }
    };
    let first = match state {
        PuState::On => on.equilibrium(),
        PuState::Off => model.off.equilibrium(),
    };
    let mut intervals = Vec::new();
    let mut t = 0u64;
    let mut len = draw_ns(&first, &mut rng);
    loop {
        intervals.push(Interval {
            state,
            start: t,
            end: t + len,
        });
        t += len;
        if t >= horizon_ns {
            break;
        }
        state = state.toggled();
        len = match state {
            PuState::On => draw_ns(&on, &mut rng),
            PuState::Off => draw_ns(&model.off, &mut rng),
        };
    }
    Ok(PuTrace {
        channel,
        intervals,
        model: Some(model.clone()),
        seed: Some(seed),
    })
}

/// Multiplies all mean holding times by `factor`, keeping the duty cycle.
pub fn scale_duty_cycle_length(model: &OnOffModel, factor: f64) -> Result<OnOffModel, DistError> {
    model.scaled(factor)
}

impl PuTrace {
    /// A channel that stays in one state over `[0, horizon_ns)`.
    pub fn constant(channel: usize, state: PuState, horizon_ns: u64) -> Self {
        Self {
            channel,
            intervals: vec![Interval {
                state,
                start: 0,
                end: horizon_ns,
            }],
            model: None,
            seed: None,
        }
    }

    /// End of the last interval.
    pub fn end(&self) -> u64 {
        self.intervals.last().map_or(0, |iv| iv.end)
    }

    fn index_at(&self, t: u64) -> usize {
        self.intervals.partition_point(|iv| iv.end <= t)
    }

    /// State at `t`; a boundary belongs to the interval starting there.
    pub fn state_at(&self, t: u64) -> Result<PuState, TrafficError> {
        self.intervals
            .get(self.index_at(t))
            .map(|iv| iv.state)
            .ok_or(TrafficError::OutOfHorizon { t, end: self.end() })
    }

    /// Whether the primary user is ON at any instant of `[start, end)`.
    /// An empty window asks about the instant `start`. Times past the end of
    /// the trace are treated as continuing the last interval.
    pub fn busy_during(&self, start: u64, end: u64) -> bool {
        let last = self.intervals.len() - 1;
        let mut i = self.index_at(start).min(last);
        if end <= start {
            return self.intervals[i].state == PuState::On;
        }
        loop {
            let iv = &self.intervals[i];
            if iv.state == PuState::On {
                return true;
            }
            if iv.end >= end || i == last {
                return false;
            }
            i += 1;
        }
    }

    /// Fraction of `[0, horizon)` spent ON.
    pub fn on_fraction(&self, horizon: u64) -> f64 {
        let on: u64 = self
            .intervals
            .iter()
            .filter(|iv| iv.state == PuState::On && iv.start < horizon)
            .map(|iv| iv.end.min(horizon) - iv.start)
            .sum();
        on as f64 / horizon as f64
    }

    /// State changes at times in `(start, end)`.
    pub fn transitions_in(&self, start: u64, end: u64) -> impl Iterator<Item = (u64, PuState)> + '_ {
        let first = self.index_at(start);
        self.intervals[first.min(self.intervals.len())..]
            .iter()
            .take_while(move |iv| iv.start < end)
            .filter(move |iv| iv.start > start)
            .map(|iv| (iv.start, iv.state))
    }

    /// Checks the tiling invariants.
    pub fn is_well_formed(&self) -> bool {
        let Some(first) = self.intervals.first() else {
            return false;
        };
        first.start == 0
            && self.intervals.iter().all(|iv| iv.end > iv.start)
            && self
                .intervals
                .windows(2)
                .all(|w| w[0].end == w[1].start && w[0].state != w[1].state)
    }
}

pub fn write_traces_csv<W: Write>(traces: &[PuTrace], mut out: W) -> std::io::Result<()> {
    writeln!(out, "channel,state,start_ns,end_ns")?;
    for tr in traces {
        for iv in &tr.intervals {
            writeln!(out, "{},{},{},{}", tr.channel, iv.state, iv.start, iv.end)?;
        }
    }
    Ok(())
}

/// Reads traces written by [`write_traces_csv`], one per channel, ordered by
/// channel index.
pub fn read_traces_csv<R: BufRead>(input: R) -> Result<Vec<PuTrace>, TrafficError> {
    let mut traces: Vec<PuTrace> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let text = line.trim();
        if text.is_empty() || (i == 0 && text.starts_with("channel")) {
            continue;
        }
        let err = |reason: &str| TrafficError::Csv {
            line: line_no,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = text.split(',').map(str::trim).collect();
        let [channel, state, start, end] = fields[..] else {
            return Err(err("expected 4 fields"));
        };
        let channel: usize = channel.parse().map_err(|_| err("bad channel"))?;
        let state = match state {
            "ON" | "on" => PuState::On,
            "OFF" | "off" => PuState::Off,
            _ => return Err(err("state must be ON or OFF")),
        };
        let start: u64 = start.parse().map_err(|_| err("bad start_ns"))?;
        let end: u64 = end.parse().map_err(|_| err("bad end_ns"))?;
        if channel >= traces.len() {
            traces.extend((traces.len()..=channel).map(|c| PuTrace {
                channel: c,
                intervals: Vec::new(),
                model: None,
                seed: None,
            }));
        }
        traces[channel].intervals.push(Interval { state, start, end });
    }
    if let Some(bad) = traces.iter().find(|t| !t.is_well_formed()) {
        return Err(TrafficError::Csv {
            line: 0,
            reason: format!("channel {} does not tile time from 0", bad.channel),
        });
    }
    Ok(traces)
}

/// SHA-256 of the CSV export, as lowercase hex.
pub fn trace_hash(traces: &[PuTrace]) -> String {
    let mut buf = Vec::new();
    write_traces_csv(traces, &mut buf).expect("writing to memory");
    Sha256::digest(&buf)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::ExpDist;

    fn model(on: f64, off: &str) -> OnOffModel {
        OnOffModel::new(ExpDist::new(on).unwrap(), off.parse().unwrap())
    }

    #[test]
    fn deterministic_and_well_formed() {
        let m = model(2.0, "hed(0.9:10, 0.1:0.1)");
        let a = generate(&m, 1_000_000_000_000, 7, 3, StartState::StationaryMix).unwrap();
        let b = generate(&m, 1_000_000_000_000, 7, 3, StartState::StationaryMix).unwrap();
        assert_eq!(a, b);
        assert!(a.is_well_formed());
        assert!(a.end() >= 1_000_000_000_000);
        let c = generate(&m, 1_000_000_000_000, 7, 4, StartState::StationaryMix).unwrap();
        assert_ne!(a.intervals, c.intervals);
    }

    #[test]
    fn duty_cycle_converges() {
        let m = model(1.0 / 0.3, "hed(0.9:10, 0.1:0.1)");
        let horizon = seconds_to_ns(1e5 * m.mean_cycle());
        let tr = generate(&m, horizon, 1, 0, StartState::StationaryMix).unwrap();
        let frac = tr.on_fraction(horizon);
        assert!(
            (frac - m.duty_cycle()).abs() <= 0.01 * m.duty_cycle(),
            "{frac} vs {}",
            m.duty_cycle()
        );
    }

    #[test]
    fn exponential_interval_means() {
        let m = model(1.0, "exp(1)");
        let tr = generate(&m, seconds_to_ns(1e5), 2, 0, StartState::StationaryOff).unwrap();
        for state in [PuState::On, PuState::Off] {
            let lens: Vec<f64> = tr.intervals[1..tr.intervals.len() - 1]
                .iter()
                .filter(|iv| iv.state == state)
                .map(|iv| (iv.end - iv.start) as f64 * 1e-9)
                .collect();
            let n = lens.len() as f64;
            let mean = lens.iter().sum::<f64>() / n;
            // Exponential(1): standard deviation 1.
            assert!((mean - 1.0).abs() <= 3.0 / n.sqrt(), "{state}: {mean}");
        }
    }

    #[test]
    fn state_queries() {
        let tr = PuTrace {
            channel: 0,
            intervals: vec![
                Interval { state: PuState::Off, start: 0, end: 10 },
                Interval { state: PuState::On, start: 10, end: 25 },
                Interval { state: PuState::Off, start: 25, end: 40 },
            ],
            model: None,
            seed: None,
        };
        assert_eq!(tr.state_at(5).unwrap(), PuState::Off);
        assert_eq!(tr.state_at(10).unwrap(), PuState::On);
        assert_eq!(tr.state_at(25).unwrap(), PuState::Off);
        assert!(matches!(tr.state_at(40), Err(TrafficError::OutOfHorizon { .. })));
        assert!(!tr.busy_during(0, 10));
        assert!(tr.busy_during(0, 11));
        assert!(tr.busy_during(24, 30));
        assert!(!tr.busy_during(25, 60));
        assert!(tr.busy_during(10, 10));
        let ts: Vec<_> = tr.transitions_in(0, 40).collect();
        assert_eq!(ts, vec![(10, PuState::On), (25, PuState::Off)]);
    }

    #[test]
    fn random_instants_match_duty_cycle() {
        let m = model(1.0 / 0.4, "hed(0.5:1, 0.5:5)");
        let horizon = seconds_to_ns(1e4);
        let tr = generate(&m, horizon, 5, 0, StartState::StationaryMix).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 10_000;
        let on = (0..n)
            .filter(|_| tr.state_at(rng.random_range(0..horizon)).unwrap() == PuState::On)
            .count() as f64
            / n as f64;
        let d = m.duty_cycle();
        assert!((on - d).abs() <= 3.0 * (d * (1.0 - d) / n as f64).sqrt(), "{on} vs {d}");
    }

    #[test]
    fn scaling_preserves_duty_cycle() {
        let m = model(4.0, "hed(0.9:10, 0.1:0.1)");
        let same = scale_duty_cycle_length(&m, 1.0).unwrap();
        assert_eq!(same, m);
        let s = scale_duty_cycle_length(&m, 2.0).unwrap();
        assert_eq!(s.on.rate(), 2.0);
        assert!((s.duty_cycle() - m.duty_cycle()).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_and_hash() {
        let m = model(2.0, "exp(1)");
        let traces: Vec<_> = (0..3)
            .map(|c| generate(&m, 50_000_000_000, 9, c, StartState::StationaryMix).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_traces_csv(&traces, &mut buf).unwrap();
        let back = read_traces_csv(buf.as_slice()).unwrap();
        for (a, b) in traces.iter().zip(&back) {
            assert_eq!(a.intervals, b.intervals);
        }
        assert_eq!(trace_hash(&traces), trace_hash(&back));
        assert_eq!(trace_hash(&traces).len(), 64);
        assert!(read_traces_csv("channel,state,start_ns,end_ns\n0,ON,5,10\n".as_bytes()).is_err());
    }
}
