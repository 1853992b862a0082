//! Evaluation metrics computed from an [`EventLog`]: throughput, channel
//! switch rate, search delays and transmitter energy.
//!
//! Everything in a [`SimReport`] is a function of the log alone, so a
//! report can be recomputed from an exported CSV log.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::macsim::{Actor, EventKind, EventLog, StateClass, US};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("elapsed time must be positive")]
    ZeroElapsed,
    #[error("invalid energy model: {0}")]
    InvalidEnergyModel(String),
}

fn seconds(ns: u64) -> f64 {
    ns as f64 * 1e-9
}

/// Γ = frames · bits / elapsed.
pub fn throughput(frames_delivered: u64, frame_size_bits: u64, elapsed_ns: u64) -> Result<f64, MetricsError> {
    if elapsed_ns == 0 {
        return Err(MetricsError::ZeroElapsed);
    }
    Ok(frames_delivered as f64 * frame_size_bits as f64 / seconds(elapsed_ns))
}

pub fn switch_rate(switches: u64, elapsed_ns: u64) -> Result<f64, MetricsError> {
    if elapsed_ns == 0 {
        return Err(MetricsError::ZeroElapsed);
    }
    Ok(switches as f64 / seconds(elapsed_ns))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VacancyDelay {
    pub delay_ns: u64,
    /// False when no idle channel was found before the horizon.
    pub found: bool,
}

/// Time from the start of the run to the end of the first idle sensing.
pub fn first_vacancy_delay(log: &EventLog) -> VacancyDelay {
    log.events
        .iter()
        .find(|e| e.actor == Actor::Tx && e.kind == EventKind::Idle)
        .map(|e| VacancyDelay {
            delay_ns: e.time_ns,
            found: true,
        })
        .unwrap_or(VacancyDelay {
            delay_ns: log.horizon_ns,
            found: false,
        })
}

/// Mean time from the start of each channel search to the idle result that
/// ends it. A search starts at time zero and at every sensing that follows
/// a transmission burst. Searches still open at the horizon are ignored.
pub fn mean_search_delay(log: &EventLog) -> Option<f64> {
    let mut start: Option<u64> = Some(0);
    let mut after_burst = false;
    let mut total = 0u128;
    let mut count = 0u64;
    for e in log.events.iter().filter(|e| e.actor == Actor::Tx) {
        match e.kind {
            EventKind::Sense if after_burst => {
                start = Some(e.time_ns);
                after_burst = false;
            }
            EventKind::Idle => {
                if let Some(s) = start.take() {
                    total += (e.time_ns - s) as u128;
                    count += 1;
                }
            }
            EventKind::ToRx => after_burst = true,
            _ => {}
        }
    }
    (count > 0).then(|| total as f64 / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub p_sense_mw: f64,
    pub p_transmit_mw: f64,
    pub p_idle_mw: f64,
    pub e_switch_uj: f64,
    pub t_switch_delay_ns: u64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            p_sense_mw: 40.0,
            p_transmit_mw: 16.9,
            p_idle_mw: 69.5,
            e_switch_uj: 20.0,
            t_switch_delay_ns: 50 * US,
        }
    }
}

impl EnergyModel {
    pub fn validate(&self) -> Result<(), MetricsError> {
        for (name, v) in [
            ("p_sense", self.p_sense_mw),
            ("p_transmit", self.p_transmit_mw),
            ("p_idle", self.p_idle_mw),
            ("e_switch", self.e_switch_uj),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(MetricsError::InvalidEnergyModel(format!("{name} = {v}")));
            }
        }
        Ok(())
    }

    /// Power in watts billed for a state class. Channel switches are billed
    /// per switch instead.
    pub fn power_w(&self, class: StateClass) -> f64 {
        1e-3 * match class {
            StateClass::Sensing => self.p_sense_mw,
            StateClass::Transmission => self.p_transmit_mw,
            StateClass::ModeSwitch | StateClass::Backoff => self.p_idle_mw,
            StateClass::ChannelSwitch => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Energy {
    /// Joules per state class.
    pub by_state: BTreeMap<String, f64>,
    pub switch_total: f64,
}

impl Energy {
    pub fn total(&self) -> f64 {
        self.by_state.values().sum::<f64>() + self.switch_total
    }
}

pub fn energy(log: &EventLog, model: &EnergyModel) -> Energy {
    let by_state = log
        .tx_dwell()
        .iter()
        .filter(|(c, _)| *c != StateClass::ChannelSwitch)
        .map(|&(c, ns)| (c.as_str().to_string(), model.power_w(c) * seconds(ns)))
        .collect();
    Energy {
        by_state,
        switch_total: switch_count(log) as f64 * model.e_switch_uj * 1e-6,
    }
}

pub fn switch_count(log: &EventLog) -> u64 {
    log.events
        .iter()
        .filter(|e| e.actor == Actor::Tx && e.kind == EventKind::Switch)
        .count() as u64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCounts {
    pub transmitted: u64,
    pub collided: u64,
    pub delivered: u64,
}

pub fn frame_counts(log: &EventLog) -> FrameCounts {
    let mut c = FrameCounts::default();
    for e in &log.events {
        match (e.actor, e.kind) {
            (Actor::Tx, EventKind::FrameEnd) => {
                c.transmitted += 1;
                c.collided += e.detail;
            }
            (Actor::Rx, EventKind::Deliver) => c.delivered += 1,
            _ => {}
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub horizon_ns: u64,
    pub throughput_bps: f64,
    /// Γ(t) at evenly spaced times.
    pub avg_throughput_series: Vec<(u64, f64)>,
    pub switch_count: u64,
    pub switch_rate_per_s: f64,
    pub first_vacancy_delay_ns: u64,
    pub first_vacancy_found: bool,
    pub mean_search_delay_ns: Option<f64>,
    pub energy_by_state: BTreeMap<String, f64>,
    pub energy_switch_total: f64,
    pub frames: FrameCounts,
}

pub const SERIES_POINTS: u64 = 100;

impl SimReport {
    /// All-zero report for an empty horizon.
    pub fn empty() -> Self {
        Self {
            horizon_ns: 0,
            throughput_bps: 0.0,
            avg_throughput_series: Vec::new(),
            switch_count: 0,
            switch_rate_per_s: 0.0,
            first_vacancy_delay_ns: 0,
            first_vacancy_found: false,
            mean_search_delay_ns: None,
            energy_by_state: BTreeMap::new(),
            energy_switch_total: 0.0,
            frames: FrameCounts::default(),
        }
    }

    pub fn from_log(log: &EventLog, frame_size_bits: u64, model: &EnergyModel) -> Self {
        if log.horizon_ns == 0 {
            return Self::empty();
        }
        let frames = frame_counts(log);
        let switches = switch_count(log);
        let vacancy = first_vacancy_delay(log);
        let e = energy(log, model);
        let series = time_series(log, frame_size_bits, model, SERIES_POINTS);
        Self {
            horizon_ns: log.horizon_ns,
            throughput_bps: frames.delivered as f64 * frame_size_bits as f64 / seconds(log.horizon_ns),
            avg_throughput_series: series.iter().map(|r| (r.time_ns, r.throughput_bps)).collect(),
            switch_count: switches,
            switch_rate_per_s: switches as f64 / seconds(log.horizon_ns),
            first_vacancy_delay_ns: vacancy.delay_ns,
            first_vacancy_found: vacancy.found,
            mean_search_delay_ns: mean_search_delay(log),
            energy_by_state: e.by_state,
            energy_switch_total: e.switch_total,
            frames,
        }
    }

    pub fn total_energy(&self) -> f64 {
        self.energy_by_state.values().sum::<f64>() + self.energy_switch_total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub time_ns: u64,
    pub throughput_bps: f64,
    pub switches_cum: u64,
    pub energy_j: f64,
}

/// Cumulative metrics at `points` evenly spaced times in `(0, horizon]`.
pub fn time_series(log: &EventLog, frame_size_bits: u64, model: &EnergyModel, points: u64) -> Vec<SeriesRow> {
    if log.horizon_ns == 0 || points == 0 {
        return Vec::new();
    }
    let mut rows = Vec::with_capacity(points as usize);
    let mut delivered = 0u64;
    let mut switches = 0u64;
    let mut energy_j = 0.0;
    let mut state: Option<(StateClass, u64)> = None;
    let mut events = log.events.iter().filter(|e| e.actor != Actor::Pu).peekable();
    for k in 1..=points {
        let t = (log.horizon_ns as u128 * k as u128 / points as u128) as u64;
        while let Some(e) = events.next_if(|e| e.time_ns <= t) {
            match (e.actor, e.kind) {
                (Actor::Rx, EventKind::Deliver) => delivered += 1,
                (Actor::Tx, kind) => {
                    let entered = if kind == EventKind::End {
                        Some(None)
                    } else {
                        kind.tx_class().map(Some)
                    };
                    if let Some(next) = entered {
                        if let Some((class, since)) = state {
                            energy_j += model.power_w(class) * seconds(e.time_ns - since);
                        }
                        state = next.map(|c| (c, e.time_ns));
                    }
                    if kind == EventKind::Switch {
                        switches += 1;
                        energy_j += model.e_switch_uj * 1e-6;
                    }
                }
                _ => {}
            }
        }
        let open = state.map_or(0.0, |(class, since)| model.power_w(class) * seconds(t - since));
        rows.push(SeriesRow {
            time_ns: t,
            throughput_bps: delivered as f64 * frame_size_bits as f64 / seconds(t),
            switches_cum: switches,
            energy_j: energy_j + open,
        });
    }
    rows
}

pub fn write_series_csv<W: Write>(rows: &[SeriesRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "time_ns,throughput_bps,switches_cum,energy_j")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.time_ns, r.throughput_bps, r.switches_cum, r.energy_j)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csa::{CsaKind, CsaPolicy};
    use crate::dist::OnOffModel;
    use crate::macsim::{simulate, Event, MacParams, RendezvousMode, MS};
    use crate::traffic::{PuState, PuTrace};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn arithmetic() {
        assert_eq!(throughput(10, 1000, 5_000_000_000).unwrap(), 2000.0);
        assert_eq!(throughput(0, 1000, 1).unwrap(), 0.0);
        assert_eq!(throughput(1, 1, 0), Err(MetricsError::ZeroElapsed));
        assert_eq!(switch_rate(6, 3_000_000_000).unwrap(), 2.0);
        assert_eq!(switch_rate(0, 1).unwrap(), 0.0);
        assert_eq!(switch_rate(1, 0), Err(MetricsError::ZeroElapsed));
    }

    fn log_of(events: Vec<(u64, EventKind)>, horizon: u64) -> EventLog {
        let mut events: Vec<Event> = events
            .into_iter()
            .map(|(t, kind)| Event {
                time_ns: t,
                actor: Actor::Tx,
                kind,
                channel: 0,
                detail: 0,
            })
            .collect();
        events.push(Event {
            time_ns: horizon,
            actor: Actor::Tx,
            kind: EventKind::End,
            channel: 0,
            detail: 0,
        });
        EventLog {
            horizon_ns: horizon,
            events,
        }
    }

    #[test]
    fn energy_examples() {
        let m = EnergyModel::default();
        let log = log_of(vec![(0, EventKind::Sense)], 1_000_000_000);
        let e = energy(&log, &m);
        assert!(close(e.by_state["sensing"], 0.040, 1e-12));
        assert_eq!(e.switch_total, 0.0);
        let log = log_of(
            vec![(0, EventKind::Switch), (1, EventKind::Switch), (2, EventKind::Switch)],
            3,
        );
        assert!(close(energy(&log, &m).switch_total, 60e-6, 1e-12));
        let empty = EventLog {
            horizon_ns: 0,
            events: Vec::new(),
        };
        assert_eq!(energy(&empty, &m).total(), 0.0);
        assert_eq!(SimReport::from_log(&empty, 1500, &m), SimReport::empty());
    }

    #[test]
    fn vacancy_delay_examples() {
        let t_s = 40 * MS;
        let t_sw = 25 * MS;
        let log = log_of(vec![(0, EventKind::Sense), (t_s, EventKind::Idle)], 10 * t_s);
        assert_eq!(first_vacancy_delay(&log).delay_ns, t_s);
        let third = 3 * t_s + 2 * t_sw;
        let log = log_of(
            vec![
                (0, EventKind::Sense),
                (t_s, EventKind::Busy),
                (t_s, EventKind::Switch),
                (t_s + t_sw, EventKind::Sense),
                (2 * t_s + t_sw, EventKind::Busy),
                (2 * t_s + t_sw, EventKind::Switch),
                (2 * t_s + 2 * t_sw, EventKind::Sense),
                (third, EventKind::Idle),
            ],
            10 * t_s,
        );
        assert_eq!(
            first_vacancy_delay(&log),
            VacancyDelay {
                delay_ns: third,
                found: true
            }
        );
        assert_eq!(mean_search_delay(&log), Some(third as f64));
        let log = log_of(vec![(0, EventKind::Sense), (t_s, EventKind::Busy)], 10 * t_s);
        assert_eq!(
            first_vacancy_delay(&log),
            VacancyDelay {
                delay_ns: 10 * t_s,
                found: false
            }
        );
    }

    fn benchmark_log(t_pu_allow: u64, horizon: u64) -> (MacParams, EventLog) {
        let mut p = MacParams::testbed(1);
        p.t_pu_allow = t_pu_allow;
        let m: OnOffModel = "exp(1) / exp(1)".parse().unwrap();
        let pol = CsaPolicy::new(CsaKind::GeneralizedPredictive, &[m], None).unwrap();
        let traces = vec![PuTrace::constant(0, PuState::Off, horizon)];
        let log = simulate(&p, &pol, &traces, horizon, 0, RendezvousMode::Perfect).unwrap();
        (p, log)
    }

    #[test]
    fn benchmark_closed_form() {
        let (p, log) = benchmark_log(1000 * MS, 100 * 1005 * MS);
        let r = SimReport::from_log(&log, p.frame_size_bits, &EnergyModel::default());
        let n = p.n_frames();
        let cycle = p.t_sense + p.t_tx_mode + n * (p.t_frame + p.t_inter) + p.t_rx_mode;
        let want = (p.frame_size_bits * n) as f64 / (cycle as f64 * 1e-9);
        assert!(close(r.throughput_bps, want, 1e-12), "{} vs {want}", r.throughput_bps);
        assert_eq!(r.frames.delivered, r.frames.transmitted);
        assert_eq!(r.switch_count, 0);
    }

    #[test]
    fn series_and_conservation() {
        let (p, log) = benchmark_log(1000 * MS, 20_000 * MS);
        let m = EnergyModel::default();
        let r = SimReport::from_log(&log, p.frame_size_bits, &m);
        let rows = time_series(&log, p.frame_size_bits, &m, 50);
        let last = rows.last().unwrap();
        assert_eq!(last.time_ns, log.horizon_ns);
        assert!(close(last.energy_j, r.total_energy(), 1e-12));
        assert!(close(last.throughput_bps, r.throughput_bps, 1e-12));
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let again = SimReport::from_log(&EventLog::read_csv(buf.as_slice()).unwrap(), p.frame_size_bits, &m);
        assert_eq!(again, r);
        let dwell: u64 = log.tx_dwell().iter().map(|d| d.1).sum();
        assert_eq!(dwell, log.horizon_ns);
    }
}
