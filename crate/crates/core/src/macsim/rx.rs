//! Scan / lock / timeout receiver replayed against the transmitter's frames.

use std::collections::BTreeSet;

use super::{Actor, Event, EventKind, FrameRecord, LeaveReason, MacParams};
use crate::traffic::PuTrace;

#[derive(Debug, Clone, PartialEq)]
pub struct RxRun {
    pub events: Vec<Event>,
    /// `(time_ns, payload)` of every newly delivered payload.
    pub delivered: Vec<(u64, u64)>,
}

/// Replays the receiver over `[0, horizon_ns)`.
///
/// The receiver senses channels cyclically from channel 0. PU energy in the
/// sensing window makes it move on. Transmitter energy alone makes it lock:
/// from then on it decodes every frame that starts after the lock, delivering
/// each payload once, until a frame overlaps PU activity or no frame ends
/// within `t_timeout` of the lock or of the last reception.
pub fn run_rx(params: &MacParams, traces: &[PuTrace], frames: &[FrameRecord], horizon_ns: u64) -> RxRun {
    let n = traces.len();
    let mut run = RxRun {
        events: Vec::new(),
        delivered: Vec::new(),
    };
    if n == 0 {
        return run;
    }
    let mut by_channel: Vec<Vec<FrameRecord>> = vec![Vec::new(); n];
    for f in frames {
        by_channel[f.channel].push(*f);
    }
    let push = |events: &mut Vec<Event>, time_ns, kind, channel, detail| {
        events.push(Event {
            time_ns,
            actor: Actor::Rx,
            kind,
            channel,
            detail,
        })
    };
    let mut seen = BTreeSet::new();
    let mut channel = 0usize;
    let mut t = 0u64;
    while t < horizon_ns {
        let sensed = t + params.t_sense;
        if sensed > horizon_ns {
            break;
        }
        push(&mut run.events, t, EventKind::Scan, channel, 0);
        let list = &by_channel[channel];
        let on_air = list.iter().any(|f| f.start < sensed && f.end > t);
        let mut leave_at = sensed;
        if traces[channel].busy_during(t, sensed) {
            push(&mut run.events, sensed, EventKind::Leave, channel, LeaveReason::PrimaryUser as u64);
        } else if on_air {
            let mut deadline = sensed + params.t_timeout;
            push(&mut run.events, sensed, EventKind::Lock, channel, deadline);
            let first = list.partition_point(|f| f.start < sensed);
            let mut reason = LeaveReason::Timeout;
            leave_at = deadline;
            for f in &list[first..] {
                if f.end > deadline {
                    break;
                }
                if f.collided {
                    reason = LeaveReason::Collided;
                    leave_at = f.end;
                    break;
                }
                if seen.insert(f.payload) {
                    push(&mut run.events, f.end, EventKind::Deliver, channel, f.payload);
                    run.delivered.push((f.end, f.payload));
                }
                deadline = f.end + params.t_timeout;
                leave_at = deadline;
            }
            if leave_at > horizon_ns {
                break;
            }
            push(&mut run.events, leave_at, EventKind::Leave, channel, reason as u64);
        }
        channel = (channel + 1) % n;
        t = leave_at + params.t_switch;
    }
    run
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::macsim::{run_tx, RendezvousMode, MS};
    use crate::csa::{CsaKind, CsaPolicy};
    use crate::dist::OnOffModel;
    use crate::traffic::{generate, PuState, StartState};

    #[test]
    fn pu_only_channel_delivers_nothing() {
        let p = MacParams::testbed(2);
        let horizon = 10_000 * MS;
        let traces = vec![
            PuTrace::constant(0, PuState::On, horizon),
            PuTrace::constant(1, PuState::On, horizon),
        ];
        let run = run_rx(&p, &traces, &[], horizon);
        assert!(run.delivered.is_empty());
        assert!(run
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Leave)
            .all(|e| e.detail == LeaveReason::PrimaryUser as u64));
    }

    #[test]
    fn follows_a_static_transmitter() {
        let p = MacParams::testbed(4);
        let horizon = 60_000 * MS;
        let traces: Vec<PuTrace> = (0..4)
            .map(|c| {
                let s = if c == 2 { PuState::Off } else { PuState::On };
                PuTrace::constant(c, s, horizon)
            })
            .collect();
        let m: OnOffModel = "exp(1) / exp(1)".parse().unwrap();
        let pol = CsaPolicy::new(CsaKind::RoundRobin, &vec![m; 4], None).unwrap();
        let tx = run_tx(&p, &pol, &traces, horizon, 0, RendezvousMode::CogmacLite).unwrap();
        let rx = run_rx(&p, &traces, &tx.frames, horizon);
        let clean: BTreeSet<u64> = tx.frames.iter().filter(|f| !f.collided).map(|f| f.payload).collect();
        assert!(!rx.delivered.is_empty());
        // Once locked the receiver never leaves the only active channel.
        let leaves_on_2 = rx.events.iter().filter(|e| e.kind == EventKind::Leave && e.channel == 2).count();
        assert_eq!(leaves_on_2, 0);
        assert!(rx.delivered.len() <= clean.len());
        assert!(clean.len() - rx.delivered.len() <= 1);
    }

    #[test]
    fn conservation_under_pu_activity() {
        let p = MacParams::testbed(4);
        let horizon = 300_000 * MS;
        let m: OnOffModel = OnOffModel::with_duty_cycle("hed(0.9:1, 0.1:0.01)".parse().unwrap(), 0.3).unwrap();
        let traces: Vec<PuTrace> = (0..4)
            .map(|c| generate(&m, horizon, 5, c, StartState::StationaryMix).unwrap())
            .collect();
        let pol = CsaPolicy::new(CsaKind::GeneralizedPredictive, &vec![m; 4], None).unwrap();
        let tx = run_tx(&p, &pol, &traces, horizon, 0, RendezvousMode::CogmacLite).unwrap();
        let rx = run_rx(&p, &traces, &tx.frames, horizon);
        let clean: BTreeSet<u64> = tx.frames.iter().filter(|f| !f.collided).map(|f| f.payload).collect();
        let got: BTreeSet<u64> = rx.delivered.iter().map(|d| d.1).collect();
        assert_eq!(got.len(), rx.delivered.len());
        assert!(got.is_subset(&clean));
        assert!(!got.is_empty());
    }
}
