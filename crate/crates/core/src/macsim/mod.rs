//! Discrete-event simulation of the secondary transmitter and receiver MAC.
//!
//! All times are integer nanoseconds. The transmitter runs the
//! sense / transmit / switch / backoff loop against the PU traces; the
//! receiver is replayed afterwards against the transmitter's frames. Both
//! streams, together with the PU transitions, are merged through one
//! [`EventQueue`] ordered by `(time, actor, sequence)`.

mod rx;

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csa::{ChannelSelector, CsaPolicy, SenseResult};
use crate::traffic::{PuState, PuTrace};

pub use rx::{run_rx, RxRun};

pub const MS: u64 = 1_000_000;
pub const US: u64 = 1_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MacError {
    #[error("invalid MAC parameters: {0}")]
    Config(String),
    #[error("policy has {policy} channels but {traces} traces were given")]
    ChannelMismatch { policy: usize, traces: usize },
    #[error("trace for channel {channel} ends at {end} ns, before the horizon {horizon} ns")]
    ShortTrace { channel: usize, end: u64, horizon: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacParams {
    pub t_sense: u64,
    pub t_frame: u64,
    pub t_inter: u64,
    pub t_tx_mode: u64,
    pub t_rx_mode: u64,
    pub t_switch: u64,
    pub t_backoff: u64,
    pub t_timeout: u64,
    pub t_pu_allow: u64,
    pub n_channels: usize,
    pub frame_size_bits: u64,
}

impl MacParams {
    /// Test-bed timings: 40 ms sensing, 200 ms frames, 15/150 ms TX/RX mode
    /// switches, 25 ms channel switch, 4 ms backoff, 700 ms receiver timeout,
    /// 1000 ms inter-sensing and 1500-bit frames.
    pub fn testbed(n_channels: usize) -> Self {
        Self {
            t_sense: 40 * MS,
            t_frame: 200 * MS,
            t_inter: 0,
            t_tx_mode: 15 * MS,
            t_rx_mode: 150 * MS,
            t_switch: 25 * MS,
            t_backoff: 4 * MS,
            t_timeout: 700 * MS,
            t_pu_allow: 1000 * MS,
            n_channels,
            frame_size_bits: 1500,
        }
    }

    /// Checks the parameters; `with_receiver` adds the timeout bound.
    pub fn validate(&self, with_receiver: bool) -> Result<(), MacError> {
        if self.n_channels == 0 {
            return Err(MacError::Config("n_channels must be positive".into()));
        }
        if self.frame_size_bits == 0 {
            return Err(MacError::Config("frame_size_bits must be positive".into()));
        }
        if self.t_sense == 0 {
            return Err(MacError::Config("t_sense must be positive".into()));
        }
        if self.t_frame == 0 {
            return Err(MacError::Config("t_frame must be positive".into()));
        }
        if with_receiver {
            let need = self.min_timeout();
            if self.t_timeout < need {
                return Err(MacError::Config(format!(
                    "t_timeout = {} ns is below the required {} ns",
                    self.t_timeout, need
                )));
            }
        }
        Ok(())
    }

    /// `max(3 t_frame, t_tx_mode + t_rx_mode + t_sense + t_frame)`
    pub fn min_timeout(&self) -> u64 {
        (3 * self.t_frame).max(self.t_tx_mode + self.t_rx_mode + self.t_sense + self.t_frame)
    }

    pub fn n_frames(&self) -> u64 {
        n_frames(self)
    }

    pub fn min_repeat_time(&self) -> RepeatTime {
        min_repeat_time(self)
    }
}

/// Frames that fit into one inter-sensing interval.
pub fn n_frames(p: &MacParams) -> u64 {
    let window = p.t_pu_allow.saturating_sub(p.t_rx_mode + p.t_tx_mode);
    let per_frame = p.t_frame + p.t_inter;
    if per_frame == 0 {
        return 0;
    }
    window / per_frame
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepeatTime {
    pub duration_ns: u64,
    /// How many times the first frame of a burst is sent.
    pub repetitions: u64,
}

pub fn min_repeat_time(p: &MacParams) -> RepeatTime {
    let n = p.n_channels.max(1) as u64;
    let duration_ns = n * p.t_sense + (n - 1) * p.t_switch;
    let repetitions = if p.t_frame == 0 {
        0
    } else {
        duration_ns.div_ceil(p.t_frame)
    };
    RepeatTime {
        duration_ns,
        repetitions,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RendezvousMode {
    /// The receiver is always on the transmitter's channel.
    Perfect,
    /// Scan / lock / timeout receiver with initial-frame repetition.
    CogmacLite,
}

impl fmt::Display for RendezvousMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RendezvousMode::Perfect => "perfect",
            RendezvousMode::CogmacLite => "cogmac_lite",
        })
    }
}

impl FromStr for RendezvousMode {
    type Err = MacError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "perfect" => Ok(RendezvousMode::Perfect),
            "cogmac_lite" => Ok(RendezvousMode::CogmacLite),
            other => Err(MacError::Config(format!("unknown rendezvous mode `{other}`"))),
        }
    }
}

/// Transmitter state entered at an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxState {
    Sensing(usize),
    SwitchingChannel,
    SwitchingToTx,
    Transmitting(u64),
    SwitchingToRx,
    Backoff,
}

/// Receiver state entered at an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RxState {
    Scanning(usize),
    Locked { channel: usize, deadline: u64 },
}

/// Energy accounting class of a transmitter state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateClass {
    Sensing,
    Transmission,
    ModeSwitch,
    ChannelSwitch,
    Backoff,
}

impl StateClass {
    pub const ALL: [StateClass; 5] = [
        StateClass::Sensing,
        StateClass::Transmission,
        StateClass::ModeSwitch,
        StateClass::ChannelSwitch,
        StateClass::Backoff,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StateClass::Sensing => "sensing",
            StateClass::Transmission => "transmission",
            StateClass::ModeSwitch => "mode_switch",
            StateClass::ChannelSwitch => "channel_switch",
            StateClass::Backoff => "backoff",
        }
    }
}

impl TxState {
    pub fn class(self) -> StateClass {
        match self {
            TxState::Sensing(_) => StateClass::Sensing,
            TxState::SwitchingChannel => StateClass::ChannelSwitch,
            TxState::SwitchingToTx | TxState::SwitchingToRx => StateClass::ModeSwitch,
            TxState::Transmitting(_) => StateClass::Transmission,
            TxState::Backoff => StateClass::Backoff,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Pu,
    Tx,
    Rx,
}

impl Actor {
    pub fn as_str(self) -> &'static str {
        match self {
            Actor::Pu => "pu",
            Actor::Tx => "tx",
            Actor::Rx => "rx",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// PU state at time zero or a PU transition; detail 1 for ON.
    PuState,
    /// Transmitter starts sensing.
    Sense,
    Idle,
    Busy,
    /// Transmitter starts a channel switch; `channel` is the target.
    Switch,
    ToTx,
    /// Frame starts; detail is the payload id.
    Frame,
    /// Frame ends; detail 1 if it overlapped PU activity.
    FrameEnd,
    ToRx,
    Backoff,
    /// Receiver starts sensing a channel.
    Scan,
    /// Receiver locks; detail is the timeout deadline.
    Lock,
    /// Receiver delivers a payload; detail is the payload id.
    Deliver,
    /// Receiver leaves a channel; detail is a [`LeaveReason`] code.
    Leave,
    /// End of the simulated horizon.
    End,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::PuState => "pu_state",
            EventKind::Sense => "sense",
            EventKind::Idle => "idle",
            EventKind::Busy => "busy",
            EventKind::Switch => "switch",
            EventKind::ToTx => "to_tx",
            EventKind::Frame => "frame",
            EventKind::FrameEnd => "frame_end",
            EventKind::ToRx => "to_rx",
            EventKind::Backoff => "backoff",
            EventKind::Scan => "scan",
            EventKind::Lock => "lock",
            EventKind::Deliver => "deliver",
            EventKind::Leave => "leave",
            EventKind::End => "end",
        }
    }

    /// Transmitter state entered by this event, if any.
    pub fn tx_class(self) -> Option<StateClass> {
        match self {
            EventKind::Sense => Some(StateClass::Sensing),
            EventKind::Switch => Some(StateClass::ChannelSwitch),
            EventKind::ToTx | EventKind::ToRx => Some(StateClass::ModeSwitch),
            EventKind::Frame => Some(StateClass::Transmission),
            EventKind::Backoff => Some(StateClass::Backoff),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeaveReason {
    Timeout = 0,
    Collided = 1,
    PrimaryUser = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub time_ns: u64,
    pub actor: Actor,
    pub kind: EventKind,
    pub channel: usize,
    pub detail: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Queued {
    key: (u64, Actor, u64),
    event: Event,
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}

/// Event queue with the total order `(time, actor, insertion sequence)`.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Queued>>,
    seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, event: Event) {
        self.heap.push(Reverse(Queued {
            key: (event.time_ns, event.actor, self.seq),
            event,
        }));
        self.seq += 1;
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|Reverse(q)| q.event)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn drain_ordered(mut self) -> Vec<Event> {
        let mut out = Vec::with_capacity(self.len());
        while let Some(e) = self.pop() {
            out.push(e);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub horizon_ns: u64,
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time_ns,actor,event,channel,detail")?;
        for e in &self.events {
            writeln!(
                out,
                "{},{},{},{},{}",
                e.time_ns,
                e.actor.as_str(),
                e.kind.as_str(),
                e.channel,
                e.detail
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::BufRead>(input: R) -> Result<Self, String> {
        let mut events = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if n == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(format!("line {}: expected 5 fields", n + 1));
            }
            let bad = |what: &str| format!("line {}: bad {what}", n + 1);
            let actor = match f[1] {
                "pu" => Actor::Pu,
                "tx" => Actor::Tx,
                "rx" => Actor::Rx,
                _ => return Err(bad("actor")),
            };
            let kind = ALL_KINDS
                .iter()
                .copied()
                .find(|k| k.as_str() == f[2])
                .ok_or_else(|| bad("event"))?;
            events.push(Event {
                time_ns: f[0].parse().map_err(|_| bad("time"))?,
                actor,
                kind,
                channel: f[3].parse().map_err(|_| bad("channel"))?,
                detail: f[4].parse().map_err(|_| bad("detail"))?,
            });
        }
        let horizon_ns = events
            .iter()
            .rev()
            .find(|e| e.kind == EventKind::End)
            .map(|e| e.time_ns)
            .ok_or("log has no end event")?;
        Ok(Self { horizon_ns, events })
    }

    /// Dwell time of the transmitter in each state class.
    pub fn tx_dwell(&self) -> [(StateClass, u64); 5] {
        let mut out = StateClass::ALL.map(|c| (c, 0u64));
        let mut current: Option<(StateClass, u64)> = None;
        for e in self.events.iter().filter(|e| e.actor == Actor::Tx) {
            let next = if e.kind == EventKind::End {
                Some(None)
            } else {
                e.kind.tx_class().map(Some)
            };
            if let Some(next) = next {
                if let Some((class, since)) = current {
                    let slot = out.iter_mut().find(|(c, _)| *c == class).unwrap();
                    slot.1 += e.time_ns - since;
                }
                current = next.map(|c| (c, e.time_ns));
            }
        }
        out
    }
}

const ALL_KINDS: [EventKind; 15] = [
    EventKind::PuState,
    EventKind::Sense,
    EventKind::Idle,
    EventKind::Busy,
    EventKind::Switch,
    EventKind::ToTx,
    EventKind::Frame,
    EventKind::FrameEnd,
    EventKind::ToRx,
    EventKind::Backoff,
    EventKind::Scan,
    EventKind::Lock,
    EventKind::Deliver,
    EventKind::Leave,
    EventKind::End,
];

/// One frame put on air by the transmitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub channel: usize,
    pub start: u64,
    pub end: u64,
    pub payload: u64,
    pub collided: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TxRun {
    pub events: Vec<Event>,
    pub frames: Vec<FrameRecord>,
    pub belief_evaluations: u64,
}

fn check_traces(policy_channels: usize, traces: &[PuTrace], horizon: u64) -> Result<(), MacError> {
    if policy_channels != traces.len() {
        return Err(MacError::ChannelMismatch {
            policy: policy_channels,
            traces: traces.len(),
        });
    }
    for (c, t) in traces.iter().enumerate() {
        if t.end() < horizon {
            return Err(MacError::ShortTrace {
                channel: c,
                end: t.end(),
                horizon,
            });
        }
    }
    Ok(())
}

struct TxLog {
    events: Vec<Event>,
    horizon: u64,
}

impl TxLog {
    fn push(&mut self, time_ns: u64, kind: EventKind, channel: usize, detail: u64) {
        self.events.push(Event {
            time_ns,
            actor: Actor::Tx,
            kind,
            channel,
            detail,
        });
    }

    /// Logs entry into a state lasting `len`; returns its end time if it
    /// finishes within the horizon.
    fn enter(&mut self, t: u64, len: u64, kind: EventKind, channel: usize, detail: u64) -> Option<u64> {
        if t >= self.horizon {
            return None;
        }
        self.push(t, kind, channel, detail);
        let end = t + len;
        (end <= self.horizon).then_some(end)
    }
}

/// Runs the transmitter loop over `[0, horizon_ns)`.
///
/// `seed` drives the random policy only.
pub fn run_tx(
    params: &MacParams,
    policy: &CsaPolicy,
    traces: &[PuTrace],
    horizon_ns: u64,
    seed: u64,
    mode: RendezvousMode,
) -> Result<TxRun, MacError> {
    params.validate(mode == RendezvousMode::CogmacLite)?;
    check_traces(policy.n_channels(), traces, horizon_ns)?;
    let mut log = TxLog {
        events: Vec::new(),
        horizon: horizon_ns,
    };
    let mut frames = Vec::new();
    let mut selector = ChannelSelector::new(policy, seed);
    let n_frames = params.n_frames();
    let repetitions = match mode {
        RendezvousMode::Perfect => 1,
        RendezvousMode::CogmacLite => params.min_repeat_time().repetitions.max(1),
    };
    let n_channels = policy.n_channels();
    let mut payload = 0u64;
    let mut channel = selector.initial_channel();
    let mut fresh_channel = true;
    let mut busy_run = 0usize;
    let mut t = 0u64;

    'run: while t < horizon_ns {
        let Some(sensed) = log.enter(t, params.t_sense, EventKind::Sense, channel, 0) else {
            break;
        };
        let busy = traces[channel].busy_during(t, sensed);
        let result = if busy {
            SenseResult::Busy
        } else {
            SenseResult::Idle
        };
        selector.record(channel, sensed, result);
        t = sensed;
        if result.is_idle() {
            log.push(t, EventKind::Idle, channel, 0);
            busy_run = 0;
            let Some(end) = log.enter(t, params.t_tx_mode, EventKind::ToTx, channel, 0) else {
                break;
            };
            t = end;
            for k in 0..n_frames {
                let repeat = fresh_channel && k > 0 && k < repetitions;
                if !repeat {
                    payload += 1;
                }
                let Some(frame_end) =
                    log.enter(t, params.t_frame, EventKind::Frame, channel, payload)
                else {
                    break 'run;
                };
                let collided = traces[channel].busy_during(t, frame_end);
                log.push(frame_end, EventKind::FrameEnd, channel, collided as u64);
                frames.push(FrameRecord {
                    channel,
                    start: t,
                    end: frame_end,
                    payload,
                    collided,
                });
                t = frame_end + params.t_inter;
                if t > horizon_ns {
                    break 'run;
                }
            }
            fresh_channel = false;
            let Some(end) = log.enter(t, params.t_rx_mode, EventKind::ToRx, channel, 0) else {
                break;
            };
            t = end;
        } else {
            log.push(t, EventKind::Busy, channel, 0);
            busy_run += 1;
            let next = if busy_run >= n_channels {
                busy_run = 0;
                let Some(end) = log.enter(t, params.t_backoff, EventKind::Backoff, channel, 0)
                else {
                    break;
                };
                t = end;
                selector.after_backoff(channel, t)
            } else {
                selector.next_after_busy(channel, t)
            };
            if next != channel {
                let Some(end) = log.enter(t, params.t_switch, EventKind::Switch, next, 0) else {
                    break;
                };
                t = end;
                channel = next;
                fresh_channel = true;
            }
        }
    }
    log.push(horizon_ns, EventKind::End, channel, 0);
    Ok(TxRun {
        events: log.events,
        frames,
        belief_evaluations: selector.belief_evaluations(),
    })
}

/// PU state at time zero and every transition before the horizon.
pub fn pu_events(traces: &[PuTrace], horizon_ns: u64) -> Vec<Event> {
    let mut out = Vec::new();
    for (c, trace) in traces.iter().enumerate() {
        for iv in &trace.intervals {
            if iv.start >= horizon_ns {
                break;
            }
            out.push(Event {
                time_ns: iv.start,
                actor: Actor::Pu,
                kind: EventKind::PuState,
                channel: c,
                detail: (iv.state == PuState::On) as u64,
            });
        }
    }
    out
}

/// Receiver events for perfect rendezvous: every clean frame is delivered
/// when it ends.
pub fn perfect_rx(frames: &[FrameRecord]) -> Vec<Event> {
    frames
        .iter()
        .filter(|f| !f.collided)
        .map(|f| Event {
            time_ns: f.end,
            actor: Actor::Rx,
            kind: EventKind::Deliver,
            channel: f.channel,
            detail: f.payload,
        })
        .collect()
}

/// Full simulation of one run: transmitter, receiver and PU activity merged
/// into one ordered log.
pub fn simulate(
    params: &MacParams,
    policy: &CsaPolicy,
    traces: &[PuTrace],
    horizon_ns: u64,
    seed: u64,
    mode: RendezvousMode,
) -> Result<EventLog, MacError> {
    if horizon_ns == 0 {
        return Ok(EventLog {
            horizon_ns: 0,
            events: Vec::new(),
        });
    }
    let tx = run_tx(params, policy, traces, horizon_ns, seed, mode)?;
    let rx_events = match mode {
        RendezvousMode::Perfect => perfect_rx(&tx.frames),
        RendezvousMode::CogmacLite => run_rx(params, traces, &tx.frames, horizon_ns).events,
    };
    let mut queue = EventQueue::new();
    for e in pu_events(traces, horizon_ns)
        .into_iter()
        .chain(tx.events)
        .chain(rx_events)
    {
        queue.push(e);
    }
    Ok(EventLog {
        horizon_ns,
        events: queue.drain_ordered(),
    })
}
