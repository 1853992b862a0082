//! Scenario configuration (TOML) and single-run orchestration:
//! traffic generation, MAC simulation and metrics.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csa::{CsaError, CsaKind, CsaPolicy};
use crate::dist::{DistError, Distribution, ExpDist, OnOffModel};
use crate::macsim::{simulate, EventLog, MacError, MacParams, RendezvousMode};
use crate::metrics::{EnergyModel, SimReport};
use crate::traffic::{generate, trace_hash, PuTrace, StartState, TrafficError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, reason: impl fmt::Display) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            reason: reason.to_string(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error(transparent)]
    Csa(#[from] CsaError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

/// Parses `40ms`, `50us`, `1.5s`, `200ns` or a bare number of nanoseconds.
pub fn parse_duration(text: &str) -> Result<u64, String> {
    let t = text.trim();
    let split = t
        .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || c == '+'))
        .unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let value: f64 = num.parse().map_err(|_| format!("bad duration `{text}`"))?;
    let scale = match unit.trim() {
        "" | "ns" => 1.0,
        "us" | "µs" => 1e3,
        "ms" => 1e6,
        "s" => 1e9,
        "min" => 60e9,
        other => return Err(format!("unknown time unit `{other}` in `{text}`")),
    };
    let ns = value * scale;
    if !(ns.is_finite() && ns >= 0.0) || ns > u64::MAX as f64 {
        return Err(format!("duration `{text}` out of range"));
    }
    Ok(ns.round() as u64)
}

/// A duration given either as a string with a unit or as integer nanoseconds.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum RawDuration {
    Ns(u64),
    Text(String),
}

impl RawDuration {
    fn ns(&self, field: &str) -> Result<u64, ConfigError> {
        match self {
            RawDuration::Ns(n) => Ok(*n),
            RawDuration::Text(t) => parse_duration(t).map_err(|e| ConfigError::invalid(field, e)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum RawValue {
    Number(f64),
    Text(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: RawScenario,
    #[serde(default)]
    mac: RawMac,
    #[serde(default)]
    energy: Option<EnergyModel>,
    #[serde(rename = "channel")]
    channels: Vec<RawChannel>,
    sweep: Option<RawSweep>,
    output: Option<RawOutput>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    horizon: RawDuration,
    seeds: Option<Vec<u64>>,
    seed_count: Option<u64>,
    policies: Vec<String>,
    #[serde(default = "default_rendezvous")]
    rendezvous: String,
    #[serde(default = "default_start")]
    start_state: StartState,
}

fn default_rendezvous() -> String {
    "perfect".into()
}

fn default_start() -> StartState {
    StartState::StationaryMix
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMac {
    t_sense: Option<RawDuration>,
    t_frame: Option<RawDuration>,
    t_inter: Option<RawDuration>,
    t_tx_mode: Option<RawDuration>,
    t_rx_mode: Option<RawDuration>,
    t_switch: Option<RawDuration>,
    t_backoff: Option<RawDuration>,
    t_timeout: Option<RawDuration>,
    t_pu_allow: Option<RawDuration>,
    frame_size_bits: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChannel {
    off: String,
    on: Option<String>,
    duty_cycle: Option<f64>,
    scale: Option<f64>,
    initial_omega: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    parameter: String,
    values: Vec<RawValue>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub model: OnOffModel,
    pub initial_omega: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    TPuAllow,
    TSense,
    TSwitch,
    /// Combined switch + sense time, split evenly between the two.
    SwitchSense,
    /// Multiplies every channel's ON and OFF means (duty cycle unchanged).
    DutyScale,
}

impl SweepParameter {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParameter::TPuAllow => "t_pu_allow",
            SweepParameter::TSense => "t_sense",
            SweepParameter::TSwitch => "t_switch",
            SweepParameter::SwitchSense => "switch_sense",
            SweepParameter::DutyScale => "duty_scale",
        }
    }

    pub fn is_duration(self) -> bool {
        self != SweepParameter::DutyScale
    }
}

impl std::str::FromStr for SweepParameter {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            SweepParameter::TPuAllow,
            SweepParameter::TSense,
            SweepParameter::TSwitch,
            SweepParameter::SwitchSense,
            SweepParameter::DutyScale,
        ]
        .into_iter()
        .find(|p| p.as_str() == s.trim())
        .ok_or_else(|| ConfigError::invalid("sweep.parameter", format!("unknown parameter `{s}`")))
    }
}

/// Grid of values for one parameter. Durations are in nanoseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub channels: Vec<ChannelSpec>,
    pub mac: MacParams,
    pub policies: Vec<CsaKind>,
    pub energy: EnergyModel,
    pub horizon_ns: u64,
    pub seeds: Vec<u64>,
    pub rendezvous: RendezvousMode,
    pub start_state: StartState,
    pub sweep: Option<Sweep>,
    pub output_dir: Option<PathBuf>,
}

fn parse_dist(field: &str, literal: &str) -> Result<Distribution, ConfigError> {
    literal.parse().map_err(|e| ConfigError::invalid(field, e))
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        Self::from_raw(raw)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        let mut channels = Vec::with_capacity(raw.channels.len());
        for (i, c) in raw.channels.iter().enumerate() {
            let field = |k: &str| format!("channel[{}].{k}", i + 1);
            let off = parse_dist(&field("off"), &c.off)?;
            let mut model = match (&c.on, c.duty_cycle) {
                (Some(on), None) => match parse_dist(&field("on"), on)? {
                    Distribution::Exp(on) => OnOffModel::new(on, off),
                    Distribution::Hed(h) if h.n_phases() == 1 => {
                        OnOffModel::new(ExpDist::new(h.phases()[0].rate).map_err(|e| ConfigError::invalid(field("on"), e))?, off)
                    }
                    _ => return Err(ConfigError::invalid(field("on"), "ON times must be exponential")),
                },
                (None, Some(d)) => OnOffModel::with_duty_cycle(off, d).map_err(|e| ConfigError::invalid(field("duty_cycle"), e))?,
                _ => {
                    return Err(ConfigError::invalid(
                        format!("channel[{}]", i + 1),
                        "give exactly one of `on` and `duty_cycle`",
                    ))
                }
            };
            if let Some(s) = c.scale {
                model = model.scaled(s).map_err(|e| ConfigError::invalid(field("scale"), e))?;
            }
            channels.push(ChannelSpec {
                model,
                initial_omega: c.initial_omega,
            });
        }
        let mut mac = MacParams::testbed(channels.len());
        let m = &raw.mac;
        for (slot, value, name) in [
            (&mut mac.t_sense, &m.t_sense, "mac.t_sense"),
            (&mut mac.t_frame, &m.t_frame, "mac.t_frame"),
            (&mut mac.t_inter, &m.t_inter, "mac.t_inter"),
            (&mut mac.t_tx_mode, &m.t_tx_mode, "mac.t_tx_mode"),
            (&mut mac.t_rx_mode, &m.t_rx_mode, "mac.t_rx_mode"),
            (&mut mac.t_switch, &m.t_switch, "mac.t_switch"),
            (&mut mac.t_backoff, &m.t_backoff, "mac.t_backoff"),
            (&mut mac.t_timeout, &m.t_timeout, "mac.t_timeout"),
            (&mut mac.t_pu_allow, &m.t_pu_allow, "mac.t_pu_allow"),
        ] {
            if let Some(v) = value {
                *slot = v.ns(name)?;
            }
        }
        if let Some(b) = m.frame_size_bits {
            mac.frame_size_bits = b;
        }
        let policies = raw
            .scenario
            .policies
            .iter()
            .map(|p| p.parse::<CsaKind>().map_err(|e| ConfigError::invalid("scenario.policies", e)))
            .collect::<Result<Vec<_>, _>>()?;
        let seeds = match (raw.scenario.seeds, raw.scenario.seed_count) {
            (Some(s), None) => s,
            (None, Some(n)) => (1..=n).collect(),
            _ => {
                return Err(ConfigError::invalid(
                    "scenario",
                    "give exactly one of `seeds` and `seed_count`",
                ))
            }
        };
        let sweep = match raw.sweep {
            None => None,
            Some(s) => {
                let parameter: SweepParameter = s.parameter.parse()?;
                let values = s
                    .values
                    .iter()
                    .map(|v| match (v, parameter.is_duration()) {
                        (RawValue::Number(x), _) => Ok(*x),
                        (RawValue::Text(t), true) => parse_duration(t)
                            .map(|ns| ns as f64)
                            .map_err(|e| ConfigError::invalid("sweep.values", e)),
                        (RawValue::Text(t), false) => t
                            .parse::<f64>()
                            .map_err(|_| ConfigError::invalid("sweep.values", format!("`{t}` is not a number"))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Some(Sweep { parameter, values })
            }
        };
        let cfg = ScenarioConfig {
            name: raw.scenario.name,
            channels,
            mac,
            policies,
            energy: raw.energy.unwrap_or_default(),
            horizon_ns: raw.scenario.horizon.ns("scenario.horizon")?,
            seeds,
            rendezvous: raw
                .scenario
                .rendezvous
                .parse()
                .map_err(|e| ConfigError::invalid("scenario.rendezvous", e))?,
            start_state: raw.scenario.start_state,
            sweep,
            output_dir: raw.output.and_then(|o| o.dir),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.channels.is_empty() {
            return Err(ConfigError::invalid("channel", "at least one channel is required"));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::invalid("scenario.seeds", "at least one seed is required"));
        }
        if self.policies.is_empty() {
            return Err(ConfigError::invalid("scenario.policies", "at least one policy is required"));
        }
        if self.mac.n_channels != self.channels.len() {
            return Err(ConfigError::invalid("mac", "n_channels does not match the channel list"));
        }
        for (i, c) in self.channels.iter().enumerate() {
            if let Some(w) = c.initial_omega {
                if !(0.0..=1.0).contains(&w) {
                    return Err(ConfigError::invalid(format!("channel[{}].initial_omega", i + 1), "must lie in [0, 1]"));
                }
            }
        }
        self.mac
            .validate(self.rendezvous == RendezvousMode::CogmacLite)
            .map_err(|e| ConfigError::invalid("mac", e))?;
        self.energy.validate().map_err(|e| ConfigError::invalid("energy", e))?;
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(ConfigError::invalid("sweep.values", "empty grid"));
            }
            if let Some(v) = s.values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(ConfigError::invalid("sweep.values", format!("{v} is not positive")));
            }
        }
        Ok(())
    }

    /// Grid points as `(value, config at that point)`; a single point with
    /// value `NaN` when there is no sweep.
    pub fn grid(&self) -> Result<Vec<(f64, ScenarioConfig)>, ScenarioError> {
        let Some(sweep) = &self.sweep else {
            return Ok(vec![(f64::NAN, self.clone())]);
        };
        sweep
            .values
            .iter()
            .map(|&v| {
                let mut c = self.clone();
                c.sweep = None;
                let ns = v.round() as u64;
                match sweep.parameter {
                    SweepParameter::TPuAllow => c.mac.t_pu_allow = ns,
                    SweepParameter::TSense => c.mac.t_sense = ns,
                    SweepParameter::TSwitch => c.mac.t_switch = ns,
                    SweepParameter::SwitchSense => {
                        c.mac.t_sense = ns / 2;
                        c.mac.t_switch = ns - ns / 2;
                    }
                    SweepParameter::DutyScale => {
                        for ch in &mut c.channels {
                            ch.model = ch.model.scaled(v)?;
                        }
                    }
                }
                c.mac
                    .validate(c.rendezvous == RendezvousMode::CogmacLite)
                    .map_err(|e| ConfigError::invalid(format!("sweep at {v}"), e))?;
                Ok((v, c))
            })
            .collect()
    }

    pub fn models(&self) -> Vec<OnOffModel> {
        self.channels.iter().map(|c| c.model.clone()).collect()
    }

    /// Prior per channel: the configured value or the stationary idle
    /// probability.
    pub fn initial_omega(&self) -> Vec<f64> {
        self.channels
            .iter()
            .map(|c| c.initial_omega.unwrap_or_else(|| c.model.idle_fraction()))
            .collect()
    }

    pub fn policy(&self, kind: CsaKind) -> Result<CsaPolicy, CsaError> {
        CsaPolicy::new(kind, &self.models(), Some(self.initial_omega()))
    }

    /// PU traces for one seed, covering the horizon.
    pub fn traces(&self, seed: u64) -> Result<Vec<PuTrace>, TrafficError> {
        self.channels
            .iter()
            .enumerate()
            .map(|(c, ch)| generate(&ch.model, self.horizon_ns, seed, c, self.start_state))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: SimReport,
    pub log: EventLog,
}

/// Simulates one policy over given traces.
pub fn run_on_traces(
    cfg: &ScenarioConfig,
    policy: &CsaPolicy,
    traces: &[PuTrace],
    seed: u64,
) -> Result<RunOutput, ScenarioError> {
    if cfg.horizon_ns == 0 {
        return Ok(RunOutput {
            report: SimReport::empty(),
            log: EventLog {
                horizon_ns: 0,
                events: Vec::new(),
            },
        });
    }
    let log = simulate(&cfg.mac, policy, traces, cfg.horizon_ns, seed, cfg.rendezvous)?;
    let report = SimReport::from_log(&log, cfg.mac.frame_size_bits, &cfg.energy);
    Ok(RunOutput { report, log })
}

/// Generates traces for `seed` and simulates one policy. The sweep, if any,
/// is ignored.
pub fn run_scenario(cfg: &ScenarioConfig, kind: CsaKind, seed: u64) -> Result<(RunOutput, String), ScenarioError> {
    if cfg.horizon_ns == 0 {
        return Ok((run_on_traces(cfg, &cfg.policy(kind)?, &[], seed)?, String::new()));
    }
    let traces = cfg.traces(seed)?;
    let hash = trace_hash(&traces);
    let policy = cfg.policy(kind)?;
    Ok((run_on_traces(cfg, &policy, &traces, seed)?, hash))
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
[scenario]
name = "example"
horizon = "120s"
seeds = [1, 2]
policies = ["generalized_predictive", "predictive_exponential"]
rendezvous = "cogmac_lite"

[mac]
t_sense = "40ms"
t_pu_allow = 1000000000

[[channel]]
off = "hed(0.9:10, 0.1:0.1)"
duty_cycle = 0.3

[[channel]]
off = "exp(1)"
on = "exp(2)"
initial_omega = 0.5
scale = 2.0

[sweep]
parameter = "t_pu_allow"
values = ["1000ms", "3s"]
"#;

    #[test]
    fn durations() {
        assert_eq!(parse_duration("40ms").unwrap(), 40_000_000);
        assert_eq!(parse_duration("50us").unwrap(), 50_000);
        assert_eq!(parse_duration("1.5s").unwrap(), 1_500_000_000);
        assert_eq!(parse_duration("7").unwrap(), 7);
        assert!(parse_duration("4 parsecs").is_err());
        assert!(parse_duration("-1s").is_err());
    }

    #[test]
    fn parses_example() {
        let c = ScenarioConfig::from_toml_str(EXAMPLE).unwrap();
        assert_eq!(c.channels.len(), 2);
        assert_eq!(c.mac.n_channels, 2);
        assert_eq!(c.rendezvous, RendezvousMode::CogmacLite);
        assert!((c.channels[0].model.duty_cycle() - 0.3).abs() < 1e-12);
        assert!((c.channels[1].model.mean_off() - 2.0).abs() < 1e-12);
        assert_eq!(c.initial_omega()[1], 0.5);
        let grid = c.grid().unwrap();
        assert_eq!(grid.len(), 2);
        assert_eq!(grid[1].1.mac.t_pu_allow, 3_000_000_000);
    }

    #[test]
    fn rejects_bad_configs() {
        for (bad, what) in [
            (EXAMPLE.replace("duty_cycle = 0.3", ""), "channel[1]"),
            (EXAMPLE.replace("seeds = [1, 2]", "seeds = []"), "seeds"),
            (EXAMPLE.replace("\"predictive_exponential\"", "\"oracle\""), "policies"),
            (EXAMPLE.replace("horizon = \"120s\"", "horizon = \"2 fortnights\""), "horizon"),
            (EXAMPLE.replace("hed(0.9:10, 0.1:0.1)", "hed(0.9:10)"), "off"),
            (EXAMPLE.replace("[sweep]", "[sweeep]"), "syntax"),
        ] {
            let err = ScenarioConfig::from_toml_str(&bad).unwrap_err().to_string();
            assert!(err.contains(what), "{err} should mention {what}");
        }
    }

    #[test]
    fn empty_horizon_report() {
        let mut c = ScenarioConfig::from_toml_str(EXAMPLE).unwrap();
        c.horizon_ns = 0;
        let (out, _) = run_scenario(&c, CsaKind::Greedy, 1).unwrap();
        assert_eq!(out.report, SimReport::empty());
    }

    #[test]
    fn repeatable_single_run() {
        let c = ScenarioConfig::from_toml_str(EXAMPLE).unwrap();
        let a = run_scenario(&c, CsaKind::GeneralizedPredictive, 2).unwrap();
        let b = run_scenario(&c, CsaKind::GeneralizedPredictive, 2).unwrap();
        assert_eq!(serde_json::to_string(&a.0.report).unwrap(), serde_json::to_string(&b.0.report).unwrap());
        assert_eq!(a.1, b.1);
        assert_eq!(a.0.log, b.0.log);
    }
}
