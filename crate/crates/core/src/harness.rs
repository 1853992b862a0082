//! Seed and grid sweeps with paired policy comparison.
//!
//! For each (grid point, seed) one set of PU traces is generated and every
//! policy runs on it. Cells execute in parallel; results are sorted by
//! `(grid index, seed value, policy index)` before anything is written, so the
//! output does not depend on the thread count.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csa::CsaKind;
use crate::macsim::EventLog;
use crate::metrics::SimReport;
use crate::scenario::{run_on_traces, ScenarioConfig, ScenarioError};
use crate::traffic::{trace_hash, write_traces_csv, PuTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub parameter: Option<String>,
    pub grid_index: usize,
    pub value: Option<f64>,
    pub seed: u64,
    pub policy: CsaKind,
    pub trace_hash: String,
    pub report: SimReport,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
    /// Replaces the configured seed list.
    pub seed_override: Option<Vec<u64>>,
    /// Keep the event logs and traces of every run.
    pub keep_logs: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub config: ScenarioConfig,
    pub records: Vec<RunRecord>,
    /// Event logs in record order when requested.
    pub logs: Vec<EventLog>,
    /// `(grid index, seed, traces)` when logs were requested.
    pub traces: Vec<(usize, u64, Vec<PuTrace>)>,
}

struct CellOut {
    records: Vec<RunRecord>,
    logs: Vec<EventLog>,
    traces: Option<(usize, u64, Vec<PuTrace>)>,
}

fn run_cell(
    cfg: &ScenarioConfig,
    point: &ScenarioConfig,
    grid_index: usize,
    value: f64,
    seed: u64,
    keep_logs: bool,
) -> Result<CellOut, ScenarioError> {
    let traces = if point.horizon_ns == 0 {
        Vec::new()
    } else {
        point.traces(seed)?
    };
    let hash = trace_hash(&traces);
    let mut out = CellOut {
        records: Vec::new(),
        logs: Vec::new(),
        traces: None,
    };
    for &kind in &point.policies {
        let policy = point.policy(kind)?;
        let run = run_on_traces(point, &policy, &traces, seed)?;
        out.records.push(RunRecord {
            scenario: cfg.name.clone(),
            parameter: cfg.sweep.as_ref().map(|s| s.parameter.as_str().to_string()),
            grid_index,
            value: (!value.is_nan()).then_some(value),
            seed,
            policy: kind,
            trace_hash: hash.clone(),
            report: run.report,
        });
        if keep_logs {
            out.logs.push(run.log);
        }
    }
    if keep_logs {
        out.traces = Some((grid_index, seed, traces));
    }
    Ok(out)
}

pub fn run_experiment(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Experiment, ScenarioError> {
    let mut cfg = cfg.clone();
    if let Some(seeds) = &opts.seed_override {
        cfg.seeds = seeds.clone();
    }
    cfg.validate()?;
    let grid = cfg.grid()?;
    let cells: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|g| cfg.seeds.iter().map(move |&s| (g, s)))
        .collect();
    let work = || {
        cells
            .par_iter()
            .map(|&(g, seed)| {
                let (value, point) = &grid[g];
                run_cell(&cfg, point, g, *value, seed, opts.keep_logs).map(|o| ((g, seed), o))
            })
            .collect::<Result<Vec<_>, _>>()
    };
    let mut outs = match opts.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| ScenarioError::Io {
                context: "thread pool".into(),
                source: std::io::Error::other(e),
            })?
            .install(work)?,
        None => work()?,
    };
    outs.sort_by_key(|(k, _)| *k);
    let mut exp = Experiment {
        config: cfg,
        records: Vec::new(),
        logs: Vec::new(),
        traces: Vec::new(),
    };
    for (_, o) in outs {
        exp.records.extend(o.records);
        exp.logs.extend(o.logs);
        exp.traces.extend(o.traces);
    }
    Ok(exp)
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Per-seed metric extracted for aggregation.
pub type Metric = fn(&SimReport) -> f64;

pub const METRICS: [(&str, Metric); 7] = [
    ("throughput_bps", |r| r.throughput_bps),
    ("switch_rate_per_s", |r| r.switch_rate_per_s),
    ("first_vacancy_delay_s", |r| r.first_vacancy_delay_ns as f64 * 1e-9),
    ("mean_search_delay_s", |r| r.mean_search_delay_ns.map_or(f64::NAN, |d| d * 1e-9)),
    ("switch_energy_j", |r| r.energy_switch_total),
    ("total_energy_j", |r| r.total_energy()),
    ("delivered_frames", |r| r.frames.delivered as f64),
];

/// Metrics with a paired percentage change against the first policy.
pub const DELTAS: [(&str, Metric); 3] = [
    ("delta_switch_rate_pct", |r| r.switch_rate_per_s),
    ("delta_throughput_pct", |r| r.throughput_bps),
    ("delta_switch_energy_pct", |r| r.energy_switch_total),
];

/// Paired change `100 * sum(x - base) / sum(base)` over matching seeds.
pub fn paired_delta_pct(x: &[f64], base: &[f64]) -> f64 {
    let diff: f64 = x.iter().zip(base).map(|(a, b)| a - b).sum();
    let total: f64 = base.iter().sum();
    if total == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::NAN
        }
    } else {
        100.0 * diff / total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub grid_index: usize,
    pub value: Option<f64>,
    pub policy: CsaKind,
    pub n_seeds: usize,
    /// `(mean, std)` in [`METRICS`] order.
    pub stats: Vec<(f64, f64)>,
    /// Paired percentages in [`DELTAS`] order.
    pub deltas: Vec<f64>,
}

impl Experiment {
    pub fn records_for(&self, grid_index: usize, policy: CsaKind) -> Vec<&RunRecord> {
        self.records
            .iter()
            .filter(|r| r.grid_index == grid_index && r.policy == policy)
            .collect()
    }

    pub fn grid_len(&self) -> usize {
        self.records.iter().map(|r| r.grid_index + 1).max().unwrap_or(0)
    }

    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut rows = Vec::new();
        let Some(&baseline) = self.config.policies.first() else {
            return rows;
        };
        for g in 0..self.grid_len() {
            let base = self.records_for(g, baseline);
            for &kind in &self.config.policies {
                let recs = self.records_for(g, kind);
                let stats = METRICS
                    .iter()
                    .map(|(_, f)| {
                        let xs: Vec<f64> = recs.iter().map(|r| f(&r.report)).filter(|x| !x.is_nan()).collect();
                        mean_std(&xs)
                    })
                    .collect();
                let deltas = DELTAS
                    .iter()
                    .map(|(_, f)| {
                        let x: Vec<f64> = recs.iter().map(|r| f(&r.report)).collect();
                        let b: Vec<f64> = base.iter().map(|r| f(&r.report)).collect();
                        paired_delta_pct(&x, &b)
                    })
                    .collect();
                rows.push(AggregateRow {
                    grid_index: g,
                    value: recs.first().and_then(|r| r.value),
                    policy: kind,
                    n_seeds: recs.len(),
                    stats,
                    deltas,
                });
            }
        }
        rows
    }

    pub fn aggregate_csv(&self) -> String {
        let param = self
            .config
            .sweep
            .as_ref()
            .map_or("none", |s| s.parameter.as_str());
        let mut out = String::from("scenario,parameter,value,policy,n_seeds");
        for (name, _) in METRICS {
            let _ = write!(out, ",{name}_mean,{name}_std");
        }
        for (name, _) in DELTAS {
            let _ = write!(out, ",{name}");
        }
        out.push('\n');
        for row in self.aggregate() {
            let value = row.value.map_or(String::new(), |v| v.to_string());
            let _ = write!(
                out,
                "{},{},{},{},{}",
                self.config.name, param, value, row.policy, row.n_seeds
            );
            for (m, s) in &row.stats {
                let _ = write!(out, ",{m},{s}");
            }
            for d in &row.deltas {
                let _ = write!(out, ",{d}");
            }
            out.push('\n');
        }
        out
    }

    /// Writes `aggregate.csv`, one JSON file per run under `runs/`, and with
    /// kept logs, event logs under `events/` and traces under `traces/`.
    pub fn write(&self, dir: &Path) -> Result<(), ScenarioError> {
        let io = |context: String| move |source| ScenarioError::Io { context, source };
        fs::create_dir_all(dir.join("runs")).map_err(io(dir.display().to_string()))?;
        let agg = dir.join("aggregate.csv");
        fs::write(&agg, self.aggregate_csv()).map_err(io(agg.display().to_string()))?;
        for r in &self.records {
            let path = dir.join("runs").join(run_file_stem(r) + ".json");
            let text = serde_json::to_string_pretty(r).expect("records serialize");
            fs::write(&path, text).map_err(io(path.display().to_string()))?;
        }
        if !self.logs.is_empty() {
            fs::create_dir_all(dir.join("events")).map_err(io(dir.display().to_string()))?;
            for (r, log) in self.records.iter().zip(&self.logs) {
                let path = dir.join("events").join(run_file_stem(r) + ".csv");
                let mut buf = Vec::new();
                log.write_csv(&mut buf).map_err(io(path.display().to_string()))?;
                fs::write(&path, buf).map_err(io(path.display().to_string()))?;
            }
        }
        if !self.traces.is_empty() {
            fs::create_dir_all(dir.join("traces")).map_err(io(dir.display().to_string()))?;
            for (g, seed, traces) in &self.traces {
                let path = dir.join("traces").join(format!("g{g}_s{seed}.csv"));
                let mut buf = Vec::new();
                write_traces_csv(traces, &mut buf).map_err(io(path.display().to_string()))?;
                fs::write(&path, buf).map_err(io(path.display().to_string()))?;
            }
        }
        Ok(())
    }
}

fn run_file_stem(r: &RunRecord) -> String {
    format!("g{}_s{}_{}", r.grid_index, r.seed, r.policy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(policies: &str) -> ScenarioConfig {
        ScenarioConfig::from_toml_str(&format!(
            r#"
[scenario]
name = "pair"
horizon = "200s"
seeds = [3, 1, 2]
policies = [{policies}]

[[channel]]
off = "hed(0.9:10, 0.1:0.1)"
duty_cycle = 0.3

[[channel]]
off = "exp(1)"
duty_cycle = 0.3

[sweep]
parameter = "t_pu_allow"
values = ["1000ms", "3000ms"]
"#
        ))
        .unwrap()
    }

    #[test]
    fn statistics() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(paired_delta_pct(&[9.0, 9.0], &[10.0, 10.0]), -10.0);
        assert_eq!(paired_delta_pct(&[0.0], &[0.0]), 0.0);
    }

    #[test]
    fn paired_traces_and_deltas() {
        let cfg = config("\"generalized_predictive\", \"predictive_exponential\"");
        let exp = run_experiment(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(exp.records.len(), 2 * 3 * 2);
        for chunk in exp.records.chunks(2) {
            assert_eq!(chunk[0].trace_hash, chunk[1].trace_hash);
            assert_eq!(chunk[0].seed, chunk[1].seed);
        }
        let seeds: Vec<u64> = exp.records.iter().step_by(2).take(3).map(|r| r.seed).collect();
        assert_eq!(seeds, vec![1, 2, 3]);
        let csv = exp.aggregate_csv();
        let header = csv.lines().next().unwrap();
        assert!(header.contains("delta_switch_rate_pct"));
        assert_eq!(csv.lines().count(), 1 + 2 * 2);
        let first = csv.lines().nth(1).unwrap();
        assert!(first.ends_with(",0,0,0"), "{first}");
    }

    #[test]
    fn independent_of_thread_count() {
        let cfg = config("\"greedy\", \"random\", \"round_robin\"");
        let one = run_experiment(
            &cfg,
            &RunOptions {
                jobs: Some(1),
                ..RunOptions::default()
            },
        )
        .unwrap();
        let four = run_experiment(
            &cfg,
            &RunOptions {
                jobs: Some(4),
                ..RunOptions::default()
            },
        )
        .unwrap();
        assert_eq!(one.aggregate_csv(), four.aggregate_csv());
        assert_eq!(one.records, four.records);
    }

    #[test]
    fn writes_outputs() {
        let cfg = config("\"greedy\"");
        let exp = run_experiment(
            &cfg,
            &RunOptions {
                seed_override: Some(vec![7]),
                keep_logs: true,
                ..RunOptions::default()
            },
        )
        .unwrap();
        let dir = std::env::temp_dir().join(format!("gpcsa-harness-{}", std::process::id()));
        exp.write(&dir).unwrap();
        assert!(dir.join("aggregate.csv").exists());
        assert!(dir.join("runs/g1_s7_greedy.json").exists());
        assert!(dir.join("events/g0_s7_greedy.csv").exists());
        assert!(dir.join("traces/g0_s7.csv").exists());
        fs::remove_dir_all(&dir).unwrap();
    }
}
