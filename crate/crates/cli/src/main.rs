use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use gpcsa::dist::OnOffModel;
use gpcsa::fitting::{fit_hed_em_restarts, EmOptions, FitError, HedFit, IdleTimeSample};
use gpcsa::harness::{run_experiment, RunOptions};
use gpcsa::idleprob::IdleProbTable;
use gpcsa::scenario::ScenarioConfig;
use gpcsa::traffic::write_traces_csv;
use gpcsa::validation::{self, ValidationOptions};

#[derive(Parser)]
#[command(name = "gpcsa", version, about = "Predictive channel selection for cognitive radio: runs, checks and fits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every policy, seed and grid point of a scenario file.
    Run {
        config: PathBuf,
        /// Comma-separated seeds replacing the configured ones.
        #[arg(long, value_delimiter = ',')]
        seed_override: Option<Vec<u64>>,
        /// Directory for the generated PU traces (one CSV per grid point and seed).
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// Worker threads; defaults to all cores.
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory; defaults to the configured one, else `results/<name>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-run event logs.
        #[arg(long)]
        events: bool,
    },
    /// Closed forms against the Monte Carlo oracle, plus the structural checks.
    Validate {
        /// 10^5 oracle trials instead of 10^6.
        #[arg(long)]
        quick: bool,
        /// Corrupt one root of one model's table.
        #[arg(long)]
        inject_fault: bool,
        /// Write the oracle comparison CSV here instead of stdout.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Fit a hyper-exponential law to idle times (one value in seconds per line).
    Fit {
        samples: PathBuf,
        #[arg(long)]
        phases: usize,
        /// Extra seeded EM starts besides the deterministic one.
        #[arg(long, default_value_t = 8)]
        restarts: u64,
        /// Write the CCDF table here instead of stdout.
        #[arg(long)]
        ccdf: Option<PathBuf>,
    },
    /// Idle probabilities of a model, e.g. "exp(2) / hed(0.9:10, 0.1:0.1)".
    Probe {
        model: String,
        /// Comma-separated elapsed times in seconds; defaults to 10 log-spaced
        /// points over 0.01 to 100 mean cycles.
        #[arg(long, value_delimiter = ',')]
        dt_grid: Option<Vec<f64>>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            seed_override,
            trace_out,
            jobs,
            out,
            events,
        } => run(&config, seed_override, trace_out.as_deref(), jobs, out, events),
        Command::Validate {
            quick,
            inject_fault,
            table,
            seed,
        } => validate(quick, inject_fault, table.as_deref(), seed),
        Command::Fit {
            samples,
            phases,
            restarts,
            ccdf,
        } => fit(&samples, phases, restarts, ccdf.as_deref()),
        Command::Probe { model, dt_grid } => probe(&model, dt_grid),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(
    config: &Path,
    seed_override: Option<Vec<u64>>,
    trace_out: Option<&Path>,
    jobs: Option<usize>,
    out: Option<PathBuf>,
    events: bool,
) -> Result<bool> {
    let cfg = ScenarioConfig::load(config)?;
    let opts = RunOptions {
        jobs,
        seed_override,
        keep_logs: events || trace_out.is_some(),
    };
    let mut exp = run_experiment(&cfg, &opts)?;
    let out = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| Path::new("results").join(&cfg.name));
    if let Some(dir) = trace_out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (g, seed, traces) in &exp.traces {
            let path = dir.join(format!("g{g}_s{seed}.csv"));
            let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            write_traces_csv(traces, io::BufWriter::new(file)).with_context(|| format!("writing {}", path.display()))?;
        }
        exp.traces.clear();
    }
    if !events {
        exp.logs.clear();
    }
    exp.write(&out)?;
    println!(
        "{}: {} runs over {} grid point(s) x {} seed(s), results in {}",
        exp.config.name,
        exp.records.len(),
        exp.grid_len(),
        exp.config.seeds.len(),
        out.display()
    );
    Ok(true)
}

fn validate(quick: bool, inject_fault: bool, table: Option<&Path>, seed: u64) -> Result<bool> {
    let mut opts = if quick {
        ValidationOptions::quick()
    } else {
        ValidationOptions::default()
    };
    opts.inject_fault = inject_fault;
    opts.seed = seed;

    let (rows, checks) = validation::run_all(&opts);
    let mut csv = String::from(validation::ORACLE_CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv += &r.csv();
        csv.push('\n');
    }
    match table {
        Some(path) => fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }

    for c in &checks {
        println!("{}", c.line());
    }
    let ok = validation::all_passed(&checks);
    if !ok {
        let failed: Vec<&str> = checks
            .iter()
            .filter(|c| !c.passed && !c.informational)
            .map(|c| c.name.as_str())
            .collect();
        eprintln!("failing: {}", failed.join("; "));
    }
    Ok(ok)
}

fn fit(samples: &Path, phases: usize, restarts: u64, ccdf: Option<&Path>) -> Result<bool> {
    let sample = IdleTimeSample::load(samples)?;
    let seeds: Vec<u64> = (1..=restarts).collect();
    let (fit, converged): (HedFit, bool) = match fit_hed_em_restarts(&sample, phases, &EmOptions::default(), &seeds) {
        Ok(f) => (f, true),
        Err(FitError::NonConvergence(f)) => (*f, false),
        Err(e) => return Err(e.into()),
    };
    if !converged {
        eprintln!("warning: EM stopped after {} iterations without converging", fit.iterations);
    }
    if fit.degenerate {
        eprintln!("warning: phases collapsed or merged; the fit has {} phase(s)", fit.hed.n_phases());
    }
    println!("{}", fit.distribution());
    let mut csv = String::from("t,empirical_ccdf,model_ccdf\n");
    for r in &fit.ccdf {
        csv += &format!("{},{},{}\n", r.t, r.empirical, r.model);
    }
    match ccdf {
        Some(path) => fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?,
        None => {
            println!();
            print!("{csv}");
        }
    }
    io::stdout().flush()?;
    Ok(converged)
}

fn probe(model: &str, dt_grid: Option<Vec<f64>>) -> Result<bool> {
    let model: OnOffModel = model.parse().with_context(|| format!("parsing model `{model}`"))?;
    let table = IdleProbTable::build(&model)?;
    let cycle = model.mean_cycle();
    let grid = dt_grid.unwrap_or_else(|| validation::log_grid(0.01 * cycle, 100.0 * cycle, 10));
    if let Some(bad) = grid.iter().find(|dt| !(dt.is_finite() && **dt >= 0.0)) {
        bail!("dt values must be finite and non-negative, got {bad}");
    }
    println!("dt,p_off_off,p_on_off,p_on_on");
    for dt in grid {
        println!(
            "{dt},{:.12},{:.12},{:.12}",
            table.p_off_off(dt),
            table.p_on_off(dt),
            table.p_on_on(dt)
        );
    }
    Ok(true)
}
