//! Python module `gpcsa_py`: idle probabilities, oracles, HED fitting,
//! scenario runs and the self-check suite.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gpcsa::dist::OnOffModel;
use gpcsa::fitting::{fit_hed_em_restarts, EmOptions, FitError, IdleTimeSample};
use gpcsa::harness::{run_experiment, Experiment, RunOptions};
use gpcsa::idleprob::{self, IdleProbTable};
use gpcsa::macsim::{MacParams, MS};
use gpcsa::scenario::ScenarioConfig;
use gpcsa::validation::{self, ValidationOptions};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Exponential ON law with exponential or hyper-exponential OFF law.
#[pyclass(name = "OnOffModel", module = "gpcsa_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyOnOffModel {
    inner: OnOffModel,
}

#[pymethods]
impl PyOnOffModel {
    /// Parses `"exp(2) / hed(0.9:10, 0.1:0.1)"`.
    #[new]
    fn new(literal: &str) -> PyResult<Self> {
        literal.parse().map(|inner| Self { inner }).map_err(value_err)
    }

    /// Keeps the OFF law and sets the ON mean for the given duty cycle.
    #[staticmethod]
    fn with_duty_cycle(off: &str, duty_cycle: f64) -> PyResult<Self> {
        let off = off.parse().map_err(value_err)?;
        OnOffModel::with_duty_cycle(off, duty_cycle)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    #[getter]
    fn mean_on(&self) -> f64 {
        self.inner.mean_on()
    }

    #[getter]
    fn mean_off(&self) -> f64 {
        self.inner.mean_off()
    }

    #[getter]
    fn duty_cycle(&self) -> f64 {
        self.inner.duty_cycle()
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("OnOffModel('{}')", self.inner)
    }
}

/// Closed-form idle probabilities for one model.
#[pyclass(name = "IdleProbTable", module = "gpcsa_py", frozen)]
struct PyIdleProbTable {
    inner: IdleProbTable,
}

#[pymethods]
impl PyIdleProbTable {
    #[new]
    fn new(model: &PyOnOffModel) -> PyResult<Self> {
        IdleProbTable::build(&model.inner)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    #[getter]
    fn roots(&self) -> Vec<f64> {
        self.inner.roots().to_vec()
    }

    fn p_off_off(&self, dt: f64) -> f64 {
        self.inner.p_off_off(dt)
    }

    fn p_on_on(&self, dt: f64) -> f64 {
        self.inner.p_on_on(dt)
    }

    fn p_on_off(&self, dt: f64) -> f64 {
        self.inner.p_on_off(dt)
    }

    fn stationary_idle(&self) -> f64 {
        self.inner.stationary_idle()
    }
}

/// Monte Carlo estimate of `P_OFF,OFF(dt)` (or `P_ON,ON` with `on=True`);
/// returns `(probability, standard_error)`.
#[pyfunction]
#[pyo3(signature = (model, dt, trials = 100_000, seed = 0, on = false))]
fn oracle(py: Python<'_>, model: &PyOnOffModel, dt: f64, trials: u64, seed: u64, on: bool) -> (f64, f64) {
    let m = model.inner.clone();
    py.detach(move || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let est = if on {
            idleprob::oracle_p_on_on(&m, dt, trials, &mut rng)
        } else {
            idleprob::oracle_p_off_off(&m, dt, trials, &mut rng)
        };
        (est.probability, est.standard_error)
    })
}

/// EM fit of a hyper-exponential law. Returns `(literal, log_likelihood,
/// converged)`.
#[pyfunction]
#[pyo3(signature = (values, phases, restarts = 8))]
fn fit_hed(py: Python<'_>, values: Vec<f64>, phases: usize, restarts: u64) -> PyResult<(String, f64, bool)> {
    let sample = IdleTimeSample::new(values, "python").map_err(value_err)?;
    let seeds: Vec<u64> = (1..=restarts).collect();
    let result = py.detach(|| fit_hed_em_restarts(&sample, phases, &EmOptions::default(), &seeds));
    match result {
        Ok(f) => Ok((f.distribution().to_string(), f.final_log_likelihood(), true)),
        Err(FitError::NonConvergence(f)) => Ok((f.distribution().to_string(), f.final_log_likelihood(), false)),
        Err(e) => Err(value_err(e)),
    }
}

/// Number of frames per transmission interval and minimum repeat time (ms)
/// for the test-bed MAC timings with `n_channels` channels.
#[pyfunction]
#[pyo3(signature = (n_channels, t_pu_allow_ms = 1000))]
fn testbed_mac(n_channels: usize, t_pu_allow_ms: u64) -> (u64, f64, u64) {
    let mut p = MacParams::testbed(n_channels);
    p.t_pu_allow = t_pu_allow_ms * MS;
    let rep = p.min_repeat_time();
    (p.n_frames(), rep.duration_ns as f64 / MS as f64, rep.repetitions)
}

/// Scenario file contents, validated.
#[pyclass(name = "Scenario", module = "gpcsa_py", frozen)]
struct PyScenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        ScenarioConfig::from_toml_str(text)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ScenarioConfig::load(&path)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }

    #[pyo3(signature = (jobs = None, seeds = None))]
    fn run(&self, py: Python<'_>, jobs: Option<usize>, seeds: Option<Vec<u64>>) -> PyResult<PyExperiment> {
        let opts = RunOptions {
            jobs,
            seed_override: seeds,
            keep_logs: false,
        };
        py.detach(|| run_experiment(&self.inner, &opts))
            .map(|inner| PyExperiment { inner })
            .map_err(value_err)
    }
}

#[pyclass(name = "Experiment", module = "gpcsa_py", frozen)]
struct PyExperiment {
    inner: Experiment,
}

#[pymethods]
impl PyExperiment {
    fn aggregate_csv(&self) -> String {
        self.inner.aggregate_csv()
    }

    /// Per-run records as a JSON array.
    fn records_json(&self) -> String {
        serde_json::to_string(&self.inner.records).expect("records serialize")
    }

    fn write(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.write(&dir).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn __len__(&self) -> usize {
        self.inner.records.len()
    }
}

/// Runs the self-check suite; returns `(name, passed, detail, informational)`
/// tuples.
#[pyfunction]
#[pyo3(signature = (quick = true, seed = 2024))]
fn validate(py: Python<'_>, quick: bool, seed: u64) -> Vec<(String, bool, String, bool)> {
    let mut opts = if quick {
        ValidationOptions::quick()
    } else {
        ValidationOptions::default()
    };
    opts.seed = seed;
    let (_, checks) = py.detach(|| validation::run_all(&opts));
    checks
        .into_iter()
        .map(|c| (c.name, c.passed, c.detail, c.informational))
        .collect()
}

#[pymodule]
fn gpcsa_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyOnOffModel>()?;
    m.add_class::<PyIdleProbTable>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyExperiment>()?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    m.add_function(wrap_pyfunction!(fit_hed, m)?)?;
    m.add_function(wrap_pyfunction!(testbed_mac, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}
