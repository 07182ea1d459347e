//! Python bindings: metrics, interval construction, normalization, the
//! model and the experiment harness.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use ctsgan_core::ctsgan::{load_checkpoint, save_checkpoint, CtsganModel, NetworkKind, Stage};
use ctsgan_core::data::MinMax;
use ctsgan_core::harness::{self, ExperimentConfig};
use ctsgan_core::intervals::{self, ScenarioSet, Units};
use ctsgan_core::metrics::{self, PredictionInterval, RunCollection};
use ctsgan_core::nn::NoiseSpec;

create_exception!(ctsgan, CtsganError, PyException);

fn err(e: ctsgan_core::Error) -> PyErr {
    match e {
        ctsgan_core::Error::Config(_) | ctsgan_core::Error::DegenerateRange(_) => PyValueError::new_err(e.to_string()),
        other => CtsganError::new_err(other.to_string()),
    }
}

type Bounds = (Vec<f64>, Vec<f64>);

fn interval(bounds: Bounds) -> PyResult<PredictionInterval> {
    PredictionInterval::new(bounds.0, bounds.1).map_err(err)
}

fn collection(actuals: Vec<f64>, runs: Vec<Bounds>) -> PyResult<RunCollection> {
    let runs = runs.into_iter().map(interval).collect::<PyResult<_>>()?;
    RunCollection::new(actuals, runs).map_err(err)
}

fn bounds(iv: PredictionInterval) -> Bounds {
    (iv.lower().to_vec(), iv.upper().to_vec())
}

/// ECPAS of one interval against the actuals.
#[pyfunction]
fn ecpas(actuals: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> PyResult<f64> {
    metrics::ecpas(&actuals, &interval((lower, upper))?).map_err(err)
}

/// EAWAPI (mean width) of one interval.
#[pyfunction]
fn eawapi(lower: Vec<f64>, upper: Vec<f64>) -> PyResult<f64> {
    metrics::eawapi(&interval((lower, upper))?).map_err(err)
}

/// Fraction of runs whose ECPAS is at least `delta_prime`.
#[pyfunction]
fn confidence_level_ecpas(actuals: Vec<f64>, runs: Vec<Bounds>, delta_prime: f64) -> PyResult<f64> {
    metrics::confidence_level_ecpas(&collection(actuals, runs)?, delta_prime).map_err(err)
}

/// Fraction of runs whose EAWAPI is below `xi_prime`.
#[pyfunction]
fn confidence_level_eawapi(actuals: Vec<f64>, runs: Vec<Bounds>, xi_prime: f64) -> PyResult<f64> {
    metrics::confidence_level_eawapi(&collection(actuals, runs)?, xi_prime).map_err(err)
}

#[pyfunction]
fn ecp_one(actuals: Vec<f64>, runs: Vec<Bounds>, t: usize) -> PyResult<f64> {
    metrics::ecp_one(&collection(actuals, runs)?, t).map_err(err)
}

#[pyfunction]
fn eaw_one(actuals: Vec<f64>, runs: Vec<Bounds>, t: usize) -> PyResult<f64> {
    metrics::eaw_one(&collection(actuals, runs)?, t).map_err(err)
}

/// Full metrics report over the default grids, as JSON text.
#[pyfunction]
fn metrics_report(actuals: Vec<f64>, runs: Vec<Bounds>) -> PyResult<String> {
    let report = metrics::assemble_default_report(&collection(actuals, runs)?).map_err(err)?;
    serde_json::to_string_pretty(&report).map_err(|e| CtsganError::new_err(e.to_string()))
}

fn scenario_set(scenarios: Vec<Vec<f64>>) -> PyResult<ScenarioSet> {
    ScenarioSet::single_pattern(scenarios, 1.0, Units::Original).map_err(err)
}

/// Pointwise min/max over scenarios; returns `(lower, upper)`.
#[pyfunction]
fn envelope(scenarios: Vec<Vec<f64>>) -> PyResult<Bounds> {
    intervals::envelope(&scenario_set(scenarios)?).map(bounds).map_err(err)
}

/// Central `1 - alpha` quantile band over scenarios; returns `(lower, upper)`.
#[pyfunction]
fn quantile_interval(scenarios: Vec<Vec<f64>>, alpha: f64) -> PyResult<Bounds> {
    intervals::quantile_interval(&scenario_set(scenarios)?, alpha).map(bounds).map_err(err)
}

/// Union of per-pattern intervals given as `(sigma, lower, upper)`. Returns,
/// per time step, the disjoint bands as `(lower, upper, patterns)`.
#[pyfunction]
fn multi_union(per_pattern: Vec<(f64, Vec<f64>, Vec<f64>)>) -> PyResult<Vec<Vec<(f64, f64, Vec<f64>)>>> {
    let per_pattern = per_pattern
        .into_iter()
        .map(|(s, lo, hi)| Ok((s, interval((lo, hi))?)))
        .collect::<PyResult<Vec<_>>>()?;
    let multi = intervals::multi_union(&per_pattern).map_err(err)?;
    Ok(multi
        .bands()
        .iter()
        .map(|bands| bands.iter().map(|b| (b.lower, b.upper, b.patterns.clone())).collect())
        .collect())
}

/// Min-max scaling parameters of one channel.
#[pyclass(name = "MinMax", frozen)]
struct PyMinMax(MinMax);

#[pymethods]
impl PyMinMax {
    /// Fits on `values`; raises `ValueError` on a constant series.
    #[staticmethod]
    fn fit(values: Vec<f64>) -> PyResult<Self> {
        MinMax::fit("value", &values).map(PyMinMax).map_err(err)
    }

    #[getter]
    fn min(&self) -> f64 {
        self.0.min
    }

    #[getter]
    fn max(&self) -> f64 {
        self.0.max
    }

    fn normalize(&self, values: Vec<f64>) -> Vec<f64> {
        values.iter().map(|&v| self.0.normalize(v)).collect()
    }

    fn denormalize(&self, values: Vec<f64>) -> Vec<f64> {
        values.iter().map(|&v| self.0.denormalize(v)).collect()
    }

    fn __repr__(&self) -> String {
        format!("MinMax(min={}, max={})", self.0.min, self.0.max)
    }
}

/// A validated experiment configuration.
#[pyclass(name = "ExperimentConfig", frozen)]
struct PyConfig(ExperimentConfig);

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        ExperimentConfig::from_json(text).map(PyConfig).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        ExperimentConfig::load(path).map(PyConfig).map_err(err)
    }

    fn with_seed(&self, seed: u64) -> Self {
        let mut cfg = self.0.clone();
        cfg.seed = seed;
        PyConfig(cfg)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    fn hash(&self) -> PyResult<String> {
        self.0.hash().map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.canonical_json().map_err(err)
    }
}

/// A CTSGAN model trained from a configuration or loaded from a checkpoint.
#[pyclass(name = "Model")]
struct PyModel(CtsganModel);

fn network(kind: &str) -> PyResult<NetworkKind> {
    NetworkKind::ALL
        .into_iter()
        .find(|k| k.name() == kind)
        .ok_or_else(|| PyValueError::new_err(format!("unknown network `{kind}`")))
}

#[pymethods]
impl PyModel {
    /// Prepares the configured data and trains through `until_stage`.
    #[staticmethod]
    #[pyo3(signature = (config, until_stage = 3))]
    fn train(py: Python<'_>, config: &PyConfig, until_stage: u8) -> PyResult<Self> {
        let cfg = &config.0;
        py.detach(|| {
            let until = Stage::try_from(until_stage)?;
            let data = harness::prepare(cfg)?;
            harness::train_model(cfg, &data, until)
        })
        .map(PyModel)
        .map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        load_checkpoint(path).map(PyModel).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(&self.0, path).map_err(err)
    }

    /// Completed stage: 0 (untrained) to 3.
    #[getter]
    fn stage(&self) -> u8 {
        self.0.stage() as u8
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.0.num_params()
    }

    /// Parameter checksum of one network (`embedder`, `recovery`,
    /// `generator` or `discriminator`).
    fn checksum(&self, network_name: &str) -> PyResult<String> {
        Ok(self.0.checksum(network(network_name)?))
    }

    /// Scenarios over the configured test horizon, one list per scenario.
    #[pyo3(signature = (config, count, sigma = 1.0, seed = None))]
    fn generate(
        &self,
        py: Python<'_>,
        config: &PyConfig,
        count: usize,
        sigma: f64,
        seed: Option<u64>,
    ) -> PyResult<Vec<Vec<f64>>> {
        let cfg = &config.0;
        let noise = NoiseSpec { mu: cfg.mu, sigma };
        py.detach(|| {
            let data = harness::prepare(cfg)?;
            harness::generate_horizon(&self.0, &data, count, &noise, cfg.units, seed.unwrap_or(cfg.seed))
        })
        .map(|set| set.scenarios().to_vec())
        .map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Model(stage={}, params={})", self.0.stage() as u8, self.0.num_params())
    }
}

/// Runs the full experiment and returns the report as JSON text.
#[pyfunction]
fn run_experiment(py: Python<'_>, config: &PyConfig) -> PyResult<String> {
    let cfg = &config.0;
    py.detach(|| harness::run_experiment(cfg)?.document.to_json()).map_err(err)
}

/// Runs the full experiment and writes all report files into `out`.
#[pyfunction]
fn run_experiment_to(py: Python<'_>, config: &PyConfig, out: &str) -> PyResult<Vec<String>> {
    let cfg = &config.0;
    py.detach(|| {
        let result = harness::run_experiment(cfg)?;
        harness::emit_report(&result, out)
    })
    .map(|paths| paths.iter().map(|p| p.display().to_string()).collect())
    .map_err(err)
}

#[pymodule]
fn ctsgan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CtsganError", m.py().get_type::<CtsganError>())?;
    m.add_function(wrap_pyfunction!(ecpas, m)?)?;
    m.add_function(wrap_pyfunction!(eawapi, m)?)?;
    m.add_function(wrap_pyfunction!(confidence_level_ecpas, m)?)?;
    m.add_function(wrap_pyfunction!(confidence_level_eawapi, m)?)?;
    m.add_function(wrap_pyfunction!(ecp_one, m)?)?;
    m.add_function(wrap_pyfunction!(eaw_one, m)?)?;
    m.add_function(wrap_pyfunction!(metrics_report, m)?)?;
    m.add_function(wrap_pyfunction!(envelope, m)?)?;
    m.add_function(wrap_pyfunction!(quantile_interval, m)?)?;
    m.add_function(wrap_pyfunction!(multi_union, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment_to, m)?)?;
    m.add_class::<PyMinMax>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
