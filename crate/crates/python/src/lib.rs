//! Python bindings. Structured results come back as plain dicts and lists.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use stablab::experiment::{self, ExperimentConfig};
use stablab::lab::hit_time_distribution;
use stablab::problems::{certify_constants, LeastSquaresLoss, LogisticLoss, SigmoidLoss};
use stablab::rules::StepSizeSchedule;
use stablab::sgm::{index_sequence, run_sgm, RunConfig, SamplingScheme};
use stablab::{Dataset, Error, Example, ExampleSet, Loss as CoreLoss, ParamVector};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(msgs) => PyValueError::new_err(msgs.join("; ")),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_dict<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn scheme(name: &str) -> PyResult<SamplingScheme> {
    match name {
        "uniform" => Ok(SamplingScheme::Uniform),
        "permutation" => Ok(SamplingScheme::Permutation),
        _ => Err(PyValueError::new_err(format!("unknown scheme `{name}`"))),
    }
}

fn example(x: Vec<f64>, y: f64) -> PyResult<Example> {
    Example::new(x, y).map_err(to_py)
}

fn params(w: Vec<f64>) -> PyResult<ParamVector> {
    ParamVector::new(w).map_err(to_py)
}

/// A convex or non-convex per-example loss with certified constants.
#[pyclass(frozen)]
struct Loss {
    inner: Arc<dyn CoreLoss>,
    radius: Option<f64>,
}

#[pymethods]
impl Loss {
    #[staticmethod]
    #[pyo3(signature = (feature_bound, ridge = 0.0, radius = None))]
    fn logistic(feature_bound: f64, ridge: f64, radius: Option<f64>) -> Self {
        Self {
            inner: Arc::new(LogisticLoss::new(feature_bound, ridge, radius)),
            radius,
        }
    }

    #[staticmethod]
    #[pyo3(signature = (feature_bound, label_bound, radius, ridge = 0.0))]
    fn least_squares(feature_bound: f64, label_bound: f64, radius: f64, ridge: f64) -> Self {
        Self {
            inner: Arc::new(LeastSquaresLoss::new(feature_bound, label_bound, ridge, radius)),
            radius: Some(radius),
        }
    }

    #[staticmethod]
    fn sigmoid(feature_bound: f64) -> Self {
        Self {
            inner: Arc::new(SigmoidLoss::new(feature_bound)),
            radius: None,
        }
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    fn value(&self, w: Vec<f64>, x: Vec<f64>, y: f64) -> PyResult<f64> {
        Ok(self.inner.value(&params(w)?, &example(x, y)?))
    }

    fn gradient(&self, w: Vec<f64>, x: Vec<f64>, y: f64) -> PyResult<Vec<f64>> {
        Ok(self.inner.gradient(&params(w)?, &example(x, y)?).as_slice().to_vec())
    }

    /// Lipschitz, smoothness, strong convexity and range constants.
    fn constants<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let c = certify_constants(self.inner.as_ref(), self.radius, false).map_err(to_py)?;
        to_dict(py, &c)
    }

    /// Runs SGM with a constant step on the rows of `xs` and returns the
    /// final iterate.
    #[pyo3(signature = (xs, ys, steps, alpha, seed = 0, scheme_name = "uniform"))]
    fn train(&self, xs: Vec<Vec<f64>>, ys: Vec<f64>, steps: usize, alpha: f64, seed: u64, scheme_name: &str) -> PyResult<Vec<f64>> {
        if xs.len() != ys.len() {
            return Err(PyValueError::new_err("xs and ys differ in length"));
        }
        let bound = xs
            .iter()
            .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let examples = xs.into_iter().zip(ys).map(|(x, y)| example(x, y)).collect::<PyResult<Vec<_>>>()?;
        let data = Dataset::new(examples, bound).map_err(to_py)?;
        let dim = self.inner.param_dim(data.feature_dim());
        let cfg = RunConfig::new(steps, StepSizeSchedule::Constant { alpha }, scheme(scheme_name)?, seed);
        let traj = run_sgm(self.inner.as_ref(), &data, &cfg, &ParamVector::zeros(dim)).map_err(to_py)?;
        Ok(traj.final_w.as_slice().to_vec())
    }
}

#[pyfunction]
#[pyo3(signature = (seed, n, steps, scheme_name = "uniform", fixed_permutation = false))]
fn indices(seed: u64, n: usize, steps: usize, scheme_name: &str, fixed_permutation: bool) -> PyResult<Vec<usize>> {
    index_sequence(seed, scheme(scheme_name)?, n, steps, fixed_permutation).map_err(to_py)
}

/// `cdf[t0]` estimates the probability that the substituted index is first
/// touched within `t0` steps.
#[pyfunction]
#[pyo3(signature = (n, steps, trials, seed = 0, scheme_name = "uniform"))]
fn hit_time_cdf(n: usize, steps: usize, trials: usize, seed: u64, scheme_name: &str) -> PyResult<Vec<f64>> {
    Ok(hit_time_distribution(scheme(scheme_name)?, n, steps, trials, seed, false).map_err(to_py)?.cdf)
}

#[pyfunction]
#[pyo3(signature = (name, **inputs))]
fn bound<'py>(py: Python<'py>, name: &str, inputs: Option<&Bound<'py, PyDict>>) -> PyResult<Bound<'py, PyAny>> {
    let inputs: BTreeMap<String, f64> = match inputs {
        Some(d) => d.extract()?,
        None => BTreeMap::new(),
    };
    to_dict(py, &stablab::bounds::evaluate(name, &inputs).map_err(to_py)?)
}

fn load(path: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> PyResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(&path).map_err(to_py)?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    if let Some(dir) = out {
        cfg.output.dir = dir;
    }
    Ok(cfg)
}

#[pyfunction]
#[pyo3(signature = (config, seed = None, out = None))]
fn run<'py>(py: Python<'py>, config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = load(config, seed, out)?;
    let res = py.detach(|| experiment::run(&cfg)).map_err(to_py)?;
    to_dict(py, &res.summary)
}

#[pyfunction]
#[pyo3(signature = (config, seed = None, out = None))]
fn sweep<'py>(py: Python<'py>, config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = load(config, seed, out)?;
    let res = py.detach(|| experiment::sweep(&cfg)).map_err(to_py)?;
    to_dict(py, &res.summary)
}

#[pyfunction]
#[pyo3(signature = (config, seed = None, out = None))]
fn risk<'py>(py: Python<'py>, config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = load(config, seed, out)?;
    let res = py.detach(|| experiment::risk(&cfg)).map_err(to_py)?;
    to_dict(py, &res.summary)
}

#[pyfunction]
#[pyo3(signature = (filter = None, seed = 0))]
fn props<'py>(py: Python<'py>, filter: Option<String>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let report = py
        .detach(|| experiment::run_properties(filter.as_deref(), None, seed))
        .map_err(to_py)?;
    to_dict(py, &report)
}

#[pymodule]
fn stablab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Loss>()?;
    m.add_function(wrap_pyfunction!(indices, m)?)?;
    m.add_function(wrap_pyfunction!(hit_time_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(bound, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(risk, m)?)?;
    m.add_function(wrap_pyfunction!(props, m)?)?;
    Ok(())
}
