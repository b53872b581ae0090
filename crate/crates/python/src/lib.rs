//! Python bindings. Logits are nested lists (`K` rows of `C` floats), and an
//! objective is either a Python callable taking a list of `K` category
//! indices or a flat lookup table of `C^K` floats in lexicographic order.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use catgrad::bench::{self, BenchConfig};
use catgrad::dist::{softmax_probs, CategoricalParams};
use catgrad::estimators::{EstimatorOutput, Objective};
use catgrad::oracle;
use catgrad::registry::EstimatorId;
use catgrad::rng::{stream, StreamRng};
use catgrad::toy::LookupObjective;

fn err(e: catgrad::Error) -> PyErr {
    match e {
        catgrad::Error::Io(_) | catgrad::Error::Csv(_) | catgrad::Error::Json(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn params(logits: Vec<Vec<f64>>) -> PyResult<CategoricalParams> {
    CategoricalParams::from_rows(&logits).map_err(err)
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// A Python callable used as an objective. Exceptions and non-float
/// results become NaN and are reported after the estimate.
struct PyObjective {
    f: Py<PyAny>,
    failure: std::sync::Mutex<Option<PyErr>>,
}

impl Objective for PyObjective {
    fn eval(&self, z: &[usize]) -> f64 {
        Python::attach(|py| match self.f.call1(py, (z.to_vec(),)).and_then(|v| v.extract::<f64>(py)) {
            Ok(v) => v,
            Err(e) => {
                self.failure.lock().expect("lock").get_or_insert(e);
                f64::NAN
            }
        })
    }
}

enum AnyObjective {
    Table(LookupObjective),
    Callable(PyObjective),
}

impl AnyObjective {
    fn new(f: &Bound<'_, PyAny>, dims: usize, categories: usize) -> PyResult<Self> {
        if f.is_callable() {
            return Ok(Self::Callable(PyObjective { f: f.clone().unbind(), failure: Default::default() }));
        }
        let table: Vec<f64> = f.extract()?;
        Ok(Self::Table(LookupObjective::dense(dims, categories, table).map_err(err)?))
    }

    fn as_dyn(&self) -> &dyn Objective {
        match self {
            Self::Table(t) => t,
            Self::Callable(c) => c,
        }
    }

    fn raise(&self) -> PyResult<()> {
        if let Self::Callable(c) = self {
            if let Some(e) = c.failure.lock().expect("lock").take() {
                return Err(e);
            }
        }
        Ok(())
    }
}

fn output_dict<'py>(py: Python<'py>, out: &EstimatorOutput) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("grad", rows(&out.grad.cat))?;
    d.set_item("f_evals", out.f_evals)?;
    d.set_item("values", out.values.clone())?;
    d.set_item("samples", out.samples.clone())?;
    Ok(d)
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A gradient estimator with its own random stream.
#[pyclass(module = "pycatgrad")]
struct Estimator {
    id: EstimatorId,
    rng: StreamRng,
}

#[pymethods]
impl Estimator {
    #[new]
    #[pyo3(signature = (name, seed = 0))]
    fn new(name: &str, seed: u64) -> PyResult<Self> {
        let id: EstimatorId = name.parse().map_err(err)?;
        Ok(Self { id, rng: stream(seed, "python", &id.to_string(), 0) })
    }

    #[getter]
    fn name(&self) -> String {
        self.id.to_string()
    }

    /// Upper bound on distinct objective evaluations per estimate.
    fn max_f_evals(&self, categories: usize) -> usize {
        self.id.max_f_evals(categories)
    }

    /// One estimate of the gradient of `E_q[f]` with respect to `logits`.
    fn estimate<'py>(
        &mut self,
        py: Python<'py>,
        logits: Vec<Vec<f64>>,
        f: &Bound<'py, PyAny>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let p = params(logits)?;
        let obj = AnyObjective::new(f, p.dims(), p.categories())?;
        let out = self.id.estimate(&p, obj.as_dyn(), &mut self.rng).map_err(err)?;
        obj.raise()?;
        output_dict(py, &out)
    }

    /// Exact expectation of this estimator, by enumerating its randomness.
    fn exact_expectation(&self, logits: Vec<Vec<f64>>, f: &Bound<'_, PyAny>) -> PyResult<Vec<Vec<f64>>> {
        let p = params(logits)?;
        let obj = AnyObjective::new(f, p.dims(), p.categories())?;
        let g = oracle::exact_estimator_expectation(self.id, &p, obj.as_dyn()).map_err(err)?;
        obj.raise()?;
        Ok(rows(&g.cat))
    }

    fn __repr__(&self) -> String {
        format!("Estimator({:?})", self.id.to_string())
    }
}

#[pyfunction]
fn estimator_names() -> Vec<String> {
    let mut names: Vec<String> = EstimatorId::replay_defaults().iter().map(|id| id.to_string()).collect();
    names.extend(["reinforce", "disarm-sb-desc", "disarm-sb-default"].map(String::from));
    names
}

#[pyfunction]
fn softmax(logits: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(softmax_probs(&params(logits)?).probs()))
}

/// `E_q[f]` by enumeration.
#[pyfunction]
fn exact_objective(logits: Vec<Vec<f64>>, f: &Bound<'_, PyAny>) -> PyResult<f64> {
    let p = params(logits)?;
    let obj = AnyObjective::new(f, p.dims(), p.categories())?;
    let v = oracle::exact_objective(&softmax_probs(&p), obj.as_dyn()).map_err(err)?;
    obj.raise()?;
    Ok(v)
}

/// `∇ E_q[f]` with respect to the logits, by enumeration.
#[pyfunction]
fn exact_grad(logits: Vec<Vec<f64>>, f: &Bound<'_, PyAny>) -> PyResult<Vec<Vec<f64>>> {
    let p = params(logits)?;
    let obj = AnyObjective::new(f, p.dims(), p.categories())?;
    let g = oracle::exact_objective_grad(&p, obj.as_dyn()).map_err(err)?;
    obj.raise()?;
    Ok(rows(&g.cat))
}

fn config(toml: Option<&str>) -> PyResult<BenchConfig> {
    match toml {
        Some(text) => BenchConfig::from_toml(text).map_err(err),
        None => Ok(BenchConfig::default()),
    }
}

/// Train with each configured estimator; returns the summary.
#[pyfunction]
#[pyo3(signature = (out_dir, config_toml = None))]
fn train<'py>(py: Python<'py>, out_dir: PathBuf, config_toml: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let c = config(config_toml)?;
    let report = py.detach(|| bench::train(&c, &out_dir)).map_err(err)?;
    json_to_py(py, &report)
}

#[pyfunction]
#[pyo3(signature = (out_dir, config_toml = None))]
fn variance_replay<'py>(py: Python<'py>, out_dir: PathBuf, config_toml: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let c = config(config_toml)?;
    let report = py.detach(|| bench::variance_replay(&c, &out_dir)).map_err(err)?;
    json_to_py(py, &report)
}

#[pyfunction]
#[pyo3(signature = (out_dir, config_toml = None))]
fn verify<'py>(py: Python<'py>, out_dir: PathBuf, config_toml: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let c = config(config_toml)?;
    let report = py.detach(|| bench::verify(&c, &out_dir)).map_err(err)?;
    json_to_py(py, &report)
}

#[pymodule]
fn pycatgrad(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Estimator>()?;
    m.add_function(wrap_pyfunction!(estimator_names, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(exact_objective, m)?)?;
    m.add_function(wrap_pyfunction!(exact_grad, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(variance_replay, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
