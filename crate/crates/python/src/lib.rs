//! Python bindings for the `an2cls` solvers.
//!
//! Vectors cross the boundary as lists of floats and matrices as lists of
//! rows, so the module has no numpy dependency. Anything exposing
//! `__float__` or the sequence protocol (numpy arrays included) is accepted.

use std::sync::Mutex;

use an2cls::bench::{
    emit_outputs, performance_profile, run_matrix, summarize, Budget, CostMetric, SolverKind, SolverSpec,
    STANDARD_SOLVERS,
};
use an2cls::problem::FnObjective;
use an2cls::stepcomp::{self, StepOutcome};
use an2cls::suite::{self, Scale};
use an2cls::SolveResult;
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

pyo3::create_exception!(pyan2cls, SolverError, pyo3::exceptions::PyException);

fn to_py(e: an2cls::Error) -> PyErr {
    match e {
        an2cls::Error::Config(_) | an2cls::Error::Dimension { .. } => PyValueError::new_err(e.to_string()),
        other => SolverError::new_err(other.to_string()),
    }
}

fn vector(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix must be square, given as a list of rows"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// A named objective with a starting point.
#[pyclass(name = "Problem", module = "pyan2cls", frozen)]
struct PyProblem {
    inner: an2cls::Problem,
    /// First exception raised by a Python callback during evaluation.
    callback_error: std::sync::Arc<Mutex<Option<PyErr>>>,
}

impl PyProblem {
    fn take_callback_error(&self) -> PyResult<()> {
        match self.callback_error.lock().expect("callback lock").take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

#[pymethods]
impl PyProblem {
    /// Looks up a bundled problem such as `chained_rosenbrock_10`.
    #[staticmethod]
    fn builtin(name: &str) -> PyResult<Self> {
        let inner = suite::problem_by_name(name).map_err(to_py)?;
        Ok(Self { inner, callback_error: Default::default() })
    }

    /// Wraps Python callables: `f(x) -> float`, `grad(x) -> list`,
    /// `hess(x) -> list of rows`.
    #[staticmethod]
    fn from_callables(name: &str, x0: Vec<f64>, f: Py<PyAny>, grad: Py<PyAny>, hess: Py<PyAny>) -> PyResult<Self> {
        let n = x0.len();
        let err: std::sync::Arc<Mutex<Option<PyErr>>> = Default::default();
        let record = {
            let err = err.clone();
            move |e: PyErr| {
                let mut slot = err.lock().expect("callback lock");
                if slot.is_none() {
                    *slot = Some(e);
                }
            }
        };
        let (rf, rg, rh) = (record.clone(), record.clone(), record);
        let objective = FnObjective::new(
            n,
            move |x: &[f64]| {
                Python::attach(|py| {
                    f.call1(py, (x.to_vec(),)).and_then(|v| v.extract::<f64>(py)).unwrap_or_else(|e| {
                        rf(e);
                        f64::NAN
                    })
                })
            },
            move |x: &[f64], out: &mut [f64]| {
                Python::attach(|py| {
                    let got = grad.call1(py, (x.to_vec(),)).and_then(|v| v.extract::<Vec<f64>>(py));
                    match got {
                        Ok(v) if v.len() == out.len() => out.copy_from_slice(&v),
                        Ok(v) => {
                            rg(PyValueError::new_err(format!(
                                "gradient has length {}, expected {}",
                                v.len(),
                                out.len()
                            )));
                            out.fill(f64::NAN);
                        }
                        Err(e) => {
                            rg(e);
                            out.fill(f64::NAN);
                        }
                    }
                })
            },
            move |x: &[f64], out: &mut DMatrix<f64>| {
                Python::attach(|py| {
                    let got = hess.call1(py, (x.to_vec(),)).and_then(|v| v.extract::<Vec<Vec<f64>>>(py));
                    match got.map_err(Some).and_then(|rows| matrix(rows).map_err(Some)) {
                        Ok(m) if m.nrows() == out.nrows() => out.copy_from(&m),
                        Ok(_) => {
                            rh(PyValueError::new_err("hessian has the wrong shape"));
                            out.fill(f64::NAN);
                        }
                        Err(e) => {
                            if let Some(e) = e {
                                rh(e);
                            }
                            out.fill(f64::NAN);
                        }
                    }
                })
            },
        );
        let inner = an2cls::Problem::new(name, vector(x0), objective).map_err(to_py)?;
        Ok(Self { inner, callback_error: err })
    }

    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn x0(&self) -> Vec<f64> {
        self.inner.initial_point().as_slice().to_vec()
    }

    fn value(&self, x: Vec<f64>) -> PyResult<f64> {
        let v = self.inner.value(&vector(x)).map_err(to_py);
        self.take_callback_error()?;
        v
    }

    fn gradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let g = self.inner.gradient(&vector(x)).map_err(to_py);
        self.take_callback_error()?;
        Ok(g?.as_slice().to_vec())
    }

    fn hessian(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let h = self.inner.hessian(&vector(x)).map_err(to_py);
        self.take_callback_error()?;
        Ok(rows_of(&h?))
    }

    fn hess_vec(&self, x: Vec<f64>, v: Vec<f64>) -> PyResult<Vec<f64>> {
        let hv = self.inner.hess_vec(&vector(x), &vector(v)).map_err(to_py);
        self.take_callback_error()?;
        Ok(hv?.as_slice().to_vec())
    }

    fn __repr__(&self) -> String {
        format!("Problem(name={:?}, dim={})", self.inner.name(), self.inner.dim())
    }
}

/// Solver choice plus settings: `an2cls-e`, `an2cls-k` or `soan2cls`.
#[pyclass(name = "Solver", module = "pyan2cls")]
struct PySolver {
    spec: SolverSpec,
}

fn setting_text(value: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(s) = value.extract::<String>() {
        Ok(s)
    } else {
        Ok(value.str()?.to_string())
    }
}

#[pymethods]
impl PySolver {
    #[new]
    #[pyo3(signature = (name = "an2cls-e", **settings))]
    fn new(name: &str, settings: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut spec = SolverSpec::standard(name).map_err(to_py)?;
        if let Some(settings) = settings {
            for (k, v) in settings.iter() {
                spec.set(&k.extract::<String>()?, &setting_text(&v)?).map_err(to_py)?;
            }
        }
        spec.validate().map_err(to_py)?;
        Ok(Self { spec })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.spec.name
    }

    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        let mut next = self.spec.clone();
        next.set(key, &setting_text(value)?).map_err(to_py)?;
        next.validate().map_err(to_py)?;
        self.spec = next;
        Ok(())
    }

    fn get(&self, key: &str) -> PyResult<String> {
        match &self.spec.kind {
            SolverKind::FirstOrder(c) if key == "eps1" => c.get("eps"),
            SolverKind::FirstOrder(c) => c.get(key),
            SolverKind::SecondOrder(c) => c.get(key),
        }
        .map_err(to_py)
    }

    /// All settings as a `{key: text}` dict.
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let text = match &self.spec.kind {
            SolverKind::FirstOrder(c) => c.to_json(),
            SolverKind::SecondOrder(c) => c.to_json(),
        };
        json_to_py(py, &text)
    }

    fn solve(&self, py: Python<'_>, problem: &PyProblem) -> PyResult<PyResult_> {
        let spec = self.spec.clone();
        let p = problem.inner.clone();
        let res = py.detach(move || spec.run(&p));
        problem.take_callback_error()?;
        Ok(PyResult_ { inner: res.map_err(to_py)? })
    }

    fn __repr__(&self) -> String {
        format!("Solver({:?})", self.spec.name)
    }
}

/// Outcome of a solve.
#[pyclass(name = "SolveResult", module = "pyan2cls", frozen)]
struct PyResult_ {
    inner: SolveResult,
}

#[pymethods]
impl PyResult_ {
    #[getter]
    fn x(&self) -> Vec<f64> {
        self.inner.x.as_slice().to_vec()
    }

    #[getter]
    fn f(&self) -> f64 {
        self.inner.f
    }

    #[getter]
    fn grad_norm(&self) -> f64 {
        self.inner.grad_norm
    }

    #[getter]
    fn status(&self) -> &'static str {
        self.inner.status.as_str()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.status == an2cls::SolveStatus::Converged
    }

    #[getter]
    fn message(&self) -> Option<String> {
        self.inner.message.clone()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations()
    }

    #[getter]
    fn successful_iterations(&self) -> usize {
        self.inner.successful_iterations()
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }

    #[getter]
    fn lambda_min(&self) -> Option<f64> {
        self.inner.lambda_min
    }

    #[getter]
    fn elapsed_seconds(&self) -> f64 {
        self.inner.elapsed_seconds
    }

    /// Evaluation counts keyed `f`, `g`, `h`, `hess_vec`.
    #[getter]
    fn evals<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        let e = self.inner.evals;
        d.set_item("f", e.f)?;
        d.set_item("g", e.g)?;
        d.set_item("h", e.h)?;
        d.set_item("hess_vec", e.hess_vec)?;
        Ok(d)
    }

    /// Per-iteration records as a list of dicts.
    #[getter]
    fn trace<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let text = serde_json::to_string(&self.inner.trace).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        json_to_py(py, &text)
    }

    fn __repr__(&self) -> String {
        format!(
            "SolveResult(status={:?}, iterations={}, f={:e}, grad_norm={:e})",
            self.inner.status.as_str(),
            self.inner.iterations(),
            self.inner.f,
            self.inner.grad_norm
        )
    }
}

/// `(name, dim)` pairs of a bundled suite (`small`, `medium` or `large`).
#[pyfunction]
#[pyo3(signature = (scale = "small"))]
fn list_problems(scale: &str) -> PyResult<Vec<(String, usize)>> {
    let scale: Scale = scale.parse().map_err(to_py)?;
    Ok(suite::builtin_suite(scale).iter().map(|p| (p.name().to_string(), p.dim())).collect())
}

/// Solves with the named solver; keyword arguments override settings.
#[pyfunction]
#[pyo3(signature = (problem, solver = "an2cls-e", **settings))]
fn solve(
    py: Python<'_>,
    problem: &PyProblem,
    solver: &str,
    settings: Option<&Bound<'_, PyDict>>,
) -> PyResult<PyResult_> {
    PySolver::new(solver, settings)?.solve(py, problem)
}

fn outcome_dict<'py>(py: Python<'py>, out: StepOutcome) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("step", out.step.as_slice().to_vec())?;
    d.set_item("mu", out.mu)?;
    d.set_item("kind", out.kind.to_string())?;
    d.set_item("residual_norm", out.residual_norm)?;
    d.set_item("krylov_dim", out.krylov_dim)?;
    d.set_item("model_value", out.model_value)?;
    Ok(d)
}

/// Exact step from a dense Hessian.
#[pyfunction]
#[pyo3(signature = (g, h, sigma, kappa_c = 1e3))]
fn stepcomp_exact<'py>(
    py: Python<'py>,
    g: Vec<f64>,
    h: Vec<Vec<f64>>,
    sigma: f64,
    kappa_c: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let out = stepcomp::stepcomp_exact(&vector(g), &matrix(h)?, sigma, kappa_c).map_err(to_py)?;
    outcome_dict(py, out)
}

/// Lanczos step from a dense Hessian; `max_dim` defaults to the dimension.
#[pyfunction]
#[pyo3(signature = (g, h, sigma, kappa_c = 1e3, kappa_theta = 1.0, theta = 0.5, max_dim = None))]
#[allow(clippy::too_many_arguments)]
fn stepcomp_krylov<'py>(
    py: Python<'py>,
    g: Vec<f64>,
    h: Vec<Vec<f64>>,
    sigma: f64,
    kappa_c: f64,
    kappa_theta: f64,
    theta: f64,
    max_dim: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let n = g.len();
    let h = matrix(h)?;
    let out = stepcomp::stepcomp_krylov(&vector(g), &h, sigma, kappa_c, kappa_theta, theta, max_dim.unwrap_or(n))
        .map_err(to_py)?;
    outcome_dict(py, out)
}

/// Runs solvers over a bundled suite, writes the outputs to `out_dir` and
/// returns the summary dict.
#[pyfunction]
#[pyo3(signature = (out_dir, scale = "small", solvers = None, cost = "iterations", max_iterations = 5000, time_limit_seconds = 3600.0, parallel = false))]
#[allow(clippy::too_many_arguments)]
fn run_benchmark<'py>(
    py: Python<'py>,
    out_dir: std::path::PathBuf,
    scale: &str,
    solvers: Option<Vec<String>>,
    cost: &str,
    max_iterations: usize,
    time_limit_seconds: f64,
    parallel: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let scale: Scale = scale.parse().map_err(to_py)?;
    let metric: CostMetric = cost.parse().map_err(to_py)?;
    let names = solvers.unwrap_or_else(|| STANDARD_SOLVERS.iter().map(|s| s.to_string()).collect());
    let specs = names.iter().map(|n| SolverSpec::standard(n)).collect::<Result<Vec<_>, _>>().map_err(to_py)?;
    let budget = Budget { max_iterations, time_limit_seconds, parallel };
    let summary = py
        .detach(move || -> an2cls::Result<_> {
            let rows = run_matrix(&suite::builtin_suite(scale), &specs, &budget)?;
            let curves = performance_profile(&rows, metric)?;
            emit_outputs(&rows, &curves, metric, &out_dir)?;
            Ok(summarize(&rows, &curves, metric))
        })
        .map_err(to_py)?;
    let text = serde_json::to_string(&summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &text)
}

#[pymodule]
fn pyan2cls(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_class::<PySolver>()?;
    m.add_class::<PyResult_>()?;
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    m.add("SOLVERS", PyList::new(m.py(), STANDARD_SOLVERS)?)?;
    m.add_function(wrap_pyfunction!(list_problems, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(stepcomp_exact, m)?)?;
    m.add_function(wrap_pyfunction!(stepcomp_krylov, m)?)?;
    m.add_function(wrap_pyfunction!(run_benchmark, m)?)?;
    Ok(())
}
