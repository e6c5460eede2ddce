//! Python bindings: configuration, forward solves and both reconstruction paths.

use coupled_source::bench;
use coupled_source::config::{parse_config, RunConfig};
use coupled_source::optimize;
use coupled_source::{cli, Error};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::Expression(_) | Error::InvalidArgument(_) | Error::DimensionMismatch(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Run configuration, parsed from the INI-style text the CLI reads.
#[pyclass(name = "RunConfig", module = "coupled_source", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    /// Parses `text`; the built-in 1D benchmark when omitted.
    #[new]
    #[pyo3(signature = (text = None))]
    fn new(text: Option<&str>) -> PyResult<Self> {
        let inner = match text {
            Some(t) => parse_config(t).map_err(py_err)?,
            None => RunConfig::default(),
        };
        Ok(PyRunConfig { inner })
    }

    /// The 2D unit-square setting with the sine-product source.
    #[staticmethod]
    fn square() -> Self {
        PyRunConfig { inner: bench::base_2d() }
    }

    fn emit(&self) -> String {
        self.inner.emit()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.domain.dim
    }

    #[getter]
    fn k(&self) -> f64 {
        self.inner.optimizer.k
    }

    #[setter]
    fn set_k(&mut self, k: f64) {
        self.inner.optimizer.k = k;
    }

    #[getter]
    fn iters(&self) -> usize {
        self.inner.optimizer.iters
    }

    #[setter]
    fn set_iters(&mut self, n: usize) {
        self.inner.optimizer.iters = n;
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, s: u64) {
        self.inner.seed = s;
    }

    /// Observed components, 1-based.
    #[getter]
    fn observed(&self) -> Vec<usize> {
        self.inner.observation.observed.iter().map(|c| c + 1).collect()
    }

    #[setter]
    fn set_observed(&mut self, comps: Vec<usize>) -> PyResult<()> {
        if comps.is_empty() || comps.iter().any(|&c| c == 0 || c > self.inner.n_comp()) {
            return Err(PyValueError::new_err(format!("components must lie in 1..={}", self.inner.n_comp())));
        }
        self.inner.observation.observed = comps.iter().map(|c| c - 1).collect();
        Ok(())
    }

    /// Node coordinates `[x, y]` (y is 0 in 1D).
    fn nodes(&self) -> PyResult<Vec<[f64; 2]>> {
        Ok(self.inner.mesh().map_err(py_err)?.nodes().to_vec())
    }

    /// Configured source, one nodal list per component.
    fn source(&self) -> PyResult<Vec<Vec<f64>>> {
        let mesh = self.inner.mesh().map_err(py_err)?;
        Ok(self.inner.source_fields(&mesh))
    }

    fn __repr__(&self) -> String {
        let d = &self.inner.domain;
        format!(
            "RunConfig(dim={}, elements={:?}, n={}, k={:e}, iters={})",
            d.dim,
            &d.elements[..d.dim],
            self.inner.n_comp(),
            self.inner.optimizer.k,
            self.inner.optimizer.iters
        )
    }
}

/// Outcome of a descent run against the configured source.
#[pyclass(name = "Inversion", module = "coupled_source", get_all)]
struct PyInversion {
    rel_err: f64,
    per_component: Vec<Option<f64>>,
    source: Vec<Vec<f64>>,
    truth: Vec<Vec<f64>>,
    best_iter: usize,
    objective: Vec<f64>,
    diverged: bool,
}

#[pymethods]
impl PyInversion {
    fn __repr__(&self) -> String {
        format!("Inversion(rel_err={:.4}, best_iter={}, diverged={})", self.rel_err, self.best_iter, self.diverged)
    }
}

/// Forward states indexed `[time][component][node]`.
#[pyfunction]
fn forward(py: Python<'_>, config: PyRunConfig) -> PyResult<Vec<Vec<Vec<f64>>>> {
    py.detach(|| {
        let cfg = &config.inner;
        let problem = optimize::InverseProblem::new(cfg.inverse_problem()?)?;
        let y = problem.forward(&cfg.source_fields(&problem.config().mesh))?;
        Ok((0..y.n_times()).map(|m| (0..y.n_comp()).map(|c| y.comp(m, c).to_vec()).collect()).collect())
    })
    .map_err(py_err)
}

/// Synthesizes observations of the configured source and reconstructs it by
/// adjoint-based descent from zero.
#[pyfunction]
#[pyo3(signature = (config, noise_snr = None))]
fn invert(py: Python<'_>, config: PyRunConfig, noise_snr: Option<f64>) -> PyResult<PyInversion> {
    let inv = py.detach(|| bench::invert(&config.inner, noise_snr)).map_err(py_err)?;
    Ok(PyInversion {
        rel_err: inv.rel_err,
        per_component: inv.per_component,
        objective: inv.result.trace.rows.iter().map(|r| r.j).collect(),
        best_iter: inv.result.best_iter,
        diverged: inv.result.diverged,
        source: inv.result.source,
        truth: inv.truth,
    })
}

/// Relative error per penalty value, `[(k, rel_err), ...]`.
#[pyfunction]
#[pyo3(signature = (config, ks, threads = 1))]
fn sweep(py: Python<'_>, config: PyRunConfig, ks: Vec<f64>, threads: usize) -> PyResult<Vec<(f64, f64)>> {
    py.detach(|| {
        let configs = bench::sweep_configs(&config.inner, &ks);
        bench::parallel_map(&configs, threads, |c| bench::invert(c, None).map(|i| (c.optimizer.k, i.rel_err)))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()
    })
    .map_err(py_err)
}

/// Spectral reconstruction: `{"rel_err", "coverage", "source", "truth", "lambdas"}`.
#[pyfunction]
#[pyo3(signature = (config, noise_snr = None))]
fn spectral<'py>(py: Python<'py>, config: PyRunConfig, noise_snr: Option<f64>) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let run = py.detach(|| bench::spectral(&config.inner, noise_snr)).map_err(py_err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("rel_err", run.result.rel_error)?;
    d.set_item("coverage", run.result.coverage)?;
    d.set_item("source", run.result.source)?;
    d.set_item("truth", run.truth)?;
    d.set_item("lambdas", run.modes.iter().map(|m| m.lambda).collect::<Vec<_>>())?;
    Ok(d)
}

/// Stability ratio of a source pair under the configured forward map.
#[pyfunction]
fn stability_ratio(config: PyRunConfig, f: Vec<Vec<f64>>, f_tilde: Vec<Vec<f64>>) -> PyResult<f64> {
    let problem = optimize::InverseProblem::new(config.inner.inverse_problem().map_err(py_err)?).map_err(py_err)?;
    optimize::stability_ratio(&problem, &f, &f_tilde).map_err(py_err)
}

/// Maximum error of the Volterra solver on its closed-form case per step count.
#[pyfunction]
fn volterra_errors(steps: Vec<usize>) -> PyResult<Vec<(usize, f64)>> {
    cli::volterra_oracle_errors(&steps).map_err(py_err)
}

#[pymodule]
#[pyo3(name = "coupled_source")]
fn py_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyInversion>()?;
    m.add_function(wrap_pyfunction!(forward, m)?)?;
    m.add_function(wrap_pyfunction!(invert, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(spectral, m)?)?;
    m.add_function(wrap_pyfunction!(stability_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(volterra_errors, m)?)?;
    Ok(())
}
