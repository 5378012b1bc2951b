//! Python bindings. Matrices cross the boundary as lists of rows.

use acca::align::{project_row_feasible as project_row, round_to_permutation as round_perm, AlignmentMatrix};
use acca::{AccaError, DatasetPair, GenConfig, Matrix};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(err: AccaError) -> PyErr {
    match err {
        AccaError::Parameter(_) | AccaError::Contract(_) => PyValueError::new_err(err.to_string()),
        AccaError::Io { .. } | AccaError::Parse { .. } => PyOSError::new_err(err.to_string()),
        AccaError::Numerical { .. } => PyRuntimeError::new_err(err.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>, what: &str) -> PyResult<Matrix> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(PyValueError::new_err(format!("{what} is empty")));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(PyValueError::new_err(format!(
            "{what} row {i} has {} entries, expected {ncols}",
            rows[i].len()
        )));
    }
    Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Hyperparameters of the alternating solver.
#[pyclass(name = "HyperParams")]
struct PyHyperParams {
    inner: acca::HyperParams,
}

#[pymethods]
impl PyHyperParams {
    #[new]
    #[pyo3(signature = (d=7, gamma1=1e-4, gamma2=1e-4, lam=0.1, max_iters=100, loss_threshold=1e-8, seed=0))]
    fn new(d: usize, gamma1: f64, gamma2: f64, lam: f64, max_iters: usize, loss_threshold: f64, seed: u64) -> Self {
        Self {
            inner: acca::HyperParams {
                d,
                gamma1,
                gamma2,
                lambda: lam,
                outer_max_iters: max_iters,
                loss_threshold,
                seed,
                ..acca::HyperParams::default()
            },
        }
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d
    }

    #[getter]
    fn gamma1(&self) -> f64 {
        self.inner.gamma1
    }

    #[getter]
    fn gamma2(&self) -> f64 {
        self.inner.gamma2
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn max_iters(&self) -> usize {
        self.inner.outer_max_iters
    }

    fn __repr__(&self) -> String {
        let h = &self.inner;
        format!(
            "HyperParams(d={}, gamma1={}, gamma2={}, lam={}, max_iters={}, loss_threshold={}, seed={})",
            h.d, h.gamma1, h.gamma2, h.lambda, h.outer_max_iters, h.loss_threshold, h.seed
        )
    }
}

#[pyclass(name = "FitResult", get_all)]
struct PyFitResult {
    alignment: Vec<Vec<f64>>,
    initial_alignment: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    s: Vec<Vec<f64>>,
    loss_trace: Vec<f64>,
    iterations: usize,
    stop_reason: String,
    mean_row_entropy: f64,
}

#[pymethods]
impl PyFitResult {
    fn __repr__(&self) -> String {
        format!(
            "FitResult(iterations={}, stop_reason={:?}, final_loss={})",
            self.iterations,
            self.stop_reason,
            self.loss_trace.last().copied().unwrap_or(f64::NAN)
        )
    }
}

/// Draws a synthetic instance; returns a dict with `x`, `y` and `p_true`.
#[pyfunction]
#[pyo3(signature = (n=20, dbar=2, dx=15, dy=10, seed=0, noise=0.0))]
fn generate(
    py: Python<'_>,
    n: usize,
    dbar: usize,
    dx: usize,
    dy: usize,
    seed: u64,
    noise: f64,
) -> PyResult<Bound<'_, PyDict>> {
    let inst = acca::generate(&GenConfig {
        n,
        dbar,
        dx,
        dy,
        seed,
        noise,
    })
    .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("x", rows(&inst.data.x))?;
    out.set_item("y", rows(&inst.data.y))?;
    out.set_item("p_true", rows(&inst.p_true))?;
    Ok(out)
}

/// Initializes the alignment and runs the alternating solver. Views are
/// centered on the way in.
#[pyfunction]
#[pyo3(signature = (x, y, params=None))]
fn fit(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, params: Option<PyRef<'_, PyHyperParams>>) -> PyResult<PyFitResult> {
    let hp = params.map_or_else(acca::HyperParams::default, |p| p.inner);
    let data = DatasetPair::centered(matrix(x, "x")?, matrix(y, "y")?).map_err(to_py)?;
    let p0 =
        acca::initialize_alignment(&data, hp.gamma1, hp.gamma2, hp.lambda, hp.rank_rtol, &hp.init).map_err(to_py)?;
    let fit = acca::fit_acca(&data, &hp, &p0).map_err(to_py)?;
    Ok(PyFitResult {
        alignment: rows(fit.alignment.matrix()),
        initial_alignment: rows(p0.matrix()),
        u: rows(&fit.model.u),
        v: rows(&fit.model.v),
        s: rows(&fit.model.s),
        mean_row_entropy: fit.alignment.mean_row_entropy(),
        loss_trace: fit.loss_trace,
        iterations: fit.iterations_run,
        stop_reason: format!("{:?}", fit.stop_reason).to_lowercase(),
    })
}

/// Closed-form CCA of already aligned views; returns a dict with `u`, `v`, `s`.
#[pyfunction]
#[pyo3(signature = (x, y, d, rank_rtol=1e-10))]
fn classical_cca(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    d: usize,
    rank_rtol: f64,
) -> PyResult<Bound<'_, PyDict>> {
    let data = DatasetPair::centered(matrix(x, "x")?, matrix(y, "y")?).map_err(to_py)?;
    let model = acca::classical_cca(&data, d, rank_rtol).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("u", rows(&model.u))?;
    out.set_item("v", rows(&model.v))?;
    out.set_item("s", rows(&model.s))?;
    Ok(out)
}

#[pyfunction]
fn topk_accuracy(p: Vec<Vec<f64>>, p_true: Vec<Vec<f64>>, k: usize) -> PyResult<f64> {
    acca::topk_accuracy(&matrix(p, "p")?, &matrix(p_true, "p_true")?, k).map_err(to_py)
}

/// Shannon entropy in nats of a probability vector.
#[pyfunction]
fn row_entropy(p: Vec<f64>) -> PyResult<f64> {
    acca::row_entropy(&p).map_err(to_py)
}

/// Projects `v` onto the simplex and sharpens it to entropy at most `lam`.
#[pyfunction]
fn project_row_feasible(v: Vec<f64>, lam: f64) -> PyResult<Vec<f64>> {
    project_row(&v, lam).map_err(to_py)
}

#[pyfunction]
fn round_to_permutation(p: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let p = AlignmentMatrix::unchecked(matrix(p, "p")?).map_err(to_py)?;
    Ok(rows(&round_perm(&p)))
}

/// Monte Carlo top-k evaluation; replicate r uses seed + r.
#[pyfunction]
#[pyo3(signature = (params=None, replicates=10, k=vec![1, 2, 3, 4, 5], n=20, dbar=2, dx=15, dy=10, seed=0, noise=0.0))]
#[allow(clippy::too_many_arguments)]
fn monte_carlo<'py>(
    py: Python<'py>,
    params: Option<PyRef<'_, PyHyperParams>>,
    replicates: usize,
    k: Vec<usize>,
    n: usize,
    dbar: usize,
    dx: usize,
    dy: usize,
    seed: u64,
    noise: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let hp = params.map_or_else(acca::HyperParams::default, |p| p.inner);
    let config = GenConfig {
        n,
        dbar,
        dx,
        dy,
        seed,
        noise,
    };
    let report = py
        .detach(|| acca::monte_carlo(&hp, &config, replicates, &k))
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("k", report.topk.k_values)?;
    out.set_item("mean", report.topk.accuracy_mean)?;
    out.set_item("std", report.topk.accuracy_std)?;
    out.set_item("baseline", report.topk.baseline)?;
    out.set_item("initial_mean", report.initial_topk.accuracy_mean)?;
    out.set_item("loss_mean", report.loss_mean)?;
    out.set_item("mean_row_entropy", report.mean_row_entropy)?;
    out.set_item("failures", report.failures)?;
    Ok(out)
}

#[pymodule]
fn acca_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHyperParams>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(classical_cca, m)?)?;
    m.add_function(wrap_pyfunction!(topk_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(row_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(project_row_feasible, m)?)?;
    m.add_function(wrap_pyfunction!(round_to_permutation, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo, m)?)?;
    Ok(())
}
