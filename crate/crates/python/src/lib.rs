//! Python bindings for `saddle_core`.
//!
//! Results with nested structure (traces, constants, spectral reports) are
//! returned as plain dicts built from their JSON form.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use saddle_core::objectives::{self as obj, MatrixFactorization, QuadraticForm, QuarticSaddle};
use saddle_core::optimizers::{self as opt, Method, PagdInputs, RunConstants, RunOptions, Variant};
use saddle_core::problem::{self, BlockPartition};
use saddle_core::spectral;
use saddle_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Numerical { .. } | Error::Io(_) | Error::Csv(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(DMatrix::from_row_iterator(n, m, rows.into_iter().flatten()))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn method(name: &str) -> PyResult<Method> {
    match name {
        "agd" => Ok(Method::Agd),
        "pagd" => Ok(Method::Pagd),
        "app" => Ok(Method::App),
        "papp" => Ok(Method::Papp),
        _ => Err(PyValueError::new_err(format!("unknown method {name:?}"))),
    }
}

/// A two-block objective. Build one with `quadratic`, `quartic` or `matfac`.
#[pyclass(frozen)]
struct Objective {
    inner: Box<dyn problem::Objective>,
}

#[pymethods]
impl Objective {
    /// `f(x) = x'Ax` with blocks `x[:split]` and `x[split:]`.
    #[staticmethod]
    fn quadratic(a: Vec<Vec<f64>>, split: usize) -> PyResult<Self> {
        let q = QuadraticForm::new(matrix(a)?, split).map_err(py_err)?;
        Ok(Self { inner: Box::new(q) })
    }

    /// `f(x) = x'Ax + sum(x^4) / 4`. `tau` is the squared radius of the analysed ball.
    #[staticmethod]
    #[pyo3(signature = (a, split, tau=None))]
    fn quartic(a: Vec<Vec<f64>>, split: usize, tau: Option<f64>) -> PyResult<Self> {
        let a = matrix(a)?;
        let q = match tau {
            Some(t) => QuarticSaddle::new(a, t, split),
            None => QuarticSaddle::with_default_tau(a, split),
        }
        .map_err(py_err)?;
        Ok(Self { inner: Box::new(q) })
    }

    /// `||Z - XY||_F^2` with `X` of size `m x rank` and `Y` of size `rank x d`.
    #[staticmethod]
    fn matfac(z: Vec<Vec<f64>>, rank: usize, radius: f64) -> PyResult<Self> {
        let m = MatrixFactorization::new(matrix(z)?, rank, radius).map_err(py_err)?;
        Ok(Self { inner: Box::new(m) })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn split(&self) -> usize {
        self.inner.partition().split_index()
    }

    fn value(&self, x: Vec<f64>) -> PyResult<f64> {
        Ok(self.inner.value(&self.point(x)?))
    }

    fn gradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.gradient(&self.point(x)?).as_slice().to_vec())
    }

    fn hessian(&self, x: Vec<f64>) -> PyResult<Option<Vec<Vec<f64>>>> {
        Ok(self.inner.hessian(&self.point(x)?).map(|h| rows(&h)))
    }

    /// Lipschitz constants as a dict with keys `l`, `l_block`, `l_cross`, `rho`.
    fn constants<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.constants())
    }

    /// Run one driver from `x0` and return the full trace as a dict.
    #[pyo3(signature = (method, x0, step, r, g_th, f_th, t_th, budget, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn run<'py>(
        &self,
        py: Python<'py>,
        method: &str,
        x0: Vec<f64>,
        step: f64,
        r: f64,
        g_th: f64,
        f_th: f64,
        t_th: u64,
        budget: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let c = RunConstants { step, r, g_th, f_th, t_th };
        let opts = RunOptions::new(self::method(method)?, c, budget, seed);
        let x0 = self.point(x0)?;
        let tr = py.detach(|| opt::run(self.inner.as_ref(), &x0, &opts)).map_err(py_err)?;
        to_py(py, &tr)
    }
}

impl Objective {
    fn point(&self, x: Vec<f64>) -> PyResult<DVector<f64>> {
        if x.len() != self.inner.dim() {
            return Err(PyValueError::new_err(format!(
                "expected a point of length {}, got {}",
                self.inner.dim(),
                x.len()
            )));
        }
        Ok(DVector::from_vec(x))
    }
}

/// Derived step sizes, radius and thresholds for `pagd` or `papp`.
#[pyfunction]
#[pyo3(signature = (variant, dim, l_max, l, rho, epsilon, delta, delta_f, c))]
#[allow(clippy::too_many_arguments)]
fn derive_constants<'py>(
    py: Python<'py>,
    variant: &str,
    dim: usize,
    l_max: f64,
    l: f64,
    rho: f64,
    epsilon: f64,
    delta: f64,
    delta_f: f64,
    c: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let v = match variant {
        "pagd" => Variant::Pagd,
        "papp" => Variant::Papp,
        _ => return Err(PyValueError::new_err(format!("unknown variant {variant:?}"))),
    };
    let inputs = PagdInputs { l_max, l, rho, epsilon, delta, delta_f, c };
    to_py(py, &opt::derive_constants(&inputs, dim, v).map_err(py_err)?)
}

/// Check the leading-eigenvalue bound of the alternating-gradient operator.
#[pyfunction]
fn verify_escape_lemma<'py>(
    py: Python<'py>,
    h: Vec<Vec<f64>>,
    split: usize,
    eta: f64,
    gamma: f64,
    l: f64,
    l_max: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let h = matrix(h)?;
    let p = BlockPartition::new(h.nrows(), split).map_err(py_err)?;
    to_py(py, &spectral::verify_escape_lemma(&h, &p, eta, gamma, l, l_max).map_err(py_err)?)
}

/// Check the smallest positive eigenvalue bound of the proximal operator.
#[pyfunction]
fn verify_prox_corollary<'py>(
    py: Python<'py>,
    h: Vec<Vec<f64>>,
    split: usize,
    eta: f64,
    gamma: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let h = matrix(h)?;
    let p = BlockPartition::new(h.nrows(), split).map_err(py_err)?;
    to_py(py, &spectral::verify_prox_corollary(&h, &p, eta, gamma).map_err(py_err)?)
}

#[pyfunction]
fn sample_uniform_ball(d: usize, r: f64, seed: u64) -> PyResult<Vec<f64>> {
    let mut rng = problem::seeded_rng(seed, 0);
    Ok(problem::sample_uniform_ball(&mut rng, d, r).map_err(py_err)?.as_slice().to_vec())
}

/// `U D U'` with Gaussian diagonal `D` and Haar-orthogonal `U`.
#[pyfunction]
fn random_saddle_matrix(d: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let mut rng = problem::seeded_rng(seed, 0);
    Ok(rows(&obj::random_saddle_matrix(&mut rng, d).map_err(py_err)?))
}

#[pymodule]
fn saddle_escape(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Objective>()?;
    m.add_function(wrap_pyfunction!(derive_constants, m)?)?;
    m.add_function(wrap_pyfunction!(verify_escape_lemma, m)?)?;
    m.add_function(wrap_pyfunction!(verify_prox_corollary, m)?)?;
    m.add_function(wrap_pyfunction!(sample_uniform_ball, m)?)?;
    m.add_function(wrap_pyfunction!(random_saddle_matrix, m)?)?;
    Ok(())
}
