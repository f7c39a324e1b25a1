//! Python bindings for the `capred` library.

use capred::capacity::{blahut_arimoto as ba, optimize_capacity as optimize, OptimizerSettings};
use capred::definite::{decompose as decompose_map, definite_set, is_ergodic, KERNEL_TOL};
use capred::parse::{parse_map, parse_shape};
use capred::reduction::{entropy_inequality_run, reduce_capacity as reduce, tensor_with_identity};
use capred::report::round_json;
use capred::PtpuMap;
use nalgebra::DMatrix;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

fn to_py(err: capred::Error) -> PyErr {
    if err.is_numerical() {
        PyArithmeticError::new_err(err.to_string())
    } else {
        PyValueError::new_err(err.to_string())
    }
}

fn dump(mut v: serde_json::Value) -> String {
    round_json(&mut v);
    v.to_string()
}

fn settings(restarts: usize, max_iter: usize, tol: f64, seed: u64) -> OptimizerSettings {
    OptimizerSettings { restarts, max_iter, tol, seed }
}

/// A positive unital trace-preserving map.
#[pyclass(name = "Map", frozen)]
struct Map {
    inner: PtpuMap,
}

#[pymethods]
impl Map {
    /// Parse a map description (`"pinch:[3]"`, `"tensor(id:[2],depol:[2])"`, or a JSON file path).
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        Ok(Map { inner: parse_map(spec).map_err(to_py)? })
    }

    /// Build a map from its Map JSON text.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Map { inner: PtpuMap::from_json(&v).map_err(to_py)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json().to_string()
    }

    #[getter]
    fn source(&self) -> Vec<usize> {
        self.inner.source().blocks().to_vec()
    }

    #[getter]
    fn target(&self) -> Vec<usize> {
        self.inner.target().blocks().to_vec()
    }

    #[getter]
    fn certificate(&self) -> &'static str {
        self.inner.certificate().as_str()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    /// Superoperator matrix in the hermitian basis, row by row.
    fn matrix(&self) -> Vec<Vec<f64>> {
        let m = self.inner.matrix();
        (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
    }

    fn definite_dim(&self) -> PyResult<usize> {
        Ok(definite_set(&self.inner, KERNEL_TOL).map_err(to_py)?.dim())
    }

    fn is_ergodic(&self) -> PyResult<bool> {
        is_ergodic(&self.inner).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Map('{}', {} -> {})", self.inner.name(), self.inner.source(), self.inner.target())
    }
}

/// Multi-restart ensemble ascent; returns the capacity result as JSON.
#[pyfunction]
#[pyo3(signature = (map, restarts=16, max_iter=2000, tol=1e-7, seed=42))]
fn optimize_capacity(py: Python<'_>, map: &Map, restarts: usize, max_iter: usize, tol: f64, seed: u64) -> PyResult<String> {
    let s = settings(restarts, max_iter, tol, seed);
    let r = py.detach(|| optimize(&map.inner, &s)).map_err(to_py)?;
    Ok(dump(r.to_json(1.0)))
}

/// Capacity through the ergodic corners; returns the reduction tree as JSON.
#[pyfunction]
#[pyo3(signature = (map, restarts=16, max_iter=2000, tol=1e-7, seed=42))]
fn reduce_capacity(py: Python<'_>, map: &Map, restarts: usize, max_iter: usize, tol: f64, seed: u64) -> PyResult<String> {
    let s = settings(restarts, max_iter, tol, seed);
    let t = py.detach(|| reduce(&map.inner, &s)).map_err(to_py)?;
    Ok(dump(t.to_json(1.0)))
}

/// Classical channel capacity of a doubly stochastic matrix (columns are inputs).
#[pyfunction]
#[pyo3(signature = (matrix, tol=1e-10))]
fn blahut_arimoto(matrix: Vec<Vec<f64>>, tol: f64) -> PyResult<String> {
    let n = matrix.len();
    if n == 0 || matrix.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix must be square and nonempty"));
    }
    let t = DMatrix::from_fn(n, n, |i, j| matrix[i][j]);
    Ok(dump(ba(&t, tol).map_err(to_py)?.to_json(1.0)))
}

/// Definite set and partition summary as JSON.
#[pyfunction]
#[pyo3(signature = (map, seed=42))]
fn decompose(map: &Map, seed: u64) -> PyResult<String> {
    Ok(dump(decompose_map(&map.inner, seed).map_err(to_py)?.to_json()))
}

/// Entropy inequality run on random states and rotated partitions; returns
/// `(max_equality_error, min_slack)`.
#[pyfunction]
#[pyo3(signature = (shape, samples=1000, seed=42))]
fn verify_entropy_inequality(shape: &str, samples: usize, seed: u64) -> PyResult<(f64, f64)> {
    let shape = parse_shape(shape).map_err(to_py)?;
    let (s, _) = entropy_inequality_run(&shape, samples, seed).map_err(to_py)?;
    Ok((s.max_equality_error, s.min_slack))
}

/// `Φ ⊗ id_N` report as JSON.
#[pyfunction]
#[pyo3(signature = (map, shape, restarts=16, seed=42))]
fn tensor_id(py: Python<'_>, map: &Map, shape: &str, restarts: usize, seed: u64) -> PyResult<String> {
    let n = parse_shape(shape).map_err(to_py)?;
    let s = OptimizerSettings { restarts, seed, ..OptimizerSettings::default() };
    let r = py.detach(|| tensor_with_identity(&map.inner, &n, &s)).map_err(to_py)?;
    Ok(dump(r.to_json(1.0)))
}

#[pymodule]
#[pyo3(name = "capred")]
fn capred_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}

/// Add the classes and functions to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Map>()?;
    m.add_function(wrap_pyfunction!(optimize_capacity, m)?)?;
    m.add_function(wrap_pyfunction!(reduce_capacity, m)?)?;
    m.add_function(wrap_pyfunction!(blahut_arimoto, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(verify_entropy_inequality, m)?)?;
    m.add_function(wrap_pyfunction!(tensor_id, m)?)?;
    Ok(())
}
