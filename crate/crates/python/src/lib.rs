//! Python bindings: networks, sampling, the recovery procedures and the
//! config-driven experiment runner.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use threshnet::activation::ActivationSpec;
use threshnet::experiment::{parse_config, run_in_memory};
use threshnet::hermite::{self as herm, HermiteIndex};
use threshnet::landscape::{align_and_score, assemble_and_invert, recover_all_one_by_one, LandscapeParams};
use threshnet::network_model::{self as nm, PlantedNetwork, SampleOracle, SamplingMode};
use threshnet::polynomial::SparsePolynomial;
use threshnet::stats_core::RngSeed;
use threshnet::{io, structural};

fn py_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn index(k: usize) -> PyResult<HermiteIndex> {
    HermiteIndex::new(k).map_err(py_err)
}

/// A planted network `f(x) = P(u_t(w_1.x), ..., u_t(w_d.x))`.
#[pyclass(module = "threshnet_py", skip_from_py_object)]
#[derive(Clone)]
struct Network {
    inner: PlantedNetwork,
}

#[pymethods]
impl Network {
    /// Orthonormal rows, sign units, `P = sum X_i + pair_coeff sum_{i<j} X_i X_j`.
    #[staticmethod]
    #[pyo3(signature = (n, d, t, pair_coeff = 0.0, seed = 0))]
    fn orthonormal(n: usize, d: usize, t: f64, pair_coeff: f64, seed: u64) -> PyResult<Self> {
        let poly = if pair_coeff == 0.0 { SparsePolynomial::linear(d) } else { SparsePolynomial::linear_plus_pairs(d, pair_coeff) };
        let act = ActivationSpec::sign(t).map_err(py_err)?;
        let inner = PlantedNetwork::orthonormal(n, d, act, poly, RngSeed(seed)).map_err(py_err)?;
        Ok(Network { inner })
    }

    /// Builds the network described by the `[network]` table of an experiment config.
    #[staticmethod]
    fn from_config(text: &str) -> PyResult<Self> {
        let cfg = parse_config(text).map_err(py_err)?.config;
        Ok(Network { inner: cfg.build_network().map_err(py_err)? })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Network { inner: io::network_from_text(text).map_err(py_err)? })
    }

    fn to_text(&self) -> String {
        io::network_to_text(&self.inner)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn t(&self) -> f64 {
        self.inner.activation().t
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.rows()
    }

    fn eval(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.eval(&x).map_err(py_err)
    }

    /// Draws `count` labelled samples.
    #[pyo3(signature = (count, seed = 0, noise_std = 0.0))]
    fn sample(&self, count: usize, seed: u64, noise_std: f64) -> PyResult<Dataset> {
        let o = SampleOracle::new(self.inner.clone()).with_noise(noise_std).map_err(py_err)?;
        Ok(Dataset { inner: o.sample_batch(&SamplingMode::Plain, count, RngSeed(seed)).map_err(py_err)? })
    }

    fn __repr__(&self) -> String {
        format!("Network(n={}, d={}, t={})", self.inner.n(), self.inner.d(), self.inner.activation().t)
    }
}

/// Labelled samples `(x_j, y_j)`.
#[pyclass(module = "threshnet_py", skip_from_py_object)]
#[derive(Clone)]
struct Dataset {
    inner: nm::Dataset,
}

#[pymethods]
impl Dataset {
    #[new]
    #[pyo3(signature = (xs, ys, seed = 0))]
    fn new(xs: Vec<Vec<f64>>, ys: Vec<f64>, seed: u64) -> PyResult<Self> {
        let n = xs.first().map_or(0, |r| r.len());
        if xs.iter().any(|r| r.len() != n) {
            return Err(PyValueError::new_err("rows of xs differ in length"));
        }
        Ok(Dataset { inner: nm::Dataset::new(n, xs.concat(), ys, seed).map_err(py_err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Dataset { inner: io::load_dataset(path.as_ref()).map_err(py_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::save_dataset(path.as_ref(), &self.inner).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    fn x(&self, j: usize) -> PyResult<Vec<f64>> {
        if j >= self.inner.len() {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.inner.x(j).to_vec())
    }

    fn labels(&self) -> Vec<f64> {
        (0..self.inner.len()).map(|j| self.inner.label(j)).collect()
    }
}

/// Normalized Hermite values `h_0(x), ..., h_kmax(x)`.
#[pyfunction]
fn hermite(kmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; kmax + 1];
    herm::h_all(kmax, x, &mut out);
    out
}

/// `E[h_m(x) h_n(gamma x)]`.
#[pyfunction]
fn cross_coeff(n: usize, m: usize, gamma: f64) -> PyResult<f64> {
    Ok(herm::cross_coeff(index(n)?, index(m)?, gamma))
}

#[pyfunction]
#[pyo3(signature = (d, eta, c = 2.0))]
fn sign_threshold(d: usize, eta: f64, c: f64) -> PyResult<f64> {
    nm::choose_threshold(threshnet::activation::ActivationKind::SignThreshold, d, eta, c).map_err(py_err)
}

/// One-by-one landscape recovery of `d` directions for sign units at threshold `t`.
/// Returns the estimated rows (inverted when the layer is square).
#[pyfunction]
#[pyo3(signature = (data, d, t, lambda_multiplier = 2.0, seed = 0))]
fn recover_one_by_one(data: &Dataset, d: usize, t: f64, lambda_multiplier: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let act = ActivationSpec::sign(t).map_err(py_err)?;
    let p = LandscapeParams::for_activation(&act, lambda_multiplier).map_err(py_err)?;
    let rec = recover_all_one_by_one(&data.inner, &p, d, RngSeed(seed)).map_err(py_err)?;
    if data.inner.n == d {
        assemble_and_invert(&rec.candidates).map_err(py_err)
    } else {
        Ok(rec.candidates)
    }
}

/// Per-row angles in degrees after optimal matching.
#[pyfunction]
fn match_angles(estimate: Vec<Vec<f64>>, truth: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(align_and_score(&estimate, &truth).map_err(py_err)?.angles_deg)
}

/// Supports read off the thresholded pair-correlation graph.
#[pyfunction]
fn correlation_supports(data: &Dataset, rho_g: f64) -> PyResult<Vec<Vec<usize>>> {
    let values = structural::pairwise_correlations(&data.inner).map_err(py_err)?;
    let graph = structural::build_graph(&values, rho_g).map_err(py_err)?;
    Ok(structural::extract_cliques(&graph).map_err(py_err)?.sets().to_vec())
}

/// Runs an experiment config in memory and returns the report as JSON.
#[pyfunction]
fn run_config(text: &str) -> PyResult<String> {
    let cfg = parse_config(text).map_err(py_err)?.config;
    let (report, _) = run_in_memory(&cfg).map_err(py_err)?;
    Ok(report.to_json())
}

#[pymodule]
pub fn threshnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Network>()?;
    m.add_class::<Dataset>()?;
    m.add_function(wrap_pyfunction!(hermite, m)?)?;
    m.add_function(wrap_pyfunction!(cross_coeff, m)?)?;
    m.add_function(wrap_pyfunction!(sign_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(recover_one_by_one, m)?)?;
    m.add_function(wrap_pyfunction!(match_angles, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_supports, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
