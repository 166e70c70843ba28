//! Python bindings for the commlab core crate.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use commlab_core::analysis::gradcheck_suite;
use commlab_core::dru::{self, DruConfig};
use commlab_core::env::{policy_space_exponent_for_horizon, switch_horizon, switch_oracle_exact};
use commlab_core::nn::Checkpoint;
use commlab_core::rng::StreamRng;
use commlab_core::train::parity::toy_parity_demo;
use commlab_core::Error;
use rand::SeedableRng;

/// `(episode, raw_reward, norm_reward, loss, saturation_frac)`.
type CurveRow = (usize, f64, f64, f64, f64);

fn err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::ShapeMismatch { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Run configuration, round-tripped through TOML.
#[pyclass(name = "TrainConfig", from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    inner: commlab_core::train::TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner = commlab_core::train::TrainConfig::from_toml(text).map_err(err)?;
        Ok(PyTrainConfig { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = commlab_core::train::TrainConfig::load(&path).map_err(err)?;
        Ok(PyTrainConfig { inner })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }

    #[getter]
    fn episodes(&self) -> usize {
        self.inner.episodes
    }

    #[setter]
    fn set_episodes(&mut self, v: usize) {
        self.inner.episodes = v;
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }

    #[setter]
    fn set_sigma(&mut self, v: f64) {
        self.inner.sigma = v;
    }

    #[getter]
    fn eval_every(&self) -> usize {
        self.inner.eval_every
    }

    #[setter]
    fn set_eval_every(&mut self, v: usize) {
        self.inner.eval_every = v;
    }

    #[getter]
    fn eval_episodes(&self) -> usize {
        self.inner.eval_episodes
    }

    #[setter]
    fn set_eval_episodes(&mut self, v: usize) {
        self.inner.eval_episodes = v;
    }

    fn __repr__(&self) -> String {
        format!("TrainConfig({}, seed={}, episodes={})", self.inner.label(), self.inner.seed, self.inner.episodes)
    }
}

#[pyclass(name = "Trainer", unsendable)]
struct PyTrainer {
    inner: commlab_core::train::Trainer,
}

#[pymethods]
impl PyTrainer {
    #[new]
    fn new(cfg: PyTrainConfig) -> PyResult<Self> {
        let inner = commlab_core::train::Trainer::new(cfg.inner).map_err(err)?;
        Ok(PyTrainer { inner })
    }

    #[staticmethod]
    fn from_checkpoint(cfg: PyTrainConfig, path: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(&path).map_err(err)?;
        let inner = commlab_core::train::Trainer::from_checkpoint(cfg.inner, &ck).map_err(err)?;
        Ok(PyTrainer { inner })
    }

    /// One optimizer step on a fresh batch.
    fn train_batch<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = self.inner.train_batch().map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("loss", r.loss)?;
        d.set_item("mean_return", r.mean_return)?;
        d.set_item("routed", r.routed)?;
        d.set_item("saturated", r.saturated)?;
        Ok(d)
    }

    /// Trains to the configured budget. Returns the learning curve as a list
    /// of `(episode, raw_reward, norm_reward, loss, saturation_frac)`.
    #[pyo3(signature = (out_dir=None))]
    fn run(&mut self, out_dir: Option<PathBuf>) -> PyResult<Vec<CurveRow>> {
        let curve = self.inner.run(out_dir.as_deref()).map_err(err)?;
        Ok(curve
            .rows
            .iter()
            .map(|r| (r.episode, r.raw_reward, r.norm_reward, r.loss, r.saturation_frac))
            .collect())
    }

    fn evaluate(&self, episodes: usize) -> PyResult<f64> {
        self.inner.evaluate(episodes).map_err(err)
    }

    fn save_checkpoint(&self, path: PathBuf) -> PyResult<()> {
        self.inner.checkpoint().save(&path).map_err(err)
    }

    #[getter]
    fn episodes_done(&self) -> usize {
        self.inner.episodes_done()
    }

    #[getter]
    fn oracle(&self) -> f64 {
        self.inner.oracle()
    }
}

/// Exact expected updates of the two-agent parity toy.
#[pyfunction]
#[pyo3(signature = (seeds=20, master=0))]
fn parity_demo<'py>(py: Python<'py>, seeds: usize, master: u64) -> PyResult<Bound<'py, PyDict>> {
    let r = toy_parity_demo(seeds, master).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("expected_td_update", r.expected_td_update.to_vec())?;
    d.set_item("td_exactly_zero", r.td_is_exactly_zero())?;
    d.set_item("expected_reward_fixed_action", r.expected_reward_fixed_action.to_vec())?;
    d.set_item("all_gradients_nonzero", r.all_gradients_nonzero())?;
    d.set_item("dial_gradient_norms", r.dial_gradient_norms)?;
    Ok(d)
}

/// `(name, max_rel_error, tol, passed)` for every finite-difference check.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn gradcheck(seed: u64) -> PyResult<Vec<(String, f64, f64, bool)>> {
    let entries = gradcheck_suite(seed).map_err(err)?;
    Ok(entries
        .iter()
        .map(|e| (e.name.to_string(), e.report.max_rel_error, e.tol, e.passed()))
        .collect())
}

#[pyfunction]
#[pyo3(signature = (n, horizon=None))]
fn switch_oracle(n: usize, horizon: Option<usize>) -> f64 {
    switch_oracle_exact(n, horizon.unwrap_or_else(|| switch_horizon(n)))
}

/// `(single, team)` exponents of the policy-space size `4^e`.
#[pyfunction]
fn policy_space_exponent(py: Python<'_>, horizon: usize, n: usize) -> PyResult<(Py<PyAny>, Py<PyAny>)> {
    let (single, team) = policy_space_exponent_for_horizon(horizon, n);
    Ok((single.into_pyobject(py)?.into_any().unbind(), team.into_pyobject(py)?.into_any().unbind()))
}

#[pyfunction]
fn channel_density(m_hat: f64, m: f64, sigma: f64) -> PyResult<f64> {
    dru::channel_density(m_hat, m, sigma).map_err(err)
}

#[pyfunction]
fn channel_cdf(m_hat: f64, m: f64, sigma: f64) -> f64 {
    dru::channel_cdf(m_hat, m, sigma)
}

/// Applies the channel to `m`: noisy logistic when `train`, hard threshold
/// otherwise.
#[pyfunction]
#[pyo3(signature = (m, sigma, train=true, seed=0))]
fn channel(m: Vec<f64>, sigma: f64, train: bool, seed: u64) -> PyResult<Vec<f64>> {
    let cfg = if train { DruConfig::train(sigma).map_err(err)? } else { DruConfig::exec() };
    let mut rng = StreamRng::seed_from_u64(seed);
    dru::dru(&m, cfg, &mut rng).map_err(err)
}

/// Reliably separable activations as `(m, m_hat_lo, m_hat_hi)`.
#[pyfunction]
#[pyo3(signature = (sigma, epsilon=0.1, lo=-10.0, hi=10.0))]
fn decodable_levels(sigma: f64, epsilon: f64, lo: f64, hi: f64) -> PyResult<Vec<(f64, f64, f64)>> {
    let d = dru::decodable_levels(sigma, epsilon, lo, hi).map_err(err)?;
    Ok(d.levels.iter().map(|l| (l.m, l.m_hat_lo, l.m_hat_hi)).collect())
}

#[pymodule]
fn commlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(parity_demo, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(switch_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(policy_space_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(channel_density, m)?)?;
    m.add_function(wrap_pyfunction!(channel_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(channel, m)?)?;
    m.add_function(wrap_pyfunction!(decodable_levels, m)?)?;
    Ok(())
}
