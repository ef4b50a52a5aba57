//! Python bindings: environments, training runs, scoring and the tabular solvers.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use tecrl::env::MdpSpec;
use tecrl::harness::config::RunConfig;
use tecrl::harness::metrics::RunMetrics;
use tecrl::verify::{exact_qe, trajectory_entropy, TabularPolicy};

fn py_err(e: tecrl::Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Runs a verification suite and returns its report as JSON text.
#[pyfunction]
#[pyo3(signature = (suite, seed = 0))]
fn verify(suite: &str, seed: u64) -> PyResult<String> {
    let report = tecrl::verify::run_suite(suite, seed).map_err(py_err)?;
    serde_json::to_string(&report).map_err(json_err)
}

/// Trains from TOML config text. Returns JSON with `metrics` and `score`;
/// output files are written only when `out_dir` is given.
#[pyfunction]
#[pyo3(signature = (config, out_dir = None))]
fn train(py: Python<'_>, config: &str, out_dir: Option<PathBuf>) -> PyResult<String> {
    let cfg = RunConfig::from_toml_str(config).map_err(py_err)?;
    let result = py
        .detach(|| match &out_dir {
            Some(dir) => tecrl::harness::run_training(&cfg, dir, &mut |_| {}),
            None => tecrl::harness::train(&cfg, &mut |_| {}),
        })
        .map_err(py_err)?;
    serde_json::to_string(&serde_json::json!({
        "seed": result.seed,
        "metrics": result.metrics,
        "score": result.score,
        "min_alpha": result.min_alpha,
    }))
    .map_err(json_err)
}

/// Final score from `(iteration, eval_mean_return)` series, one per seed.
/// Returns `(per_seed, mean, std)`.
#[pyfunction]
fn final_score(series: Vec<Vec<(u64, f64)>>, total_iterations: u64) -> PyResult<(Vec<f64>, f64, f64)> {
    let runs: Vec<Vec<RunMetrics>> = series
        .into_iter()
        .map(|s| {
            s.into_iter()
                .map(|(iteration, ret)| RunMetrics {
                    iteration,
                    eval_mean_return: ret,
                    eval_std_return: 0.0,
                    alpha: f64::NAN,
                    cumulative_entropy_estimate: f64::NAN,
                    step_entropy: f64::NAN,
                    pev_loss: f64::NAN,
                    pis_loss: f64::NAN,
                    pim_loss: f64::NAN,
                    tup_loss: f64::NAN,
                })
                .collect()
        })
        .collect();
    let s = tecrl::harness::final_score(&runs, total_iterations).map_err(py_err)?;
    Ok((s.per_seed, s.mean, s.std))
}

/// Exact entropy critic `Q_e[s][a]` and per-state trajectory entropy of a
/// tabular policy. `p` is flattened `[s][a][s']`, `r` is `[s][a]`.
#[pyfunction]
#[pyo3(signature = (p, r, gamma, policy, terminal = None))]
fn tabular_entropy(
    p: Vec<Vec<Vec<f64>>>,
    r: Vec<Vec<f64>>,
    gamma: f64,
    policy: Vec<Vec<f64>>,
    terminal: Option<Vec<bool>>,
) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let ns = p.len();
    let na = p.first().map_or(0, Vec::len);
    let flat_p: Vec<f64> = p.into_iter().flatten().flatten().collect();
    let flat_r: Vec<f64> = r.into_iter().flatten().collect();
    let mdp = MdpSpec::new(ns, na, flat_p, flat_r, gamma, terminal.unwrap_or(vec![false; ns])).map_err(py_err)?;
    let rows = policy.len();
    let flat_pi: Vec<f64> = policy.into_iter().flatten().collect();
    let probs = Array2::from_shape_vec((rows, na), flat_pi).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let pi = TabularPolicy::new(probs).map_err(py_err)?;
    let qe = exact_qe(&mdp, &pi).map_err(py_err)?;
    let table = (0..ns).map(|s| (0..na).map(|a| qe.get(s, a)).collect()).collect();
    let h = trajectory_entropy(&mdp, &pi).map_err(py_err)?;
    Ok((table, h.to_vec()))
}

/// One of the built-in environments.
#[pyclass(unsendable)]
struct Env {
    inner: Box<dyn tecrl::env::Env>,
}

#[pymethods]
impl Env {
    #[new]
    #[pyo3(signature = (name, overrides = None))]
    fn new(name: &str, overrides: Option<BTreeMap<String, f64>>) -> PyResult<Self> {
        let made = tecrl::env::make_env(name, &overrides.unwrap_or_default()).map_err(py_err)?;
        Ok(Self { inner: made.env })
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.spec().state_dim
    }

    #[getter]
    fn action_dim(&self) -> usize {
        self.inner.spec().action_dim
    }

    #[getter]
    fn action_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let s = self.inner.spec();
        (s.action_low.clone(), s.action_high.clone())
    }

    #[getter]
    fn max_episode_steps(&self) -> usize {
        self.inner.spec().max_episode_steps
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.inner.reset(seed)
    }

    /// Returns `(next_state, reward, done, truncated)`.
    fn step(&mut self, action: Vec<f64>) -> PyResult<(Vec<f64>, f64, bool, bool)> {
        let s = self.inner.step(&action).map_err(py_err)?;
        Ok((s.transition.next_state, s.transition.reward, s.transition.done, s.truncated))
    }
}

#[pymodule]
fn tecrl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(final_score, m)?)?;
    m.add_function(wrap_pyfunction!(tabular_entropy, m)?)?;
    m.add_class::<Env>()?;
    Ok(())
}
