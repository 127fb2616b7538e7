//! Python bindings for `llpp_core`.
//!
//! Errors map to `ValueError` except numeric instability and insufficient
//! Monte Carlo acceptance, which raise `ArithmeticError`.

use llpp_core::active_sim::{self, SimConfig};
use llpp_core::expected_grad::{self, ExpectedGradQuery};
use llpp_core::margin_prob::{self, MarginQuery};
use llpp_core::rank_loss::{self, HingeConfig, Objective};
use llpp_core::{gamma_fit, specfun, Error};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::NumericInstability(_) | Error::InsufficientAcceptance { .. } => {
            PyArithmeticError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Gamma distribution with integer shape `k` and scale `theta`.
#[pyclass(frozen, eq, skip_from_py_object, name = "GammaParams")]
#[derive(Clone, PartialEq)]
struct PyGammaParams(llpp_core::GammaParams);

#[pymethods]
impl PyGammaParams {
    #[new]
    fn new(k: u32, theta: f64) -> PyResult<Self> {
        llpp_core::GammaParams::new(k, theta)
            .map(Self)
            .map_err(to_py)
    }

    #[getter]
    fn k(&self) -> u32 {
        self.0.k()
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.0.theta()
    }

    fn mean(&self) -> f64 {
        self.0.mean()
    }

    fn density(&self, x: f64) -> f64 {
        self.0.density(x)
    }

    fn cdf(&self, x: f64) -> PyResult<f64> {
        specfun::erlang_cdf(x, &self.0).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("GammaParams(k={}, theta={})", self.0.k(), self.0.theta())
    }
}

/// Monte Carlo estimate with its standard error and draw count.
#[pyclass(frozen, get_all, name = "McEstimate")]
struct PyMcEstimate {
    value: f64,
    std_error: f64,
    count: u64,
}

impl From<llpp_core::McEstimate> for PyMcEstimate {
    fn from(m: llpp_core::McEstimate) -> Self {
        Self {
            value: m.value,
            std_error: m.std_error,
            count: m.count,
        }
    }
}

#[pymethods]
impl PyMcEstimate {
    fn __repr__(&self) -> String {
        format!(
            "McEstimate(value={}, std_error={}, count={})",
            self.value, self.std_error, self.count
        )
    }
}

#[pyclass(frozen, get_all, name = "RankGradient")]
struct PyRankGradient {
    grad_w: Vec<f64>,
    grad_theta_i: Vec<f64>,
    grad_theta_j: Vec<f64>,
    loss_value: f64,
}

impl From<rank_loss::RankGradient> for PyRankGradient {
    fn from(g: rank_loss::RankGradient) -> Self {
        Self {
            grad_w: g.grad_w,
            grad_theta_i: g.grad_theta_i,
            grad_theta_j: g.grad_theta_j,
            loss_value: g.loss_value,
        }
    }
}

/// Two examples with true losses, penultimate features and a shared loss-head weight.
#[pyclass(frozen, skip_from_py_object, name = "RankPair")]
#[derive(Clone)]
struct PyRankPair(rank_loss::RankPair);

#[pymethods]
impl PyRankPair {
    #[new]
    fn new(
        l_i: f64,
        l_j: f64,
        theta_i: Vec<f64>,
        theta_j: Vec<f64>,
        w: Vec<f64>,
    ) -> PyResult<Self> {
        rank_loss::RankPair::new(l_i, l_j, theta_i, theta_j, w)
            .map(Self)
            .map_err(to_py)
    }

    fn lhat_i(&self) -> f64 {
        self.0.lhat_i()
    }

    fn lhat_j(&self) -> f64 {
        self.0.lhat_j()
    }

    fn swapped(&self) -> Self {
        Self(self.0.swapped())
    }

    fn hinge_loss(&self, xi: f64) -> PyResult<f64> {
        let cfg = HingeConfig::new(xi).map_err(to_py)?;
        rank_loss::hinge_loss(&self.0, &cfg).map_err(to_py)
    }

    fn hinge_gradient(&self, xi: f64) -> PyResult<PyRankGradient> {
        let cfg = HingeConfig::new(xi).map_err(to_py)?;
        rank_loss::hinge_gradient(&self.0, &cfg)
            .map(Into::into)
            .map_err(to_py)
    }

    fn kl_loss(&self) -> PyResult<f64> {
        rank_loss::kl_loss(&self.0).map_err(to_py)
    }

    fn kl_gradient(&self) -> PyResult<PyRankGradient> {
        rank_loss::kl_gradient(&self.0)
            .map(Into::into)
            .map_err(to_py)
    }

    /// Relative finite-difference error of the analytic gradient.
    /// `objective` is `"kl"` or `"hinge"`.
    #[pyo3(signature = (objective, h=1e-6, xi=0.1))]
    fn finite_difference_check(&self, objective: &str, h: f64, xi: f64) -> PyResult<f64> {
        let obj = match objective {
            "kl" => Objective::Kl,
            "hinge" => Objective::Hinge(HingeConfig::new(xi).map_err(to_py)?),
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown objective {other:?}; expected \"kl\" or \"hinge\""
                )))
            }
        };
        rank_loss::finite_difference_check(&self.0, &obj, h).map_err(to_py)
    }
}

#[pyfunction]
fn erlang_cdf(x: f64, params: &PyGammaParams) -> PyResult<f64> {
    specfun::erlang_cdf(x, &params.0).map_err(to_py)
}

#[pyfunction]
fn gamma_antiderivative(x: f64, params: &PyGammaParams) -> PyResult<f64> {
    specfun::gamma_antiderivative(x, &params.0).map_err(to_py)
}

/// Exponential integral `E1(x)`.
#[pyfunction]
fn exp_integral_e1(x: f64) -> PyResult<f64> {
    specfun::upper_incomplete_gamma_zero(x).map_err(to_py)
}

/// Closed-form `P(|X - Y| <= delta)`; returns the total and its four terms.
#[pyfunction]
fn margin_probability_closed<'py>(
    py: Python<'py>,
    delta: f64,
    params: &PyGammaParams,
) -> PyResult<Bound<'py, PyDict>> {
    let q = MarginQuery::new(delta, params.0).map_err(to_py)?;
    let b = margin_prob::margin_probability_closed(&q).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("total", b.total)?;
    d.set_item("term_a", b.term_a)?;
    d.set_item("term_b", b.term_b)?;
    d.set_item("term_c", b.term_c)?;
    d.set_item("term_d", b.term_d)?;
    Ok(d)
}

#[pyfunction]
fn margin_probability_quad(delta: f64, params: &PyGammaParams) -> PyResult<f64> {
    let q = MarginQuery::new(delta, params.0).map_err(to_py)?;
    margin_prob::margin_probability_quad(&q).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (delta, params, samples=1_000_000, seed=0))]
fn margin_probability_mc(
    py: Python<'_>,
    delta: f64,
    params: &PyGammaParams,
    samples: u64,
    seed: u64,
) -> PyResult<PyMcEstimate> {
    let q = MarginQuery::new(delta, params.0).map_err(to_py)?;
    py.detach(|| margin_prob::margin_probability_mc(&q, samples, seed))
        .map(Into::into)
        .map_err(to_py)
}

/// Closed-form `phi(delta)`; raises `ArithmeticError` when the cancellation guard trips.
#[pyfunction]
fn phi_closed(delta: f64, params: &PyGammaParams) -> PyResult<f64> {
    let q = ExpectedGradQuery::with_default_epsilon(delta, params.0).map_err(to_py)?;
    expected_grad::phi_closed(&q).map(|r| r.phi).map_err(to_py)
}

#[pyfunction]
fn phi_quad(delta: f64, params: &PyGammaParams) -> PyResult<f64> {
    expected_grad::phi_quad(delta, &params.0).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (delta, band_width, params, samples=1_000_000, seed=0))]
fn phi_mc(
    py: Python<'_>,
    delta: f64,
    band_width: f64,
    params: &PyGammaParams,
    samples: u64,
    seed: u64,
) -> PyResult<PyMcEstimate> {
    py.detach(|| expected_grad::phi_mc(delta, band_width, &params.0, samples, seed))
        .map(Into::into)
        .map_err(to_py)
}

#[pyfunction]
fn expected_gradient_vector(
    q_i: f64,
    theta_i: Vec<f64>,
    theta_j: Vec<f64>,
    delta: f64,
    params: &PyGammaParams,
) -> PyResult<Vec<f64>> {
    expected_grad::expected_gradient_vector(q_i, &theta_i, &theta_j, delta, &params.0)
        .map_err(to_py)
}

#[pyfunction]
fn sampling_probs(l_i: f64, l_j: f64) -> (f64, f64) {
    rank_loss::sampling_probs(l_i, l_j)
}

#[pyfunction]
fn softmax_probs(lhat_i: f64, lhat_j: f64) -> (f64, f64) {
    rank_loss::softmax_probs(lhat_i, lhat_j)
}

type CandidateTable = Vec<(u32, f64, f64)>;

/// Integer-shape gamma MLE. Exact zeros are clipped to a small floor first.
/// Returns `(params, log_likelihood, [(k, theta, log_likelihood), ...])`.
#[pyfunction]
#[pyo3(signature = (samples, k_max=32))]
fn fit_integer_gamma(
    samples: Vec<f64>,
    k_max: u32,
) -> PyResult<(PyGammaParams, f64, CandidateTable)> {
    let fit = gamma_fit::fit_integer_gamma(&gamma_fit::clip_zero_losses(&samples), k_max)
        .map_err(to_py)?;
    let table = fit
        .candidates
        .iter()
        .map(|c| (c.k, c.theta, c.log_likelihood))
        .collect();
    Ok((PyGammaParams(fit.params), fit.log_likelihood, table))
}

#[pyfunction]
#[pyo3(signature = (n_gaussians, sigma, count, seed=0))]
fn squared_residual_samples(
    n_gaussians: u32,
    sigma: f64,
    count: usize,
    seed: u64,
) -> PyResult<Vec<f64>> {
    gamma_fit::squared_residual_samples(n_gaussians, sigma, count, seed).map_err(to_py)
}

/// Default simulation config as a dict.
#[pyfunction]
fn default_sim_config(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    let text = serde_json::to_string(&SimConfig::default())
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Runs the active-learning simulation. `config` is a dict with the same keys as
/// the TOML config file; missing keys take their defaults. Returns one dict per
/// (cycle, strategy) record.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn run_simulation<'py>(
    py: Python<'py>,
    config: Option<Bound<'py, PyAny>>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg: SimConfig = match config {
        None => SimConfig::default(),
        Some(obj) => {
            let text: String = py
                .import("json")?
                .call_method1("dumps", (obj,))?
                .extract()?;
            serde_json::from_str(&text)
                .map_err(|e| PyValueError::new_err(format!("invalid config: {e}")))?
        }
    };
    let report = py
        .detach(|| active_sim::run_simulation(&cfg))
        .map_err(to_py)?;
    report
        .records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("cycle", r.cycle)?;
            d.set_item("strategy", r.strategy.as_str())?;
            d.set_item("batch_mean_true_loss", r.batch_mean_true_loss)?;
            d.set_item("batch_std_true_loss", r.batch_std_true_loss)?;
            d.set_item("holdout_mse", r.holdout_mse)?;
            d.set_item("pool_corr", r.pool_corr)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn llpp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGammaParams>()?;
    m.add_class::<PyMcEstimate>()?;
    m.add_class::<PyRankPair>()?;
    m.add_class::<PyRankGradient>()?;
    m.add_function(wrap_pyfunction!(erlang_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_antiderivative, m)?)?;
    m.add_function(wrap_pyfunction!(exp_integral_e1, m)?)?;
    m.add_function(wrap_pyfunction!(margin_probability_closed, m)?)?;
    m.add_function(wrap_pyfunction!(margin_probability_quad, m)?)?;
    m.add_function(wrap_pyfunction!(margin_probability_mc, m)?)?;
    m.add_function(wrap_pyfunction!(phi_closed, m)?)?;
    m.add_function(wrap_pyfunction!(phi_quad, m)?)?;
    m.add_function(wrap_pyfunction!(phi_mc, m)?)?;
    m.add_function(wrap_pyfunction!(expected_gradient_vector, m)?)?;
    m.add_function(wrap_pyfunction!(sampling_probs, m)?)?;
    m.add_function(wrap_pyfunction!(softmax_probs, m)?)?;
    m.add_function(wrap_pyfunction!(fit_integer_gamma, m)?)?;
    m.add_function(wrap_pyfunction!(squared_residual_samples, m)?)?;
    m.add_function(wrap_pyfunction!(default_sim_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_simulation, m)?)?;
    Ok(())
}
