//! Python bindings: `pycsma`.
//!
//! Validation problems raise `ValueError`; solver non-convergence raises
//! `RuntimeError`. Link indices are 0-based.

use csma_aoi::optimizer::{self, OptimizerInputs};
use csma_aoi::sim::{self, Mac, SimScenario};
use csma_aoi::{csma, round_robin, shs, CsmaError, NetworkParams, OptimizeError, ShsError, SimError};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn csma_err(e: CsmaError) -> PyErr {
    value_err(e)
}

fn opt_err(e: OptimizeError) -> PyErr {
    match e {
        OptimizeError::NonConvergence { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => value_err(e),
    }
}

fn sim_err(e: SimError) -> PyErr {
    value_err(e)
}

fn shs_err(e: ShsError) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// A network of interfering links with rates in 1/ms.
#[pyclass(name = "Network", module = "pycsma")]
struct PyNetwork {
    inner: NetworkParams,
}

#[pymethods]
impl PyNetwork {
    #[new]
    fn new(arrival_rates: Vec<f64>, holding_rates: Vec<f64>, backoff_rates: Vec<f64>) -> PyResult<Self> {
        let inner = NetworkParams::from_rates(&arrival_rates, &holding_rates, &backoff_rates).map_err(csma_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn num_links(&self) -> usize {
        self.inner.num_links()
    }

    #[getter]
    fn arrival_rates(&self) -> Vec<f64> {
        self.inner.links.iter().map(|l| l.arrival_rate).collect()
    }

    #[getter]
    fn holding_rates(&self) -> Vec<f64> {
        self.inner.links.iter().map(|l| l.holding_rate).collect()
    }

    #[getter]
    fn backoff_rates(&self) -> Vec<f64> {
        self.inner.links.iter().map(|l| l.backoff_rate).collect()
    }

    /// `1 + sum R_k / H_k`.
    #[getter]
    fn normalization(&self) -> f64 {
        self.inner.normalization()
    }

    /// Copy with the back-off rates replaced.
    fn with_backoff(&self, backoff_rates: Vec<f64>) -> PyResult<Self> {
        let inner = self.inner.with_backoff(&backoff_rates).map_err(csma_err)?;
        Ok(Self { inner })
    }

    fn per_link_ages(&self) -> PyResult<Vec<f64>> {
        Ok(csma::total_age(&self.inner).map_err(csma_err)?.per_link)
    }

    fn total_age(&self) -> PyResult<f64> {
        Ok(csma::total_age(&self.inner).map_err(csma_err)?.total)
    }

    /// Closed-form stationary distribution: idle first, then one entry per link.
    fn stationary(&self) -> PyResult<Vec<f64>> {
        Ok(csma::stationary_closed_form(&self.inner).map_err(csma_err)?.probs)
    }

    /// Age of `link` from the numeric hybrid-system solver.
    fn shs_age(&self, link: usize) -> PyResult<f64> {
        let model = csma::build_shs_for_link(&self.inner, link).map_err(csma_err)?;
        let (_, v) = model.solve().map_err(shs_err)?;
        shs::average_age(&v, 0).map_err(shs_err)
    }

    /// Stationary distribution from the numeric solver.
    fn shs_stationary(&self) -> PyResult<Vec<f64>> {
        let model = csma::build_shs_for_link(&self.inner, 0).map_err(csma_err)?;
        Ok(shs::stationary_distribution(&model).map_err(shs_err)?.probs)
    }

    /// Round Robin ages; back-off rates are ignored.
    fn round_robin_ages(&self) -> PyResult<Vec<f64>> {
        round_robin::per_link_ages(&self.inner).map_err(csma_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Network(arrival_rates={:?}, holding_rates={:?}, backoff_rates={:?})",
            self.arrival_rates(),
            self.holding_rates(),
            self.backoff_rates()
        )
    }
}

#[pyfunction]
fn r_upper_bound(w0: u32, t_slot: f64) -> PyResult<f64> {
    optimizer::r_upper_bound(w0, t_slot).map_err(opt_err)
}

/// Age-optimal back-off rates. `r_ub` defaults to the cap implied by `w0`
/// and `t_slot`; `arrival_rates` default to 1 for the reported age.
#[pyfunction]
#[pyo3(signature = (holding_rates, r_ub=None, w0=16, t_slot=0.009, arrival_rates=None))]
fn optimize<'py>(
    py: Python<'py>,
    holding_rates: Vec<f64>,
    r_ub: Option<f64>,
    w0: u32,
    t_slot: f64,
    arrival_rates: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let r_ub = match r_ub {
        Some(r) => r,
        None => optimizer::r_upper_bound(w0, t_slot).map_err(opt_err)?,
    };
    let n = holding_rates.len();
    let inputs = OptimizerInputs::new(holding_rates, r_ub).map_err(opt_err)?;
    let lambdas = arrival_rates.unwrap_or_else(|| vec![1.0; n]);
    let a = optimizer::optimize_backoff(&inputs, t_slot, &lambdas).map_err(opt_err)?;
    let d = PyDict::new(py);
    d.set_item("r_ub", r_ub)?;
    d.set_item("backoff_rates", a.backoff_rates)?;
    d.set_item("contention_windows", a.contention_windows)?;
    d.set_item("rounded_windows", a.rounded_windows)?;
    d.set_item("total_age", a.achieved_total_age)?;
    d.set_item("saturated", a.kkt.saturated)?;
    d.set_item("eps", a.kkt.eps)?;
    d.set_item("rho", a.kkt.rho)?;
    Ok(d)
}

/// Brute-force optimum of the back-off objective, for cross-checks.
#[pyfunction]
#[pyo3(signature = (holding_rates, r_ub, resolution=1e-3))]
fn optimize_brute(holding_rates: Vec<f64>, r_ub: f64, resolution: f64) -> PyResult<Vec<f64>> {
    let inputs = OptimizerInputs::new(holding_rates, r_ub).map_err(opt_err)?;
    optimizer::solve_brute(&inputs, resolution).map_err(opt_err)
}

/// Discrete-event simulation. `mac` is "idealized", "slotted" (needs
/// `windows`) or "round_robin".
#[pyfunction]
#[pyo3(signature = (network, mac="idealized", horizon_ms=1e5, seed=1, t_slot=0.009, windows=None, order=None))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    network: PyRef<'_, PyNetwork>,
    mac: &str,
    horizon_ms: f64,
    seed: u64,
    t_slot: f64,
    windows: Option<Vec<u32>>,
    order: Option<Vec<usize>>,
) -> PyResult<Bound<'py, PyDict>> {
    let mac = match mac {
        "idealized" => Mac::Idealized,
        "slotted" => Mac::Slotted {
            t_slot,
            windows: windows.ok_or_else(|| value_err("slotted simulation needs windows"))?,
        },
        "round_robin" => Mac::RoundRobin {
            order: order.unwrap_or_else(|| (0..network.inner.num_links()).collect()),
        },
        other => return Err(value_err(format!("unknown mac {other:?}"))),
    };
    let scenario = SimScenario::new(network.inner.clone(), mac, horizon_ms, seed);
    let r = py.detach(|| sim::simulate(&scenario)).map_err(sim_err)?;
    let d = PyDict::new(py);
    d.set_item("per_link_age", r.per_link_age)?;
    d.set_item("total_age", r.total_age)?;
    d.set_item("busy_fraction", r.busy_fraction)?;
    d.set_item("collisions", r.collisions)?;
    d.set_item("successes", r.successes)?;
    d.set_item("deliveries", r.deliveries)?;
    d.set_item("converged", r.converged)?;
    Ok(d)
}

#[pymodule]
fn pycsma(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(r_upper_bound, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_brute, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
