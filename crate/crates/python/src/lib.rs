//! Python bindings. Configurations are passed as dicts (or JSON strings) with
//! the same schema as the CLI's `--config` files; results come back as plain
//! Python objects.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyString;
use serde::Serialize;

use risloc::fisher::state_bounds;
use risloc::harness::{self, no_progress, Config};
use risloc::rng::{stream_rng, Stream};
use risloc::signal::random_phase_profile;
use risloc::{Error, RisState, Vec3};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::InvalidScenario(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_config(py: Python<'_>, config: Option<&Bound<'_, PyAny>>) -> PyResult<Config> {
    let text = match config {
        None => return Ok(Config::default()),
        Some(c) if c.is_instance_of::<PyString>() => c.extract::<String>()?,
        Some(c) => py.import("json")?.call_method1("dumps", (c,))?.extract()?,
    };
    Config::from_json(&text).map_err(to_py_err)
}

fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// The reference configuration as a dict.
#[pyfunction]
fn default_config(py: Python<'_>) -> PyResult<Py<PyAny>> {
    to_py(py, &Config::default())
}

/// Bounds (PEB, OEB, per-receiver TEB/WEB and the FIMs) at the configured
/// state, or at `position` / `orientation_deg` when given.
#[pyfunction]
#[pyo3(signature = (config=None, position=None, orientation_deg=None))]
fn crb(
    py: Python<'_>,
    config: Option<&Bound<'_, PyAny>>,
    position: Option<[f64; 3]>,
    orientation_deg: Option<f64>,
) -> PyResult<Py<PyAny>> {
    let cfg = parse_config(py, config)?;
    let (sc, st) = cfg.scenario.to_model().map_err(to_py_err)?;
    let st = RisState::new(
        position.map(|p| Vec3::new(p[0], p[1], p[2])).unwrap_or(st.position),
        orientation_deg.map(f64::to_radians).unwrap_or(st.alpha),
    );
    let prof = random_phase_profile(sc.num_elements(), sc.num_symbols, &mut stream_rng(cfg.experiment.master_seed, Stream::Profile, &[]));
    let r = py.detach(|| state_bounds(&sc, &st, &prof)).map_err(to_py_err)?;
    to_py(py, &r)
}

/// One noisy trial through the full estimator, with truth and bounds.
#[pyfunction]
#[pyo3(signature = (config=None, trial=0))]
fn simulate(py: Python<'_>, config: Option<&Bound<'_, PyAny>>, trial: u64) -> PyResult<Py<PyAny>> {
    let cfg = parse_config(py, config)?;
    let r = py.detach(|| harness::simulate_once(&cfg, trial)).map_err(to_py_err)?;
    to_py(py, &r)
}

/// Monte Carlo RMSE and bounds over the configured power axis.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn sweep_power(py: Python<'_>, config: Option<&Bound<'_, PyAny>>) -> PyResult<Py<PyAny>> {
    let cfg = parse_config(py, config)?;
    let r = py.detach(|| harness::run_monte_carlo(&cfg, &no_progress)).map_err(to_py_err)?;
    to_py(py, &r)
}

/// Monte Carlo RMSE and bounds over the configured subcarrier counts.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn sweep_bandwidth(py: Python<'_>, config: Option<&Bound<'_, PyAny>>) -> PyResult<Py<PyAny>> {
    let cfg = parse_config(py, config)?;
    let r = py.detach(|| harness::sweep_bandwidth(&cfg, &no_progress)).map_err(to_py_err)?;
    to_py(py, &r)
}

/// Full-model versus TOA-only bounds over the receiver count.
#[pyfunction]
#[pyo3(signature = (config=None, monte_carlo=false))]
fn compare_toa(py: Python<'_>, config: Option<&Bound<'_, PyAny>>, monte_carlo: bool) -> PyResult<Py<PyAny>> {
    let cfg = parse_config(py, config)?;
    let r = py.detach(|| harness::compare_toa_only(&cfg, monte_carlo, &no_progress)).map_err(to_py_err)?;
    to_py(py, &r)
}

/// PEB/OEB grid; singular cells have `None` bounds.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn contour(py: Python<'_>, config: Option<&Bound<'_, PyAny>>) -> PyResult<Py<PyAny>> {
    let cfg = parse_config(py, config)?;
    let r = py.detach(|| harness::crb_contour(&cfg)).map_err(to_py_err)?;
    to_py(py, &r)
}

#[pymodule]
fn pyrisloc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(crb, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_power, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_bandwidth, m)?)?;
    m.add_function(wrap_pyfunction!(compare_toa, m)?)?;
    m.add_function(wrap_pyfunction!(contour, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
