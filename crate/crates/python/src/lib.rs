//! Python bindings: study runs, the background fundamental solution and closed-form
//! polarization tensors.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use tdscope::greens::{self, Background};
use tdscope::harness::{emit_outputs, run_study, ExperimentConfig};
use tdscope::polarization;
use tdscope::{Complex64, Vec3};

fn py_err(e: tdscope::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Parses and validates a TOML configuration; returns the study name.
#[pyfunction]
fn validate(config_toml: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_toml(config_toml).map_err(py_err)?;
    Ok(cfg.study.name().to_string())
}

/// Runs a study from TOML text. Returns `(status, report_json)`; outputs are
/// written to `out` when given.
#[pyfunction]
#[pyo3(signature = (config_toml, out=None))]
fn run(py: Python<'_>, config_toml: &str, out: Option<PathBuf>) -> PyResult<(String, String)> {
    let cfg = ExperimentConfig::from_toml(config_toml).map_err(py_err)?;
    let outcome = py.detach(|| run_study(&cfg)).map_err(py_err)?;
    if let Some(dir) = out {
        emit_outputs(&outcome, &dir, None).map_err(py_err)?;
    }
    let status = format!("{:?}", outcome.report.status).to_uppercase();
    Ok((status, outcome.report.to_json()))
}

/// Fundamental solution of the isotropic background `a`, wavenumber `kappa`.
#[pyfunction]
fn phi(a: f64, kappa: f64, r: [f64; 3]) -> PyResult<Complex64> {
    let bg = Background::isotropic(a, kappa).map_err(py_err)?;
    greens::phi(&bg, &Vec3::from(r)).map_err(py_err)
}

/// Polarization tensor of the unit ball for an isotropic inclusion.
#[pyfunction]
fn mz_ball_iso(a: f64, beta_z: f64) -> PyResult<[[f64; 3]; 3]> {
    let m = polarization::mz_ball_iso(a, beta_z).map_err(py_err)?.m;
    Ok(std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)])))
}

#[pymodule]
fn tdscope_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(phi, m)?)?;
    m.add_function(wrap_pyfunction!(mz_ball_iso, m)?)?;
    Ok(())
}
