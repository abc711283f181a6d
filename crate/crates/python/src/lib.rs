//! Python module `wgdirac`.
//!
//! Configurations cross the boundary as JSON strings with the same schema the
//! command-line tool reads; results come back as plain Python values.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use waveguide_dirac::ab_pipeline::{self, ABConfig};
use waveguide_dirac::design::{compile, effective_couplings, CompileOptions, LatticeGeometry};
use waveguide_dirac::dynamics::{self, evolve_effective, IntegratorConfig};
use waveguide_dirac::spacetime::{self, SpacetimeConfig};
use waveguide_dirac::states::{self, encode};
use waveguide_dirac::{special_functions, Error, C64};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Divergence(_) | Error::Accuracy(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: serde::de::DeserializeOwned>(json: &str) -> PyResult<T> {
    serde_json::from_str(json).map_err(|e| PyValueError::new_err(format!("invalid configuration: {e}")))
}

fn geometry(nx: usize, ny: usize, dx: f64, dy: f64) -> PyResult<LatticeGeometry> {
    LatticeGeometry::new(nx, ny, dx, dy).map_err(py_err)
}

#[pyfunction]
fn bessel_j(order: u32, x: f64) -> PyResult<f64> {
    special_functions::bessel_j(order, x).map_err(py_err)
}

/// First `count` positive solutions of `J0(ξ) = −J0(3ξ)`.
#[pyfunction]
fn sign_flip_roots(count: usize) -> Vec<f64> {
    special_functions::find_sign_flip_roots(count)
}

/// Holonomy of a loop of `angle` around the cone tip, as a 2×2 nested list.
#[pyfunction]
fn holonomy(delta: f64, angle: f64) -> Vec<Vec<C64>> {
    spacetime::holonomy(delta, angle).iter().map(|row| row.to_vec()).collect()
}

/// Compiles a design and returns its summary as a JSON string.
#[pyfunction]
#[pyo3(signature = (spacetime_json, nx, ny, dx, dy, options_json = None))]
fn compile_design(spacetime_json: &str, nx: usize, ny: usize, dx: f64, dy: f64, options_json: Option<&str>) -> PyResult<String> {
    let spec = parse::<SpacetimeConfig>(spacetime_json)?.build().map_err(py_err)?;
    let opts: CompileOptions = options_json.map(parse).transpose()?.unwrap_or_default();
    let d = compile(&spec, &geometry(nx, ny, dx, dy)?, &opts).map_err(py_err)?;
    serde_json::to_string(&d.summary()).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Largest relative mismatch between the averaged lattice and the Dirac stencil.
#[pyfunction]
#[pyo3(signature = (spacetime_json, nx, ny, dx, dy, seed = 0))]
fn verify_stencil(spacetime_json: &str, nx: usize, ny: usize, dx: f64, dy: f64, seed: u64) -> PyResult<f64> {
    let spec = parse::<SpacetimeConfig>(spacetime_json)?.build().map_err(py_err)?;
    let d = compile(&spec, &geometry(nx, ny, dx, dy)?, &CompileOptions::default()).map_err(py_err)?;
    Ok(dynamics::verify_stencil(&d, &spec, seed).map_err(py_err)?.max_relative_error)
}

/// Evolves a positive-energy Gaussian through the averaged lattice and returns
/// the decoded density as rows of length `nx`.
#[pyfunction]
#[pyo3(signature = (spacetime_json, nx, ny, dx, dy, momentum, width, centre, z_end, dz = 0.01))]
#[allow(clippy::too_many_arguments)]
fn evolve_packet(
    spacetime_json: &str,
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    momentum: [f64; 2],
    width: f64,
    centre: [f64; 2],
    z_end: f64,
    dz: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let cfg = parse::<SpacetimeConfig>(spacetime_json)?;
    let spec = cfg.build().map_err(py_err)?;
    let g = geometry(nx, ny, dx, dy)?;
    let d = compile(&spec, &g, &CompileOptions::default()).map_err(py_err)?;
    let psi = states::positive_energy_gaussian(momentum, width, centre, cfg.mass(), &g).map_err(py_err)?;
    let c0 = encode(&psi, &d.f_grid).map_err(py_err)?;
    let icfg = IntegratorConfig { dz: Some(dz), record_every: 0, ..Default::default() };
    let traj = evolve_effective(&effective_couplings(&d).map_err(py_err)?, &d.detuning, &c0, z_end, &icfg).map_err(py_err)?;
    let out = states::decode(traj.last(), &d.f_grid, &g).map_err(py_err)?;
    Ok(out.density().chunks(nx).map(<[f64]>::to_vec).collect())
}

/// Runs the interference experiment; returns `(delta_hat, residual_min, curve)`.
#[pyfunction]
#[pyo3(signature = (config_json = "{}"))]
fn run_ab(py: Python<'_>, config_json: &str) -> PyResult<(f64, f64, Vec<(f64, f64)>)> {
    let cfg: ABConfig = parse(config_json)?;
    cfg.validate().map_err(py_err)?;
    let out = py.detach(|| ab_pipeline::run_ab(&cfg)).map_err(py_err)?;
    Ok((out.fit.delta_hat, out.fit.residual_min, out.fit.curve))
}

#[pymodule]
fn wgdirac(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(bessel_j, m)?)?;
    m.add_function(wrap_pyfunction!(sign_flip_roots, m)?)?;
    m.add_function(wrap_pyfunction!(holonomy, m)?)?;
    m.add_function(wrap_pyfunction!(compile_design, m)?)?;
    m.add_function(wrap_pyfunction!(verify_stencil, m)?)?;
    m.add_function(wrap_pyfunction!(evolve_packet, m)?)?;
    m.add_function(wrap_pyfunction!(run_ab, m)?)?;
    Ok(())
}
