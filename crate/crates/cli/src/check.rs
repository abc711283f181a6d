//! Property suites run by `wgdirac check`.

use serde::Serialize;
use waveguide_dirac::design::{compile, effective_couplings, CompileOptions, LatticeGeometry};
use waveguide_dirac::dynamics::{evolve_dirac_lattice, evolve_effective, evolve_full, verify_stencil_trials, AmplitudeField, Boundary, DiracLattice, IntegratorConfig};
use waveguide_dirac::spacetime::{holonomy, mat2, parallel_transport_loop, SpacetimeSpec};
use waveguide_dirac::states::SpinorField;
use waveguide_dirac::{Result, C64};

use crate::config::CheckConfig;

#[derive(Debug, Serialize)]
pub struct SuiteResult {
    pub suite: &'static str,
    pub passed: bool,
    pub measurements: Vec<(String, f64)>,
    pub detail: String,
}

fn gaussian(cols: usize, rows: usize, width: f64) -> AmplitudeField {
    let (ca, cb) = ((cols as f64 - 1.0) / 2.0, (rows as f64 - 1.0) / 2.0);
    let mut c = AmplitudeField::zeros(cols, rows);
    for b in 0..rows {
        for a in 0..cols {
            let r2 = (a as f64 - ca).powi(2) + (b as f64 - cb).powi(2);
            c.values[b * cols + a] = C64::new((-r2 / (2.0 * width * width)).exp(), 0.0);
        }
    }
    let n = c.norm();
    c.values.iter_mut().for_each(|v| *v /= n);
    c
}

fn flat_8x8() -> Result<LatticeGeometry> {
    LatticeGeometry::new(8, 8, 2.0, 1.0)
}

fn stencil(cfg: &CheckConfig, seed: u64) -> Result<SuiteResult> {
    let flat_spec = SpacetimeSpec::flat(0.5);
    let flat = compile(&flat_spec, &flat_8x8()?, &CompileOptions::default())?;
    let cone_spec = SpacetimeSpec::conical(0.3, 0.5);
    let cone = compile(&cone_spec, &LatticeGeometry::new(16, 16, 2.0, 1.0)?, &CompileOptions::default())?;
    let a = verify_stencil_trials(&flat, &flat_spec, seed, cfg.stencil_trials)?.max_relative_error;
    let b = verify_stencil_trials(&cone, &cone_spec, seed.wrapping_add(1), cfg.stencil_trials)?.max_relative_error;
    Ok(SuiteResult {
        suite: "stencil",
        passed: a < cfg.stencil_tolerance && b < cfg.stencil_tolerance,
        measurements: vec![("flat 8x8".into(), a), ("conical 16x16".into(), b)],
        detail: format!("max relative discrepancy, tolerance {:e}", cfg.stencil_tolerance),
    })
}

fn norm(cfg: &CheckConfig) -> Result<SuiteResult> {
    let g = LatticeGeometry::new(16, 16, 2.0, 1.0)?;
    let design = compile(&SpacetimeSpec::conical(0.3, 0.5), &g, &CompileOptions::default())?;
    let c0 = gaussian(g.waveguide_cols(), g.ny, 3.0);
    let quiet = IntegratorConfig { record_every: 0, ..Default::default() };
    let z = 2.0 / design.k0;
    let full = evolve_full(&design, &c0, z, &quiet)?;
    let per = |drift: f64, k0z: f64| drift / k0z.max(1.0);
    let full_rate = per(full.norm_drift, design.k0 * full.last().z);
    let eff = evolve_effective(&effective_couplings(&design)?, &design.detuning, &c0, 5.0, &IntegratorConfig { dz: Some(0.01), ..quiet.clone() })?;
    let eff_rate = per(eff.norm_drift, design.k0 * 5.0);
    let lattice = DiracLattice::from_spec(&SpacetimeSpec::conical(0.3, 0.5), g, Boundary::Open)?;
    let psi0 = SpinorField::from_fn(g, |x, y| {
        let w = (-(x * x + y * y) / 20.0).exp();
        [C64::new(w, 0.0), C64::new(0.0, w)]
    });
    let dl = evolve_dirac_lattice(&lattice, &psi0, 2.0, &IntegratorConfig { dz: Some(0.005), ..quiet })?;
    let dl_rate = per(dl.norm_drift, 2.0 / g.dx);
    let worst = full_rate.max(eff_rate).max(dl_rate);
    Ok(SuiteResult {
        suite: "norm",
        passed: worst < cfg.norm_tolerance,
        measurements: vec![
            ("full modulated".into(), full_rate),
            ("effective".into(), eff_rate),
            ("dirac lattice".into(), dl_rate),
        ],
        detail: format!("norm drift per unit k0 z, tolerance {:e}", cfg.norm_tolerance),
    })
}

fn averaging(cfg: &CheckConfig) -> Result<SuiteResult> {
    let g = flat_8x8()?;
    let spec = SpacetimeSpec::flat(0.0);
    let k_eff = effective_couplings(&compile(&spec, &g, &CompileOptions::default())?)?.max_abs();
    let c0 = gaussian(g.waveguide_cols(), g.ny, 2.0);
    let quiet = IntegratorConfig { record_every: 0, ..Default::default() };
    let mut measurements = Vec::new();
    let mut errors = Vec::new();
    for &factor in &cfg.averaging_factors {
        let design = compile(&spec, &g, &CompileOptions { omega: Some(factor * k_eff), ..Default::default() })?;
        let full = evolve_full(&design, &c0, 1.0 / k_eff, &quiet)?;
        let z = full.last().z;
        let eff = evolve_effective(&effective_couplings(&design)?, &design.detuning, &c0, z, &IntegratorConfig { dz: Some(z / 4000.0), ..quiet.clone() })?;
        let e = full.last().relative_distance(eff.last());
        measurements.push((format!("error at {factor} k_eff"), e));
        errors.push(e);
    }
    let [lo, hi] = cfg.averaging_ratio;
    let ratios_ok = errors.windows(2).all(|w| (lo..=hi).contains(&(w[0] / w[1])));
    for w in errors.windows(2) {
        measurements.push(("doubling ratio".into(), w[0] / w[1]));
    }
    let last_ok = errors.last().is_some_and(|e| *e < cfg.averaging_tolerance);
    Ok(SuiteResult {
        suite: "averaging",
        passed: ratios_ok && last_ok,
        measurements,
        detail: format!(
            "stroboscopic full vs effective at z k_eff = 1; ratios in [{lo}, {hi}], final error below {:e}",
            cfg.averaging_tolerance
        ),
    })
}

fn holonomy_suite(cfg: &CheckConfig) -> Result<SuiteResult> {
    let mut measurements = Vec::new();
    let mut worst: f64 = 0.0;
    for &d in &cfg.holonomy_deltas {
        let h = holonomy(d, std::f64::consts::TAU);
        let (c, s) = ((d * std::f64::consts::PI).cos(), (d * std::f64::consts::PI).sin());
        let closed = mat2::max_diff(&h, &mat2::diag(C64::new(c, s), C64::new(c, -s)));
        let ode = mat2::max_diff(&h, &parallel_transport_loop(&SpacetimeSpec::conical(d, 0.0), 1.0, 2000)?);
        worst = worst.max(closed).max(ode);
        measurements.push((format!("delta {d}"), closed.max(ode)));
    }
    Ok(SuiteResult {
        suite: "holonomy",
        passed: worst < cfg.holonomy_tolerance,
        measurements,
        detail: format!("closed form and loop transport, tolerance {:e}", cfg.holonomy_tolerance),
    })
}

pub fn run(cfg: &CheckConfig, seed: u64) -> Result<Vec<SuiteResult>> {
    Ok(vec![stencil(cfg, seed)?, norm(cfg)?, averaging(cfg)?, holonomy_suite(cfg)?])
}
