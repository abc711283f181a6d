//! JSON run configurations. Unknown keys are rejected everywhere.

use serde::{Deserialize, Serialize};
use waveguide_dirac::ab_pipeline::{ABConfig, Evolution, FitSearch};
use waveguide_dirac::design::{CompileOptions, LatticeGeometry};
use waveguide_dirac::dynamics::{Boundary, IntegratorConfig};
use waveguide_dirac::spacetime::SpacetimeConfig;

fn flat() -> SpacetimeConfig {
    SpacetimeConfig::Flat { mass: 0.0 }
}

fn default_geometry() -> LatticeGeometry {
    LatticeGeometry { nx: 16, ny: 16, dx: 2.0, dy: 1.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub spacetime: SpacetimeConfig,
    pub geometry: LatticeGeometry,
    pub options: CompileOptions,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self { spacetime: flat(), geometry: default_geometry(), options: CompileOptions::default() }
    }
}

/// Initial state of a run. Spinor kinds are encoded onto the waveguides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StateConfig {
    /// Positive-energy Gaussian packet of unit norm.
    Gaussian { momentum: [f64; 2], width: f64, centre: [f64; 2] },
    /// Unit amplitude in a single waveguide.
    Site { a: usize, b: usize },
    /// Spinor table in `n,m,re1,im1,re2,im2` form.
    SpinorCsv { path: String },
    /// First snapshot of a WGA1 amplitude file.
    Amplitudes { path: String },
    /// Unit-norm spinor with independent uniform components, drawn from `--seed`.
    Random,
}

impl Default for StateConfig {
    fn default() -> Self {
        StateConfig::Gaussian { momentum: [0.5, 0.0], width: 0.2, centre: [0.0, 0.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub design: DesignConfig,
    pub state: StateConfig,
    pub z_end: f64,
    pub evolution: Evolution,
    pub integrator: IntegratorConfig,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            design: DesignConfig::default(),
            state: StateConfig::default(),
            z_end: 1.0,
            evolution: Evolution::Effective,
            integrator: IntegratorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiracConfig {
    pub spacetime: SpacetimeConfig,
    pub geometry: LatticeGeometry,
    pub state: StateConfig,
    pub t_end: f64,
    pub boundary: Boundary,
    pub integrator: IntegratorConfig,
}

impl Default for DiracConfig {
    fn default() -> Self {
        Self {
            spacetime: SpacetimeConfig::Flat { mass: 1.0 },
            geometry: LatticeGeometry { nx: 32, ny: 32, dx: 0.5, dy: 0.5 },
            state: StateConfig::default(),
            t_end: 2.0,
            boundary: Boundary::Open,
            integrator: IntegratorConfig { dz: Some(0.01), record_every: 10, ..Default::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Density table with columns `z1,z2,rho`.
    pub density: String,
    /// Packet and time parameters that produced the density.
    pub experiment: ABConfig,
    pub search: Option<FitSearch>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { density: "density.csv".into(), experiment: ABConfig::default(), search: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    pub stencil_trials: usize,
    pub stencil_tolerance: f64,
    /// Drift allowed per unit `k0·z`.
    pub norm_tolerance: f64,
    /// Modulation frequencies in units of `max |k_eff|`, increasing by doubling.
    pub averaging_factors: Vec<f64>,
    /// Bound on the stroboscopic error at the highest frequency.
    pub averaging_tolerance: f64,
    pub averaging_ratio: [f64; 2],
    pub holonomy_deltas: Vec<f64>,
    pub holonomy_tolerance: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            stencil_trials: 100,
            stencil_tolerance: 1e-10,
            norm_tolerance: 1e-8,
            averaging_factors: vec![200.0, 400.0],
            averaging_tolerance: 2e-2,
            averaging_ratio: [1.6, 2.5],
            holonomy_deltas: vec![0.0, 0.1, 0.5, 1.0],
            holonomy_tolerance: 1e-8,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<DesignConfig>(r#"{"geometry": {"nx": 8, "ny": 8, "dx": 1, "dy": 1, "dz": 1}}"#).is_err());
        assert!(serde_json::from_str::<SimulateConfig>(r#"{"time": 3}"#).is_err());
        assert!(serde_json::from_str::<StateConfig>(r#"{"kind": "site", "a": 1, "b": 2, "c": 3}"#).is_err());
        let c: SimulateConfig = serde_json::from_str(r#"{"state": {"kind": "site", "a": 1, "b": 2}}"#).unwrap();
        assert_eq!(c.state, StateConfig::Site { a: 1, b: 2 });
    }
}
