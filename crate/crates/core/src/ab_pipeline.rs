//! Conical Aharonov–Bohm experiment: two flat packets lifted onto the cone, evolved
//! on the lattice, read out as a density in the φ-patch and fitted for `Δ`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::design::{compile, effective_couplings, CompileOptions, LatticeDesign, LatticeGeometry};
use crate::dynamics::{evolve_effective, evolve_full, IntegratorConfig};
use crate::error::{Error, Result};
use crate::spacetime::{alpha_angle, beta_angle, global_to_flat, global_to_flat_cartesian, mat2, rotation_lift, Patch, SpacetimeSpec};
use crate::states::{decode, encode, flat_propagate, positive_energy_gaussian, truncate_mollify, SpinorField};
use crate::C64;

/// Fits with fewer usable samples than this are rejected.
pub const MIN_FIT_SAMPLES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Evolution {
    Effective,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSearch {
    pub lo: f64,
    pub hi: f64,
    pub coarse_steps: usize,
}

impl Default for FitSearch {
    fn default() -> Self {
        Self { lo: 0.0, hi: 0.45, coarse_steps: 18 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ABConfig {
    pub delta: f64,
    pub mass: f64,
    /// Momentum magnitude; both packets travel along `−e`, `e` the image of the negative x-axis.
    pub momentum: f64,
    /// Position-space standard deviation; the momentum width is `1/(2·position_std)`.
    pub position_std: f64,
    /// Distance of the packet centres along `e`.
    pub approach: f64,
    /// Transverse offset of each packet from the line through the origin.
    pub offset: f64,
    pub time: f64,
    /// Magnitude cut, as a fraction of each packet's peak.
    pub truncation: f64,
    pub ramp_width: f64,
    pub fine_step: f64,
    pub fine_half_width: f64,
    pub geometry: LatticeGeometry,
    pub dz: f64,
    pub evolution: Evolution,
    pub search: FitSearch,
}

impl Default for ABConfig {
    fn default() -> Self {
        Self {
            delta: 0.2,
            mass: 1.0,
            momentum: 0.3,
            position_std: 2.2,
            approach: 3.0,
            offset: 14.0,
            time: 34.0,
            truncation: 0.02,
            ramp_width: 1.0,
            fine_step: 0.125,
            fine_half_width: 80.0,
            geometry: LatticeGeometry { nx: 96, ny: 96, dx: 1.0, dy: 1.0 },
            dz: 0.005,
            evolution: Evolution::Effective,
            search: FitSearch::default(),
        }
    }
}

impl ABConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.delta) {
            return Err(Error::Config(format!("delta {} not in [0, 0.5]", self.delta)));
        }
        let positive = [
            ("position_std", self.position_std),
            ("fine_step", self.fine_step),
            ("fine_half_width", self.fine_half_width),
            ("dz", self.dz),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.mass < 0.0 || self.time < 0.0 || self.momentum < 0.0 {
            return Err(Error::Config("mass, momentum and time must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.truncation) {
            return Err(Error::Config("truncation must lie in [0, 1)".into()));
        }
        let s = self.search;
        if !(0.0 <= s.lo && s.lo < s.hi && s.hi <= 0.5) || s.coarse_steps < 2 {
            return Err(Error::Config("fit search range must satisfy 0 <= lo < hi <= 0.5 with >= 2 steps".into()));
        }
        self.geometry.validate()
    }

    /// Unit vector `e` along the θ-patch image of the negative x-axis, and `e⊥`.
    pub fn axes(&self) -> ([f64; 2], [f64; 2]) {
        let a = (1.0 - self.delta) * PI;
        let e = [a.cos(), a.sin()];
        (e, [e[1], -e[0]])
    }

    /// Packet centres in flat θ-patch coordinates: `L·e + b·e⊥` and `L·e − b·e⊥`.
    pub fn centres(&self) -> [[f64; 2]; 2] {
        let (e, p) = self.axes();
        let (l, b) = (self.approach, self.offset);
        [[l * e[0] + b * p[0], l * e[1] + b * p[1]], [l * e[0] - b * p[0], l * e[1] - b * p[1]]]
    }

    pub fn fine_geometry(&self) -> Result<LatticeGeometry> {
        let m = (2.0 * self.fine_half_width / self.fine_step).round() as usize;
        LatticeGeometry::new(m + m % 2, m + m % 2, self.fine_step, self.fine_step)
    }
}

/// Two truncated flat packets, each of norm `1/√2`, on the fine periodic grid.
#[derive(Debug, Clone)]
pub struct FlatPackets {
    pub psi: SpinorField,
    pub phi: SpinorField,
    pub mass: f64,
}

impl FlatPackets {
    pub fn build(cfg: &ABConfig) -> Result<Self> {
        let fine = cfg.fine_geometry()?;
        let (e, _) = cfg.axes();
        let k = [-cfg.momentum * e[0], -cfg.momentum * e[1]];
        let width = 1.0 / (2.0 * cfg.position_std);
        let make = |c: [f64; 2]| -> Result<SpinorField> {
            let p = positive_energy_gaussian(k, width, c, cfg.mass, &fine)?;
            if cfg.truncation == 0.0 {
                return Ok(p);
            }
            let peak = p.density().iter().cloned().fold(0.0, f64::max).sqrt();
            let (mut q, _) = truncate_mollify(&p, cfg.truncation * peak, cfg.ramp_width);
            let n = q.norm();
            q.scale(std::f64::consts::FRAC_1_SQRT_2 / n);
            Ok(q)
        };
        let [c1, c2] = cfg.centres();
        Ok(Self { psi: make(c1)?, phi: make(c2)?, mass: cfg.mass })
    }

    pub fn propagate(&self, t: f64) -> Result<Self> {
        Ok(Self {
            psi: flat_propagate(&self.psi, t, self.mass)?,
            phi: flat_propagate(&self.phi, t, self.mass)?,
            mass: self.mass,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PreparedInput {
    pub state: SpinorField,
    pub packets: FlatPackets,
    /// `L2` norm within 5 sites of the cut `{x < 0, y = 0}` or of the origin.
    pub cut_norm: f64,
    /// `L2` norm within 5 sites of the lattice boundary.
    pub edge_norm: f64,
    /// Lattice norm `(Σ g²|ψ|² δxδy)^{1/2}`.
    pub norm: f64,
}

/// `Ψ(x,y) = V(Δτ)·Ψ_flat(y′(x,y))` evaluated per packet and normalized to `1/√2`
/// in the lattice measure `g²δxδy`.
pub fn prepare_ab_input(cfg: &ABConfig) -> Result<PreparedInput> {
    cfg.validate()?;
    let packets = FlatPackets::build(cfg)?;
    let g = cfg.geometry;
    let delta = cfg.delta;
    let lift_one = |flat: &SpinorField| -> Result<SpinorField> {
        let mut values = Vec::with_capacity(g.spinor_len());
        for m in 0..g.ny {
            for n in 0..g.nx {
                let p = (g.x(n), g.y(m));
                let (fx, fy) = global_to_flat_cartesian(delta, Patch::Theta, p)?;
                let (_, angle) = global_to_flat(delta, Patch::Theta, p)?;
                let tau = angle / (1.0 - delta);
                values.push(mat2::apply(&rotation_lift(delta * tau), flat.interpolate(fx, fy)));
            }
        }
        let mut s = SpinorField { geometry: g, values };
        let n = weighted_norm(&s, delta);
        if n == 0.0 {
            return Err(Error::Config("packet does not reach the lattice".into()));
        }
        s.scale(std::f64::consts::FRAC_1_SQRT_2 / n);
        Ok(s)
    };
    let mut state = lift_one(&packets.psi)?;
    state.add_assign(&lift_one(&packets.phi)?);

    let band = 5.0 * g.dy;
    let mut cut = 0.0;
    for m in 0..g.ny {
        for n in 0..g.nx {
            let (x, y) = (g.x(n), g.y(m));
            if (y.abs() < band && x < 0.0) || (x * x + y * y).sqrt() < band {
                let v = state.at(n, m);
                cut += v[0].norm_sqr() + v[1].norm_sqr();
            }
        }
    }
    let cut_norm = (cut * g.cell_area()).sqrt();
    let edge_norm = state.boundary_norm(5);
    if cut_norm >= 1e-6 {
        return Err(Error::Config(format!("input overlaps the cut or origin: norm {cut_norm:.2e} within 5 sites")));
    }
    if edge_norm >= 1e-6 {
        return Err(Error::Config(format!("input reaches the lattice boundary: norm {edge_norm:.2e} within 5 sites")));
    }
    let norm = weighted_norm(&state, delta);
    Ok(PreparedInput { state, packets, cut_norm, edge_norm, norm })
}

fn weighted_norm(s: &SpinorField, delta: f64) -> f64 {
    let g = s.geometry;
    let mut t = 0.0;
    for m in 0..g.ny {
        for n in 0..g.nx {
            let (x, y) = (g.x(n), g.y(m));
            let g2 = (x * x + y * y).powf(-delta);
            let v = s.at(n, m);
            t += g2 * (v[0].norm_sqr() + v[1].norm_sqr());
        }
    }
    (t * g.cell_area()).sqrt()
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub geometry: LatticeGeometry,
    /// `ρ = f²(I_{2n,m} + I_{2n+1,m})` per spinor site.
    pub density: Vec<f64>,
    /// `Σ g²ρ δxδy` before and after the run.
    pub mass_initial: f64,
    pub mass_final: f64,
    /// Relative drift of the amplitude norm over the run.
    pub norm_drift: f64,
    pub warnings: Vec<String>,
}

/// Compiles the conical design used by the experiment.
pub fn ab_design(cfg: &ABConfig) -> Result<LatticeDesign> {
    compile(&SpacetimeSpec::conical(cfg.delta, cfg.mass), &cfg.geometry, &CompileOptions::default())
}

/// Encode, evolve to `t_end` and read the density back out.
pub fn run_and_reconstruct(
    design: &LatticeDesign,
    input: &SpinorField,
    t_end: f64,
    evolution: Evolution,
    dz: f64,
) -> Result<Reconstruction> {
    let g = design.geometry;
    let c0 = encode(input, &design.f_grid)?;
    let cfg = IntegratorConfig { dz: Some(dz), record_every: 0, ..Default::default() };
    let traj = match evolution {
        Evolution::Effective => evolve_effective(&effective_couplings(design)?, &design.detuning, &c0, t_end, &cfg)?,
        Evolution::Full => evolve_full(design, &c0, t_end, &IntegratorConfig { dz: None, ..cfg })?,
    };
    let out = decode(traj.last(), &design.f_grid, &g)?;
    let density = out.density();
    let mass = |rho: &[f64]| -> f64 {
        rho.iter().zip(&design.f_grid).map(|(r, f)| r / (f * f)).sum::<f64>() * g.cell_area()
    };
    Ok(Reconstruction {
        geometry: g,
        mass_initial: mass(&input.density()),
        mass_final: mass(&density),
        density,
        norm_drift: traj.norm_drift,
        warnings: traj.warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensitySample {
    pub z: [f64; 2],
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMap {
    pub samples: Vec<DensitySample>,
    /// Grid points on the φ-patch cut or at the origin.
    pub dropped: usize,
}

/// Re-expresses each grid sample in flat φ-patch coordinates; values are unchanged.
pub fn map_density_to_phi(density: &[f64], geometry: &LatticeGeometry, delta: f64) -> DensityMap {
    let mut samples = Vec::with_capacity(density.len());
    let mut dropped = 0;
    for m in 0..geometry.ny {
        for n in 0..geometry.nx {
            match global_to_flat_cartesian(delta, Patch::Phi, (geometry.x(n), geometry.y(m))) {
                Ok((z1, z2)) => samples.push(DensitySample { z: [z1, z2], rho: density[m * geometry.nx + n] }),
                Err(_) => dropped += 1,
            }
        }
    }
    DensityMap { samples, dropped }
}

fn rotate(z: [f64; 2], a: f64) -> (f64, f64) {
    let (s, c) = a.sin_cos();
    (c * z[0] - s * z[1], s * z[0] + c * z[1])
}

/// Interference model `ψ†ψ(R(−α)z) + φ†φ(R(−β)z) + 2Re{ψ†(R(−α)z) e^{iσ_zΔπ} φ(R(−β)z)}`
/// with nearest-node lookup in the flat states.
pub fn predicted_density(flat: &FlatPackets, delta: f64, z: [f64; 2]) -> f64 {
    let (ax, ay) = rotate(z, -alpha_angle(delta));
    let (bx, by) = rotate(z, -beta_angle(delta));
    let a = flat.psi.nearest(ax, ay);
    let b = flat.phi.nearest(bx, by);
    let ph = C64::from_polar(1.0, delta * PI);
    let cross = a[0].conj() * ph * b[0] + a[1].conj() * ph.conj() * b[1];
    a[0].norm_sqr() + a[1].norm_sqr() + b[0].norm_sqr() + b[1].norm_sqr() + 2.0 * cross.re
}

pub fn residual(observed: &DensityMap, flat: &FlatPackets, delta: f64) -> f64 {
    observed.samples.iter().map(|s| (predicted_density(flat, delta, s.z) - s.rho).powi(2)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub delta_hat: f64,
    pub residual_min: f64,
    /// Coarse scan `(Δ, residual)`.
    pub curve: Vec<(f64, f64)>,
    pub samples: usize,
}

/// Coarse scan over `search`, then golden-section refinement to `1e−4`.
pub fn fit_delta(observed: &DensityMap, flat: &FlatPackets, search: FitSearch) -> Result<FitResult> {
    if observed.samples.is_empty() {
        return Err(Error::Validation("no density samples to fit".into()));
    }
    if observed.samples.len() < MIN_FIT_SAMPLES {
        return Err(Error::FitDegenerate(format!(
            "{} samples, at least {MIN_FIT_SAMPLES} required",
            observed.samples.len()
        )));
    }
    if !(0.0 <= search.lo && search.lo < search.hi && search.hi <= 0.5) || search.coarse_steps < 2 {
        return Err(Error::Config("fit search range must lie in [0, 0.5]".into()));
    }
    let r = |d: f64| residual(observed, flat, d);
    let step = (search.hi - search.lo) / search.coarse_steps as f64;
    let curve: Vec<(f64, f64)> = (0..=search.coarse_steps)
        .map(|i| {
            let d = search.lo + i as f64 * step;
            (d, r(d))
        })
        .collect();
    let (lo_r, hi_r) = curve.iter().fold((f64::INFINITY, 0.0f64), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if !(hi_r - lo_r > 1e-12 * hi_r.max(1e-300)) {
        return Err(Error::FitDegenerate("residual curve is flat over the search range".into()));
    }
    let best = curve.iter().enumerate().min_by(|a, b| a.1 .1.total_cmp(&b.1 .1)).map(|(i, _)| i).unwrap_or(0);
    let mut a = curve[best.saturating_sub(1)].0;
    let mut b = curve[(best + 1).min(curve.len() - 1)].0;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (r(c), r(d));
    while b - a > 1e-4 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = r(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = r(d);
        }
    }
    let mut delta_hat = 0.5 * (a + b);
    let mut residual_min = r(delta_hat);
    // the bracket may sit against the search boundary
    if curve[best].1 < residual_min {
        delta_hat = curve[best].0;
        residual_min = curve[best].1;
    }
    Ok(FitResult { delta_hat, residual_min, curve, samples: observed.samples.len() })
}

/// Full experiment outcome.
#[derive(Debug, Clone)]
pub struct ABOutcome {
    pub input: PreparedInput,
    pub reconstruction: Reconstruction,
    pub map: DensityMap,
    pub fit: FitResult,
}

pub fn run_ab(cfg: &ABConfig) -> Result<ABOutcome> {
    let input = prepare_ab_input(cfg)?;
    let design = ab_design(cfg)?;
    let reconstruction = run_and_reconstruct(&design, &input.state, cfg.time, cfg.evolution, cfg.dz)?;
    let map = map_density_to_phi(&reconstruction.density, &cfg.geometry, cfg.delta);
    let flat_t = input.packets.propagate(cfg.time)?;
    let fit = fit_delta(&map, &flat_t, cfg.search)?;
    Ok(ABOutcome { input, reconstruction, map, fit })
}
