//! Fixed-step RK4 integration of the modulated and averaged coupled-mode equations,
//! and of the discretized Dirac equation used as their oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::{nearest_links, DetuningProfile, EffectiveCouplings, LatticeDesign, LatticeGeometry, ModulationSet};
use crate::error::{Error, Result};
use crate::spacetime::SpacetimeSpec;
use crate::states::{decode, encode, EncodingTables, SpinorField};
use crate::C64;

const I: C64 = C64::new(0.0, 1.0);

/// Waveguide amplitudes `c_ab` on a `cols × rows` grid, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeField {
    pub cols: usize,
    pub rows: usize,
    pub values: Vec<C64>,
    pub z: f64,
}

impl AmplitudeField {
    pub fn new(cols: usize, rows: usize, values: Vec<C64>, z: f64) -> Self {
        assert_eq!(values.len(), cols * rows, "amplitude grid shape");
        Self { cols, rows, values, z }
    }

    pub fn zeros(cols: usize, rows: usize) -> Self {
        Self::new(cols, rows, vec![C64::new(0.0, 0.0); cols * rows], 0.0)
    }

    /// Unit amplitude at `(a, b)`.
    pub fn unit(cols: usize, rows: usize, a: usize, b: usize) -> Self {
        let mut f = Self::zeros(cols, rows);
        f.values[b * cols + a] = C64::new(1.0, 0.0);
        f
    }

    pub fn for_geometry(g: &LatticeGeometry) -> Self {
        Self::zeros(g.waveguide_cols(), g.ny)
    }

    pub fn at(&self, a: usize, b: usize) -> C64 {
        self.values[b * self.cols + a]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `I_ab = |c_ab|²`.
    pub fn intensity(&self) -> Vec<f64> {
        self.values.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// `‖a − b‖ / ‖b‖`.
    pub fn relative_distance(&self, reference: &AmplitudeField) -> f64 {
        let d: f64 = self.values.iter().zip(&reference.values).map(|(a, b)| (a - b).norm_sqr()).sum();
        (d / reference.norm_sqr()).sqrt()
    }

    /// Squared amplitude within `width` sites of the grid edge.
    pub fn edge_norm_sqr(&self, width: usize) -> f64 {
        edge_sum(self.cols, self.rows, width, |i| self.values[i].norm_sqr())
    }
}

fn edge_sum(cols: usize, rows: usize, width: usize, v: impl Fn(usize) -> f64) -> f64 {
    let mut s = 0.0;
    for b in 0..rows {
        for a in 0..cols {
            if a < width || b < width || a + width >= cols || b + width >= rows {
                s += v(b * cols + a);
            }
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    /// Integrate `c` with the explicit detuning `σ(z)`.
    Lab,
    /// Integrate `c̃ = e^{iS}c`, which moves `σ` into link phases.
    Comoving,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Open,
    Periodic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    /// Step for constant-coefficient runs; modulated runs derive theirs from the period.
    pub dz: Option<f64>,
    pub samples_per_period: usize,
    pub frame: Frame,
    pub boundary: Boundary,
    /// Snapshot stride: periods for modulated runs, steps otherwise; 0 records only the ends.
    pub record_every: usize,
    pub edge_sites: usize,
    pub edge_threshold: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dz: None,
            samples_per_period: 200,
            frame: Frame::Comoving,
            boundary: Boundary::Open,
            record_every: 1,
            edge_sites: 5,
            edge_threshold: 1e-6,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_period < 20 {
            return Err(Error::Config(format!(
                "samples_per_period = {} is below 20",
                self.samples_per_period
            )));
        }
        if let Some(dz) = self.dz {
            if !(dz > 0.0 && dz.is_finite()) {
                return Err(Error::Config("dz must be positive".into()));
            }
        }
        Ok(())
    }

    fn constant_step(&self, rate: f64) -> f64 {
        self.dz.unwrap_or(0.02 / rate.max(1e-12))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<AmplitudeField>,
    /// Largest `|‖c‖² − ‖c₀‖²| / ‖c₀‖²` over recorded snapshots.
    pub norm_drift: f64,
    pub steps: usize,
    pub step: f64,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn last(&self) -> &AmplitudeField {
        self.snapshots.last().expect("trajectory holds the initial state")
    }
}

struct Rk4 {
    k: [Vec<C64>; 4],
    tmp: Vec<C64>,
}

impl Rk4 {
    fn new(n: usize) -> Self {
        let z = vec![C64::new(0.0, 0.0); n];
        Self { k: [z.clone(), z.clone(), z.clone(), z.clone()], tmp: z }
    }

    fn step(&mut self, y: &mut [C64], z: f64, h: f64, rhs: &mut impl FnMut(f64, &[C64], &mut [C64])) {
        let [k1, k2, k3, k4] = &mut self.k;
        rhs(z, y, k1);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + k1[i] * (0.5 * h);
        }
        rhs(z + 0.5 * h, &self.tmp, k2);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + k2[i] * (0.5 * h);
        }
        rhs(z + 0.5 * h, &self.tmp, k3);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + k3[i] * h;
        }
        rhs(z + h, &self.tmp, k4);
        for i in 0..y.len() {
            y[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
        }
    }
}

/// Bookkeeping shared by all integrators: norm drift, edge warnings, divergence.
struct Monitor {
    n0: f64,
    drift: f64,
    warned_edge: bool,
    warned_drift: bool,
    warnings: Vec<String>,
}

impl Monitor {
    fn new(n0: f64) -> Self {
        Self { n0, drift: 0.0, warned_edge: false, warned_drift: false, warnings: Vec::new() }
    }

    fn observe(&mut self, z: f64, norm: f64, edge: Option<f64>, threshold: f64) -> Result<()> {
        if !norm.is_finite() {
            return Err(Error::Divergence(format!("non-finite amplitudes at z = {z}")));
        }
        if self.n0 > 0.0 {
            self.drift = self.drift.max((norm - self.n0).abs() / self.n0);
        }
        if self.drift > 1e-8 && !self.warned_drift {
            self.warned_drift = true;
            let msg = format!("relative norm drift {:.2e} exceeds 1e-8 at z = {z}", self.drift);
            log::warn!("{msg}");
            self.warnings.push(msg);
        }
        if let Some(e) = edge {
            if self.n0 > 0.0 && e / self.n0 > threshold && !self.warned_edge {
                self.warned_edge = true;
                let msg = format!("edge intensity fraction {:.2e} exceeds {threshold:.0e} at z = {z}", e / self.n0);
                log::warn!("{msg}");
                self.warnings.push(msg);
            }
        }
        Ok(())
    }
}

/// A modulated lattice with uniform bare coupling `k0` on every nearest-neighbour link.
pub struct ModulatedSystem<'a> {
    pub cols: usize,
    pub rows: usize,
    pub k0: f64,
    pub modulations: &'a ModulationSet,
    pub detuning: &'a DetuningProfile,
}

impl<'a> ModulatedSystem<'a> {
    pub fn from_design(design: &'a LatticeDesign) -> Self {
        Self {
            cols: design.geometry.waveguide_cols(),
            rows: design.geometry.ny,
            k0: design.k0,
            modulations: &design.modulations,
            detuning: &design.detuning,
        }
    }
}

/// Full modulated equations with stroboscopic snapshots at `z = n·2π/ω`, rounding
/// `z_end` up to a whole number of periods.
pub fn evolve_full(design: &LatticeDesign, c0: &AmplitudeField, z_end: f64, cfg: &IntegratorConfig) -> Result<Trajectory> {
    evolve_modulated(&ModulatedSystem::from_design(design), c0, z_end, cfg)
}

pub fn evolve_modulated(sys: &ModulatedSystem, c0: &AmplitudeField, z_end: f64, cfg: &IntegratorConfig) -> Result<Trajectory> {
    cfg.validate()?;
    check_shape(c0, sys.cols, sys.rows)?;
    let period = sys.modulations.period();
    let qmax = sys.modulations.channels.iter().map(|c| c.q).max().unwrap_or(1) as usize;
    let per_period = qmax * cfg.samples_per_period;
    let h = period / per_period as f64;
    if let Some(dz) = cfg.dz {
        if dz < h {
            return Err(Error::Config(format!(
                "dz = {dz} is finer than the derived period step {h}; set samples_per_period instead"
            )));
        }
    }
    let periods = (z_end / period - 1e-9).ceil().max(0.0) as usize;
    let links = nearest_links(sys.cols, sys.rows);
    let n = sys.cols * sys.rows;
    let mut detune = vec![0.0; n];
    let mut phase = vec![C64::new(0.0, 0.0); n];
    let mut sigma = vec![0.0; n];
    let alphas: Vec<f64> = (0..sys.modulations.channels.len()).map(|j| sys.modulations.alpha(j)).collect();
    let channels = &sys.modulations.channels;

    let mut rhs = |z: f64, y: &[C64], out: &mut [C64]| {
        sys.detuning.fill(z, &mut detune);
        match cfg.frame {
            Frame::Comoving => {
                let sines: Vec<f64> = alphas.iter().map(|a| (a * z).sin()).collect();
                for (i, p) in phase.iter_mut().enumerate() {
                    let s: f64 = channels.iter().zip(&sines).map(|(c, s)| c.args[i] * s).sum();
                    *p = C64::from_polar(1.0, s);
                }
                for i in 0..n {
                    out[i] = y[i] * detune[i];
                }
                for &(s, t) in &links {
                    let w = phase[s] * phase[t].conj() * sys.k0;
                    out[s] += w * y[t];
                    out[t] += w.conj() * y[s];
                }
            }
            Frame::Lab => {
                let cosines: Vec<f64> = alphas.iter().map(|a| a * (a * z).cos()).collect();
                for (i, sg) in sigma.iter_mut().enumerate() {
                    *sg = channels.iter().zip(&cosines).map(|(c, s)| c.args[i] * s).sum();
                }
                for i in 0..n {
                    out[i] = y[i] * (detune[i] + sigma[i]);
                }
                for &(s, t) in &links {
                    out[s] += y[t] * sys.k0;
                    out[t] += y[s] * sys.k0;
                }
            }
        }
        for o in out.iter_mut() {
            *o *= -I;
        }
    };

    let mut y = c0.values.clone();
    let mut rk = Rk4::new(n);
    let mut mon = Monitor::new(c0.norm_sqr());
    let mut snaps = vec![AmplitudeField { z: 0.0, ..c0.clone() }];
    let mut steps = 0;
    for p in 0..periods {
        let z_start = p as f64 * period;
        for k in 0..per_period {
            rk.step(&mut y, z_start + k as f64 * h, h, &mut rhs);
            steps += 1;
        }
        let z = (p + 1) as f64 * period;
        let last = p + 1 == periods;
        let record = last || (cfg.record_every > 0 && (p + 1) % cfg.record_every == 0);
        if record {
            let f = AmplitudeField::new(sys.cols, sys.rows, y.clone(), z);
            mon.observe(z, f.norm_sqr(), Some(f.edge_norm_sqr(cfg.edge_sites)), cfg.edge_threshold)?;
            snaps.push(f);
        } else if !y.iter().all(|c| c.re.is_finite()) {
            return Err(Error::Divergence(format!("non-finite amplitudes at z = {z}")));
        }
    }
    Ok(Trajectory { snapshots: snaps, norm_drift: mon.drift, steps, step: h, warnings: mon.warnings })
}

fn check_shape(c0: &AmplitudeField, cols: usize, rows: usize) -> Result<()> {
    if c0.cols != cols || c0.rows != rows {
        return Err(Error::Validation(format!(
            "initial field is {}x{}, lattice is {cols}x{rows}",
            c0.cols, c0.rows
        )));
    }
    if !c0.is_finite() {
        return Err(Error::Validation("initial field is not finite".into()));
    }
    Ok(())
}

/// Averaged equations `i dc/dz = K c + V(z) c` with constant couplings.
pub fn evolve_effective(
    couplings: &EffectiveCouplings,
    detuning: &DetuningProfile,
    c0: &AmplitudeField,
    z_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_shape(c0, couplings.cols, couplings.rows)?;
    let links = couplings.links();
    let n = couplings.cols * couplings.rows;
    let mut detune = vec![0.0; n];
    detuning.fill(0.0, &mut detune);
    let rate = couplings.max_abs() * 4.0 + detune.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (steps, h) = step_count(z_end, cfg.constant_step(rate));
    let dynamic = !detuning.is_static();

    let mut rhs = |z: f64, y: &[C64], out: &mut [C64]| {
        if dynamic {
            detuning.fill(z, &mut detune);
        }
        for i in 0..n {
            out[i] = y[i] * detune[i];
        }
        for &(s, t, k) in &links {
            out[s] += y[t] * k;
            out[t] += y[s] * k;
        }
        for o in out.iter_mut() {
            *o *= -I;
        }
    };
    let record = |z: f64, y: &[C64]| AmplitudeField::new(couplings.cols, couplings.rows, y.to_vec(), z);
    integrate_constant(c0, steps, h, cfg, &mut rhs, record, n)
}

fn step_count(z_end: f64, dz: f64) -> (usize, f64) {
    let steps = (z_end.abs() / dz - 1e-9).ceil().max(0.0) as usize;
    if steps == 0 {
        (0, 0.0)
    } else {
        (steps, z_end / steps as f64)
    }
}

fn integrate_constant(
    c0: &AmplitudeField,
    steps: usize,
    h: f64,
    cfg: &IntegratorConfig,
    rhs: &mut impl FnMut(f64, &[C64], &mut [C64]),
    record: impl Fn(f64, &[C64]) -> AmplitudeField,
    n: usize,
) -> Result<Trajectory> {
    let mut y = c0.values.clone();
    let mut rk = Rk4::new(n);
    let mut mon = Monitor::new(c0.norm_sqr());
    let mut snaps = vec![AmplitudeField { z: 0.0, ..c0.clone() }];
    for k in 0..steps {
        rk.step(&mut y, k as f64 * h, h, rhs);
        let last = k + 1 == steps;
        if last || (cfg.record_every > 0 && (k + 1) % cfg.record_every == 0) {
            let z = (k + 1) as f64 * h;
            let f = record(z, &y);
            mon.observe(z, f.norm_sqr(), Some(f.edge_norm_sqr(cfg.edge_sites)), cfg.edge_threshold)?;
            snaps.push(f);
        }
    }
    Ok(Trajectory { snapshots: snaps, norm_drift: mon.drift, steps, step: h, warnings: mon.warnings })
}

/// Discretized Dirac problem for `χ = ψ/√f`: `i∂_tχ = f·D χ + V χ`.
#[derive(Debug, Clone)]
pub struct DiracLattice {
    pub geometry: LatticeGeometry,
    pub f_grid: Vec<f64>,
    /// Per-waveguide detuning, mapped onto spinor components through the encoding.
    pub detuning: DetuningProfile,
    pub boundary: Boundary,
}

impl DiracLattice {
    pub fn new(geometry: LatticeGeometry, f_grid: Vec<f64>, detuning: DetuningProfile, boundary: Boundary) -> Result<Self> {
        if f_grid.len() != geometry.spinor_len() || f_grid.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Validation("f grid must have one positive value per spinor site".into()));
        }
        Ok(Self { geometry, f_grid, detuning, boundary })
    }

    pub fn from_spec(spec: &SpacetimeSpec, geometry: LatticeGeometry, boundary: Boundary) -> Result<Self> {
        let f = geometry.sample(|x, y| spec.f(x, y));
        Self::new(geometry, f, crate::design::detuning_profile(spec, &geometry), boundary)
    }

    /// Spinor-component potential `[V₁, V₂]` at time `t`.
    pub fn potential(&self, t: f64, buf: &mut Vec<f64>) -> Vec<[f64; 2]> {
        let g = &self.geometry;
        buf.resize(g.sites(), 0.0);
        self.detuning.fill(t, buf);
        let tables = EncodingTables::default();
        let cols = g.waveguide_cols();
        let mut v = vec![[0.0; 2]; g.spinor_len()];
        for b in 0..g.ny {
            for a in 0..cols {
                v[b * g.nx + a / 2][tables.component(a, b)] = buf[b * cols + a];
            }
        }
        v
    }

    /// `out = (f·D + V) χ`.
    pub fn apply(&self, chi: &[[C64; 2]], potential: &[[f64; 2]], out: &mut [[C64; 2]]) {
        let g = &self.geometry;
        let (nx, ny) = (g.nx, g.ny);
        let periodic = self.boundary == Boundary::Periodic;
        let zero = [C64::new(0.0, 0.0); 2];
        let at = |n: isize, m: isize| -> [C64; 2] {
            let (n, m) = if periodic {
                (n.rem_euclid(nx as isize), m.rem_euclid(ny as isize))
            } else if n < 0 || m < 0 || n >= nx as isize || m >= ny as isize {
                return zero;
            } else {
                (n, m)
            };
            chi[m as usize * nx + n as usize]
        };
        let (ix, iy) = (1.0 / g.dx, 0.5 / g.dy);
        for m in 0..ny {
            for n in 0..nx {
                let (ni, mi) = (n as isize, m as isize);
                let here = at(ni, mi);
                let (d1, d2) = if m % 2 == 0 {
                    (-(at(ni + 1, mi)[1] - here[1]) * ix, (here[0] - at(ni - 1, mi)[0]) * ix)
                } else {
                    (-(here[1] - at(ni - 1, mi)[1]) * ix, (at(ni + 1, mi)[0] - here[0]) * ix)
                };
                let (up, down) = (at(ni, mi + 1), at(ni, mi - 1));
                let y1 = -I * (up[1] - down[1]) * iy;
                let y2 = -I * (up[0] - down[0]) * iy;
                let i = m * nx + n;
                let f = self.f_grid[i];
                out[i] = [
                    (d1 + y1) * f + here[0] * potential[i][0],
                    (d2 + y2) * f + here[1] * potential[i][1],
                ];
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpinorTrajectory {
    /// Physical spinors `ψ = √f χ`.
    pub snapshots: Vec<SpinorField>,
    pub times: Vec<f64>,
    /// Drift of the conserved `Σ |χ|²/f`.
    pub norm_drift: f64,
    pub warnings: Vec<String>,
}

/// Integrates the discretized Dirac equation from physical spinor `psi0`.
pub fn evolve_dirac_lattice(problem: &DiracLattice, psi0: &SpinorField, t_end: f64, cfg: &IntegratorConfig) -> Result<SpinorTrajectory> {
    cfg.validate()?;
    let g = problem.geometry;
    if psi0.geometry != g {
        return Err(Error::Validation("initial spinor does not match the lattice geometry".into()));
    }
    let sqrt_f: Vec<f64> = problem.f_grid.iter().map(|f| f.sqrt()).collect();
    let n = g.spinor_len();
    // Flatten components so the generic integrator applies.
    let mut y: Vec<C64> = psi0.values.iter().zip(&sqrt_f).flat_map(|(p, s)| [p[0] / *s, p[1] / *s]).collect();
    let mut buf = Vec::new();
    let mut pot = problem.potential(0.0, &mut buf);
    let fmax = problem.f_grid.iter().cloned().fold(0.0, f64::max);
    let vmax = pot.iter().flat_map(|p| p.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let rate = fmax * (2.0 / g.dx + 1.0 / g.dy) + vmax;
    let (steps, h) = step_count(t_end, cfg.constant_step(rate));
    let dynamic = !problem.detuning.is_static();
    let mut chi = vec![[C64::new(0.0, 0.0); 2]; n];
    let mut out = vec![[C64::new(0.0, 0.0); 2]; n];
    let mut rhs = |t: f64, yv: &[C64], o: &mut [C64]| {
        if dynamic {
            pot = problem.potential(t, &mut buf);
        }
        for i in 0..n {
            chi[i] = [yv[2 * i], yv[2 * i + 1]];
        }
        problem.apply(&chi, &pot, &mut out);
        for i in 0..n {
            o[2 * i] = -I * out[i][0];
            o[2 * i + 1] = -I * out[i][1];
        }
    };
    let weighted = |yv: &[C64]| -> f64 {
        (0..n).map(|i| (yv[2 * i].norm_sqr() + yv[2 * i + 1].norm_sqr()) / problem.f_grid[i]).sum()
    };
    let to_psi = |yv: &[C64]| -> SpinorField {
        let values = (0..n).map(|i| [yv[2 * i] * sqrt_f[i], yv[2 * i + 1] * sqrt_f[i]]).collect();
        SpinorField { geometry: g, values }
    };
    let mut rk = Rk4::new(2 * n);
    let mut mon = Monitor::new(weighted(&y));
    let mut snaps = vec![psi0.clone()];
    let mut times = vec![0.0];
    let edge_cells = (cfg.edge_sites + 1) / 2;
    for k in 0..steps {
        rk.step(&mut y, k as f64 * h, h, &mut rhs);
        if k + 1 == steps || (cfg.record_every > 0 && (k + 1) % cfg.record_every == 0) {
            let t = (k + 1) as f64 * h;
            let edge = (problem.boundary == Boundary::Open).then(|| {
                edge_sum(g.nx, g.ny, edge_cells, |i| (y[2 * i].norm_sqr() + y[2 * i + 1].norm_sqr()) / problem.f_grid[i])
            });
            mon.observe(t, weighted(&y), edge, cfg.edge_threshold)?;
            snaps.push(to_psi(&y));
            times.push(t);
        }
    }
    Ok(SpinorTrajectory { snapshots: snaps, times, norm_drift: mon.drift, warnings: mon.warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StencilReport {
    pub trials: usize,
    pub max_relative_error: f64,
}

/// Compares encode → averaged generator → decode with the Dirac stencil applied
/// directly, on random spinor fields.
pub fn verify_stencil(design: &LatticeDesign, spec: &SpacetimeSpec, seed: u64) -> Result<StencilReport> {
    verify_stencil_trials(design, spec, seed, 100)
}

pub fn verify_stencil_trials(design: &LatticeDesign, spec: &SpacetimeSpec, seed: u64, trials: usize) -> Result<StencilReport> {
    let g = design.geometry;
    let ec = crate::design::effective_couplings(design)?;
    let links = ec.links();
    let lattice = DiracLattice::new(g, design.f_grid.clone(), crate::design::detuning_profile(spec, &g), Boundary::Open)?;
    let mut buf = Vec::new();
    let pot = lattice.potential(0.0, &mut buf);
    let detune = design.detuning.values(0.0, g.sites());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut out = vec![[C64::new(0.0, 0.0); 2]; g.spinor_len()];
    for _ in 0..trials {
        let mut r = || C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let psi = SpinorField::from_fn(g, |_, _| [r(), r()]);
        let c = encode(&psi, &design.f_grid)?;
        let mut kc = AmplitudeField::zeros(c.cols, c.rows);
        for (i, v) in kc.values.iter_mut().enumerate() {
            *v = c.values[i] * detune[i];
        }
        for &(s, t, k) in &links {
            kc.values[s] += c.values[t] * k;
            kc.values[t] += c.values[s] * k;
        }
        let lhs = decode(&kc, &design.f_grid, &g)?;
        let chi: Vec<[C64; 2]> = psi.values.iter().zip(&design.f_grid).map(|(p, f)| [p[0] / f.sqrt(), p[1] / f.sqrt()]).collect();
        lattice.apply(&chi, &pot, &mut out);
        let rhs = SpinorField {
            geometry: g,
            values: out.iter().zip(&design.f_grid).map(|(p, f)| [p[0] * f.sqrt(), p[1] * f.sqrt()]).collect(),
        };
        worst = worst.max(lhs.distance(&rhs) / rhs.norm());
    }
    Ok(StencilReport { trials, max_relative_error: worst })
}
