//! The lattice compiler: modulation channels, base coupling and detunings that make
//! the averaged coupled-mode equations reproduce a discretized Dirac operator.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spacetime::{ScalarField, SpacetimeSpec};
use crate::special_functions::{
    bessel_j, bisect, find_sign_flip_roots, invert_j0, j0, sign_flip_residual,
};
use crate::states::EncodingTables;

/// Spinor grid extents and spacings; `x_n = (n − Nx/2 + ½)δx`, `y_m = (m − Ny/2 + ½)δy`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeGeometry {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

impl LatticeGeometry {
    /// Even extents of at least 4 keep the origin between grid points.
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64) -> Result<Self> {
        let g = Self { nx, ny, dx, dy };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 4 || self.ny < 4 || self.nx % 2 != 0 || self.ny % 2 != 0 {
            return Err(Error::Validation(format!(
                "grid extents must be even and at least 4, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.dx > 0.0 && self.dy > 0.0 && self.dx.is_finite() && self.dy.is_finite()) {
            return Err(Error::Validation("grid spacings must be positive".into()));
        }
        Ok(())
    }

    pub fn x(&self, n: usize) -> f64 {
        (n as f64 - self.nx as f64 / 2.0 + 0.5) * self.dx
    }

    pub fn y(&self, m: usize) -> f64 {
        (m as f64 - self.ny as f64 / 2.0 + 0.5) * self.dy
    }

    pub fn spinor_len(&self) -> usize {
        self.nx * self.ny
    }

    /// Waveguide columns `a`; there are two per spinor column.
    pub fn waveguide_cols(&self) -> usize {
        2 * self.nx
    }

    pub fn sites(&self) -> usize {
        self.waveguide_cols() * self.ny
    }

    /// Flat index of waveguide `(a, b)`.
    pub fn site(&self, a: usize, b: usize) -> usize {
        b * self.waveguide_cols() + a
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// `δx / (2δy)`: equals 1 when equal link magnitudes realize the stencil.
    pub fn spacing_ratio(&self) -> f64 {
        self.dx / (2.0 * self.dy)
    }

    /// Samples a function of `(x, y)` at the spinor grid points.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.spinor_len());
        for m in 0..self.ny {
            for n in 0..self.nx {
                v.push(f(self.x(n), self.y(m)));
            }
        }
        v
    }
}

/// One modulation channel: dimensionless arguments `u_ab` with physical amplitude
/// `A = 2α u`, so that the detuning is `α u cos(α z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub q: u64,
    /// Indexed like [`LatticeGeometry::site`].
    pub args: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationSet {
    pub omega: f64,
    pub gamma: u32,
    pub channels: Vec<Channel>,
}

impl ModulationSet {
    /// Builds channels on the `q_j = 2^{jΓ}` ladder in the given order.
    pub fn new(omega: f64, gamma: u32, named_args: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if gamma < 1 {
            return Err(Error::Validation("gamma must be at least 1".into()));
        }
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::Validation("base frequency must be positive".into()));
        }
        let channels = named_args
            .into_iter()
            .enumerate()
            .map(|(j, (name, args))| Ok(Channel { name, q: ladder(gamma, j)?, args }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { omega, gamma, channels })
    }

    /// Same arguments, frequencies re-assigned for a different `Γ`.
    pub fn with_gamma(&self, gamma: u32) -> Result<Self> {
        let named = self.channels.iter().map(|c| (c.name.clone(), c.args.clone())).collect();
        Self::new(self.omega, gamma, named)
    }

    pub fn alpha(&self, j: usize) -> f64 {
        self.channels[j].q as f64 * self.omega
    }

    pub fn max_alpha(&self) -> f64 {
        (0..self.channels.len()).map(|j| self.alpha(j)).fold(0.0, f64::max)
    }

    /// The common period `2π/ω` of all channels.
    pub fn period(&self) -> f64 {
        std::f64::consts::TAU / self.omega
    }

    /// Accumulated phase `S_ab(z) = Σ_j u_j sin(α_j z)`.
    pub fn phase(&self, site: usize, z: f64) -> f64 {
        self.channels
            .iter()
            .enumerate()
            .map(|(j, c)| c.args[site] * (self.alpha(j) * z).sin())
            .sum()
    }

    /// Modulation detuning `σ_ab(z) = Σ_j α_j u_j cos(α_j z)`.
    pub fn detuning(&self, site: usize, z: f64) -> f64 {
        self.channels
            .iter()
            .enumerate()
            .map(|(j, c)| self.alpha(j) * c.args[site] * (self.alpha(j) * z).cos())
            .sum()
    }

    /// Product of `J₀(u_j(s) − u_j(t))` over channels.
    pub fn link_factor(&self, s: usize, t: usize) -> f64 {
        self.channels.iter().map(|c| j0(c.args[s] - c.args[t])).product()
    }

    /// Nonzero `(q_j, Δu_j)` pairs of a link.
    pub fn link_arguments(&self, s: usize, t: usize) -> Vec<(u64, f64)> {
        self.channels
            .iter()
            .filter_map(|c| {
                let d = c.args[s] - c.args[t];
                (d != 0.0).then_some((c.q, d))
            })
            .collect()
    }
}

fn ladder(gamma: u32, j: usize) -> Result<u64> {
    let e = gamma as u64 * j as u64;
    if e >= 63 {
        return Err(Error::Validation(format!("frequency ladder 2^{e} overflows")));
    }
    Ok(1u64 << e)
}

/// Static or time-dependent per-site detuning `s·m·e^Φ + φ − ∂_tΛ`.
#[derive(Debug, Clone)]
pub enum DetuningProfile {
    Static(Vec<f64>),
    Dynamic { spec: SpacetimeSpec, geometry: LatticeGeometry, tables: EncodingTables },
}

impl DetuningProfile {
    pub fn zero(geometry: &LatticeGeometry) -> Self {
        DetuningProfile::Static(vec![0.0; geometry.sites()])
    }

    pub fn is_static(&self) -> bool {
        matches!(self, DetuningProfile::Static(_))
    }

    pub fn fill(&self, z: f64, out: &mut [f64]) {
        match self {
            DetuningProfile::Static(v) => out.copy_from_slice(v),
            DetuningProfile::Dynamic { spec, geometry, tables } => {
                sample_detuning(spec, geometry, tables, z, out)
            }
        }
    }

    pub fn values(&self, z: f64, sites: usize) -> Vec<f64> {
        let mut v = vec![0.0; sites];
        self.fill(z, &mut v);
        v
    }
}

fn sample_detuning(spec: &SpacetimeSpec, g: &LatticeGeometry, tables: &EncodingTables, z: f64, out: &mut [f64]) {
    let cols = g.waveguide_cols();
    for m in 0..g.ny {
        for n in 0..g.nx {
            let (x, y) = (g.x(n), g.y(m));
            let mass = spec.mass * spec.phi.value(z, x, y).exp();
            let pot = spec.gauge_phi.value(z, x, y) - spec.gauge_lambda.gradient(z, x, y)[0];
            for a in [2 * n, 2 * n + 1] {
                out[m * cols + a] = tables.mass_sign(a, m) * mass + pot;
            }
        }
    }
}

/// Per-site detuning with `t` identified with `z`.
pub fn detuning_profile(spec: &SpacetimeSpec, geometry: &LatticeGeometry) -> DetuningProfile {
    let tables = EncodingTables::default();
    let fields_static = [&spec.phi, &spec.gauge_phi, &spec.gauge_lambda]
        .iter()
        .all(|f| f.is_static());
    if fields_static {
        let mut v = vec![0.0; geometry.sites()];
        sample_detuning(spec, geometry, &tables, 0.0, &mut v);
        DetuningProfile::Static(v)
    } else {
        DetuningProfile::Dynamic { spec: spec.clone(), geometry: *geometry, tables }
    }
}

/// Signed nearest-neighbour couplings; links leaving the grid are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveCouplings {
    pub cols: usize,
    pub rows: usize,
    /// Link `(a, b) – (a+1, b)` at index `b·cols + a`.
    pub kx: Vec<f64>,
    /// Link `(a, b) – (a, b+1)` at index `b·cols + a`.
    pub ky: Vec<f64>,
    pub residual_bound: f64,
}

impl EffectiveCouplings {
    /// All links as `(site, neighbour, coupling)`, skipping absent ones.
    pub fn links(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(2 * self.cols * self.rows);
        for b in 0..self.rows {
            for a in 0..self.cols {
                let i = b * self.cols + a;
                if a + 1 < self.cols {
                    out.push((i, i + 1, self.kx[i]));
                }
                if b + 1 < self.rows {
                    out.push((i, i + self.cols, self.ky[i]));
                }
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.links().iter().map(|l| l.2.abs()).fold(0.0, f64::max)
    }
}

/// Nearest-neighbour link pairs of a `cols × rows` waveguide grid.
pub fn nearest_links(cols: usize, rows: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for b in 0..rows {
        for a in 0..cols {
            let i = b * cols + a;
            if a + 1 < cols {
                v.push((i, i + 1));
            }
            if b + 1 < rows {
                v.push((i, i + cols));
            }
        }
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignFlags {
    pub diagonal_cancellation: bool,
    pub x_halving_modulation: bool,
    pub y_scaling_modulation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalReport {
    pub chi: f64,
    pub u3: f64,
    pub kx_factor: f64,
    pub ky_factor_before_fix: f64,
    pub ky_factor: f64,
    /// `|k_y / k_x|` after the fix, left unabsorbed.
    pub ky_kx_ratio: f64,
    pub max_diagonal_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub max_f: f64,
    pub xi1: f64,
    pub j0_xi1: f64,
    pub x_factor: f64,
    pub y_factor: f64,
    pub stencil_kx: f64,
    pub stencil_ky: f64,
    pub max_effective_coupling: f64,
    pub residual_bound: f64,
    pub diagonal: Option<DiagonalReport>,
}

#[derive(Debug, Clone)]
pub struct LatticeDesign {
    pub geometry: LatticeGeometry,
    pub modulations: ModulationSet,
    pub detuning: DetuningProfile,
    pub k0: f64,
    /// `f` sampled on the spinor grid.
    pub f_grid: Vec<f64>,
    pub flags: DesignFlags,
    pub report: DesignReport,
}

/// Serializable view of a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub geometry: LatticeGeometry,
    pub omega: f64,
    pub gamma: u32,
    pub k0: f64,
    pub channels: Vec<ChannelSummary>,
    pub flags: DesignFlags,
    pub report: DesignReport,
    pub static_detuning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub name: String,
    pub q: u64,
    pub alpha: f64,
    pub max_argument: f64,
}

impl LatticeDesign {
    pub fn summary(&self) -> DesignSummary {
        DesignSummary {
            geometry: self.geometry,
            omega: self.modulations.omega,
            gamma: self.modulations.gamma,
            k0: self.k0,
            channels: self
                .modulations
                .channels
                .iter()
                .enumerate()
                .map(|(j, c)| ChannelSummary {
                    name: c.name.clone(),
                    q: c.q,
                    alpha: self.modulations.alpha(j),
                    max_argument: c.args.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                })
                .collect(),
            flags: self.flags,
            report: self.report.clone(),
            static_detuning: self.detuning.is_static(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompileOptions {
    pub gamma: u32,
    /// `ω = freq_factor · max |k_eff|` unless `omega` is given.
    pub freq_factor: f64,
    pub omega: Option<f64>,
    pub diagonal_cancellation: bool,
    /// Shift `(Δa, Δb)` applied to the sign grid; nonzero values are a deliberate misalignment.
    pub sign_shift: (usize, usize),
    pub max_order: u32,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self { gamma: 3, freq_factor: 100.0, omega: None, diagonal_cancellation: false, sign_shift: (0, 0), max_order: 64 }
    }
}

/// Period-2 sign grid: arguments `{0, 3ξ₁}` on even rows and `{ξ₁, 2ξ₁}` on odd rows.
pub fn sign_modulation(xi1: f64, geometry: &LatticeGeometry, shift: (usize, usize)) -> Result<Vec<f64>> {
    if !(xi1 > 0.0) || sign_flip_residual(xi1).abs() >= 1e-10 {
        return Err(Error::Validation(format!("{xi1} is not a root of J0(x) + J0(3x)")));
    }
    let cols = geometry.waveguide_cols();
    let mut v = Vec::with_capacity(geometry.sites());
    for b in 0..geometry.ny {
        for a in 0..cols {
            let (pa, pb) = ((a + shift.0) % 2, (b + shift.1) % 2);
            let mult = [[0.0, 3.0], [1.0, 2.0]][pb][pa];
            v.push(mult * xi1);
        }
    }
    Ok(v)
}

/// Checkerboard magnitude channels with `J₀(u) = √(h/max h)`, `h(a,b) = f(⌊a/2⌋, b)`.
pub fn magnitude_modulations(f_grid: &[f64], geometry: &LatticeGeometry) -> Result<(Vec<f64>, Vec<f64>)> {
    if f_grid.len() != geometry.spinor_len() {
        return Err(Error::Validation("f grid shape mismatch".into()));
    }
    if let Some(v) = f_grid.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!("f must be positive, found {v}")));
    }
    let hmax = f_grid.iter().cloned().fold(0.0, f64::max);
    let cols = geometry.waveguide_cols();
    let mut ga = vec![0.0; geometry.sites()];
    let mut gb = vec![0.0; geometry.sites()];
    let mut cache: HashMap<u64, f64> = HashMap::new();
    for b in 0..geometry.ny {
        for a in 0..cols {
            let h = f_grid[b * geometry.nx + a / 2];
            let u = match cache.get(&h.to_bits()) {
                Some(&u) => u,
                None => {
                    let u = invert_j0((h / hmax).sqrt().min(1.0))?;
                    cache.insert(h.to_bits(), u);
                    u
                }
            };
            if (a + b) % 2 == 0 {
                ga[b * cols + a] = u;
            } else {
                gb[b * cols + a] = u;
            }
        }
    }
    Ok((ga, gb))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

/// Channel that rescales one link direction so anisotropic spacings satisfy the stencil.
#[derive(Debug, Clone, PartialEq)]
pub struct SpacingChannel {
    pub axis: Axis,
    pub factor: f64,
    pub args: Vec<f64>,
}

/// `None` when `δx = 2δy`; otherwise an alternating channel with `J₀(u)` equal to
/// `δx/(2δy)` on `y` links or `2δy/δx` on `x` links.
pub fn spacing_modulation(geometry: &LatticeGeometry) -> Result<Option<SpacingChannel>> {
    let r = geometry.spacing_ratio();
    if (r - 1.0).abs() < 1e-12 {
        return Ok(None);
    }
    let (axis, factor) = if r < 1.0 { (Axis::Y, r) } else { (Axis::X, 1.0 / r) };
    let u = invert_j0(factor)?;
    let cols = geometry.waveguide_cols();
    let mut args = vec![0.0; geometry.sites()];
    for b in 0..geometry.ny {
        for a in 0..cols {
            let odd = match axis {
                Axis::X => a % 2 == 1,
                Axis::Y => b % 2 == 1,
            };
            if odd {
                args[b * cols + a] = u;
            }
        }
    }
    Ok(Some(SpacingChannel { axis, factor, args }))
}

/// First zero of `J₁`, where `J₀` reaches its minimum.
pub fn j1_first_zero() -> f64 {
    bisect(|x| bessel_j(1, x).expect("small argument"), 3.5, 4.0)
}

/// Three-channel preset in which every diagonal link contains a `J₀(χ)` factor.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalCancellation {
    pub chi: f64,
    pub u3: f64,
    /// M1, M2 and the row channel C, indexed like [`LatticeGeometry::site`].
    pub channels: [Vec<f64>; 3],
    pub kx_factor: f64,
    pub ky_factor_before_fix: f64,
    pub ky_factor: f64,
}

pub fn diagonal_cancellation(chi: f64, geometry: &LatticeGeometry, u3: Option<f64>) -> Result<DiagonalCancellation> {
    if j0(chi).abs() >= 1e-10 {
        return Err(Error::Validation(format!("chi = {chi} is not a zero of J0")));
    }
    let u3 = u3.unwrap_or_else(j1_first_zero);
    if j0(u3) >= 0.0 {
        return Err(Error::Validation(format!("third-channel argument {u3} must give J0 < 0")));
    }
    // Half-χ units; the first row of each table is the odd row b.
    const M1: [[f64; 4]; 2] = [[0.5, 1.0, 0.5, 1.0], [-1.0, -0.5, 0.0, -0.5]];
    const M2: [[f64; 4]; 2] = [[0.0, -0.5, -1.0, -0.5], [0.5, 0.0, 0.5, 0.0]];
    let cols = geometry.waveguide_cols();
    let mut ch = [vec![0.0; geometry.sites()], vec![0.0; geometry.sites()], vec![0.0; geometry.sites()]];
    for b in 0..geometry.ny {
        for a in 0..cols {
            let i = b * cols + a;
            ch[0][i] = M1[b % 2][a % 4] * chi;
            ch[1][i] = M2[b % 2][a % 4] * chi;
            ch[2][i] = if b % 2 == 1 { u3 } else { 0.0 };
        }
    }
    let before = j0(1.5 * chi) * j0(0.5 * chi);
    Ok(DiagonalCancellation {
        chi,
        u3,
        channels: ch,
        kx_factor: j0(0.5 * chi).powi(2),
        ky_factor_before_fix: before,
        ky_factor: before * j0(u3),
    })
}

/// Product-of-`J₀` factors on both diagonals of every plaquette.
pub fn diagonal_factors(modulations: &ModulationSet, cols: usize, rows: usize) -> Vec<f64> {
    let mut v = Vec::new();
    for b in 0..rows.saturating_sub(1) {
        for a in 0..cols.saturating_sub(1) {
            let i = b * cols + a;
            v.push(modulations.link_factor(i, i + cols + 1));
            v.push(modulations.link_factor(i + 1, i + cols));
        }
    }
    v
}

/// `k0 · Π_j J₀(Δu_j)` on every link, with the residual bound of the neglected terms.
pub fn effective_couplings(design: &LatticeDesign) -> Result<EffectiveCouplings> {
    let mut ec = couplings_from(&design.modulations, design.k0, &design.geometry);
    ec.residual_bound = residual_bound(design, 64)?;
    Ok(ec)
}

fn couplings_from(modulations: &ModulationSet, k0: f64, g: &LatticeGeometry) -> EffectiveCouplings {
    let (cols, rows) = (g.waveguide_cols(), g.ny);
    let mut kx = vec![0.0; cols * rows];
    let mut ky = vec![0.0; cols * rows];
    for b in 0..rows {
        for a in 0..cols {
            let i = b * cols + a;
            if a + 1 < cols {
                kx[i] = k0 * modulations.link_factor(i, i + 1);
            }
            if b + 1 < rows {
                ky[i] = k0 * modulations.link_factor(i, i + cols);
            }
        }
    }
    EffectiveCouplings { cols, rows, kx, ky, residual_bound: 0.0 }
}

/// Largest bound, over links, on the absolute sum of the resonant Bessel products
/// dropped by the averaging (a dimensionless multiple of `k0`).
pub fn residual_bound(design: &LatticeDesign, max_order: u32) -> Result<f64> {
    residual_bound_for(&design.modulations, &design.geometry, max_order)
}

pub fn residual_bound_for(modulations: &ModulationSet, g: &LatticeGeometry, max_order: u32) -> Result<f64> {
    let threshold = 1u64 << modulations.gamma.min(62);
    if (max_order as u64) < threshold {
        return Err(Error::Accuracy(format!(
            "max_order {max_order} below 2^gamma = {threshold}"
        )));
    }
    let mut tables = BesselTables { max_order, rows: HashMap::new() };
    let mut cache: HashMap<Vec<(u64, u64)>, f64> = HashMap::new();
    let mut worst: f64 = 0.0;
    for (s, t) in nearest_links(g.waveguide_cols(), g.ny) {
        let mut args = modulations.link_arguments(s, t);
        args.iter_mut().for_each(|a| a.1 = a.1.abs());
        args.sort_by(|a, b| a.0.cmp(&b.0));
        let key: Vec<(u64, u64)> = args.iter().map(|&(q, x)| (q, x.to_bits())).collect();
        let v = match cache.get(&key) {
            Some(&v) => v,
            None => {
                let v = bound_set(&args, modulations.gamma, &mut tables)?;
                cache.insert(key, v);
                v
            }
        };
        worst = worst.max(v);
    }
    Ok(worst)
}

/// `|J_n(x)|` for `0 ≤ n ≤ max_order`, memoized per argument.
struct BesselTables {
    max_order: u32,
    rows: HashMap<u64, Vec<f64>>,
}

impl BesselTables {
    fn row(&mut self, x: f64) -> Result<&Vec<f64>> {
        if !self.rows.contains_key(&x.to_bits()) {
            let mut r = Vec::with_capacity(self.max_order as usize + 1);
            for n in 0..=self.max_order {
                r.push(bessel_j(n, x)?.abs());
            }
            let tail = r[self.max_order as usize];
            if tail > 1e-16 {
                return Err(Error::Accuracy(format!(
                    "|J_{}({x})| = {tail:.2e}; raise max_order",
                    self.max_order
                )));
            }
            self.rows.insert(x.to_bits(), r);
        }
        Ok(&self.rows[&x.to_bits()])
    }

    /// `Σ_n |J_n(x)|` over all integer orders.
    fn total(&mut self, x: f64) -> Result<f64> {
        let r = self.row(x)?;
        Ok(r[0] + 2.0 * r[1..].iter().sum::<f64>())
    }

    /// `Σ_{|n| ≥ from} |J_n(x)|`.
    fn tail(&mut self, x: f64, from: u64) -> Result<f64> {
        let r = self.row(x)?;
        Ok(2.0 * r.iter().skip(from as usize).sum::<f64>())
    }

    /// `Σ_{k ≠ 0} |J_{k·step}(x)|`.
    fn multiples(&mut self, x: f64, step: u64) -> Result<f64> {
        let r = self.row(x)?;
        Ok(2.0 * r.iter().step_by(step as usize).skip(1).sum::<f64>())
    }
}

fn bound_set(args: &[(u64, f64)], gamma: u32, tables: &mut BesselTables) -> Result<f64> {
    match args.len() {
        0 | 1 => Ok(0.0),
        2 => {
            let (slow, fast) = (args[0], args[1]);
            let ratio = fast.0 / slow.0;
            let fast_sum = tables.total(fast.1)? - tables.row(fast.1)?[0];
            Ok(fast_sum * tables.multiples(slow.1, ratio)?)
        }
        _ => {
            let from = 1u64 << gamma.min(62);
            let mut acc = 0.0;
            let totals: Vec<f64> = args.iter().map(|a| tables.total(a.1)).collect::<Result<_>>()?;
            for k in 0..args.len() {
                let rest: Vec<(u64, f64)> =
                    args.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, a)| *a).collect();
                acc += tables.row(args[k].1)?[0] * bound_set(&rest, gamma, tables)?;
                let others: f64 = totals.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, s)| s).product();
                acc += tables.tail(args[k].1, from)? * others;
            }
            Ok(acc)
        }
    }
}

/// Result of [`separability_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub passed: bool,
    pub max_violation: f64,
}

pub const SEPARABILITY_TOL: f64 = 1e-8;

/// Discrete mixed difference of `ln fx − ln fy` on the grid; separable iff it vanishes.
pub fn separability_check(
    fx: impl Fn(f64, f64) -> f64,
    fy: impl Fn(f64, f64) -> f64,
    geometry: &LatticeGeometry,
) -> SeparabilityReport {
    let l = geometry.sample(|x, y| fx(x, y).ln() - fy(x, y).ln());
    let nx = geometry.nx;
    let mut worst: f64 = 0.0;
    for m in 0..geometry.ny - 1 {
        for n in 0..nx - 1 {
            let d = l[(m + 1) * nx + n + 1] - l[(m + 1) * nx + n] - l[m * nx + n + 1] + l[m * nx + n];
            worst = worst.max((d / geometry.cell_area()).abs());
        }
    }
    let worst = if worst.is_finite() { worst } else { f64::INFINITY };
    SeparabilityReport { passed: worst < SEPARABILITY_TOL, max_violation: worst }
}

/// Assemble a design for `spec` on `geometry`.
pub fn compile(spec: &SpacetimeSpec, geometry: &LatticeGeometry, options: &CompileOptions) -> Result<LatticeDesign> {
    geometry.validate()?;
    let points: Vec<(f64, f64)> = (0..geometry.ny)
        .flat_map(|m| (0..geometry.nx).map(move |n| (n, m)))
        .map(|(n, m)| (geometry.x(n), geometry.y(m)))
        .collect();
    if !spec.is_static() {
        spec.check_rho_time_independent(&points, &[0.0, 0.5, 1.0, 2.0], 1e-10)?;
    }

    let ratio = &spec.xy_log_ratio;
    let sep = separability_check(
        |x, y| spec.f(x, y) * ratio.value(0.0, x, y).exp(),
        |x, y| spec.f(x, y),
        geometry,
    );
    if !sep.passed {
        return Err(Error::compile(
            "separability",
            format!("ln(fx/fy) has mixed derivative {:.3e}", sep.max_violation),
        ));
    }
    if points.iter().any(|&(x, y)| ratio.value(0.0, x, y).abs() > 1e-12) {
        return Err(Error::compile(
            "anisotropy",
            "separable fx != fy requires a coordinate rescaling that this compiler does not perform",
        ));
    }

    let f_grid = geometry.sample(|x, y| spec.f(x, y));
    if f_grid.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::compile("finite-fields", "f = exp(Phi - Psi) must be finite and positive on the grid"));
    }
    let max_f = f_grid.iter().cloned().fold(0.0, f64::max);
    let min_f = f_grid.iter().cloned().fold(f64::INFINITY, f64::min);

    let xi1 = find_sign_flip_roots(1)[0];
    let j0_xi1 = j0(xi1);
    let mut named: Vec<(String, Vec<f64>)> = vec![("sign".into(), sign_modulation(xi1, geometry, options.sign_shift)?)];
    if max_f / min_f - 1.0 > 1e-14 {
        let (ga, gb) = magnitude_modulations(&f_grid, geometry)?;
        named.push(("magnitude-a".into(), ga));
        named.push(("magnitude-b".into(), gb));
    }
    let spacing = spacing_modulation(geometry)?;
    let (mut x_factor, mut y_factor) = (1.0, 1.0);
    let mut flags = DesignFlags { diagonal_cancellation: options.diagonal_cancellation, x_halving_modulation: false, y_scaling_modulation: false };
    if let Some(s) = &spacing {
        match s.axis {
            Axis::X => {
                x_factor = s.factor;
                flags.x_halving_modulation = true;
                named.push(("x-halving".into(), s.args.clone()));
            }
            Axis::Y => {
                y_factor = s.factor;
                flags.y_scaling_modulation = true;
                named.push(("y-scaling".into(), s.args.clone()));
            }
        }
    }
    let mut diag_pre = None;
    let mut diag_scale = 1.0;
    if options.diagonal_cancellation {
        let d = diagonal_cancellation(crate::special_functions::j0_first_zero(), geometry, None)?;
        diag_scale = d.kx_factor;
        let [m1, m2, c] = d.channels.clone();
        named.push(("diag-m1".into(), m1));
        named.push(("diag-m2".into(), m2));
        named.push(("diag-c".into(), c));
        diag_pre = Some(d);
    }
    let k0 = max_f / (geometry.dx * j0_xi1.abs() * x_factor * diag_scale);

    let provisional = ModulationSet::new(1.0, options.gamma, named)?;
    let ec = couplings_from(&provisional, k0, geometry);
    let max_k = ec.max_abs();
    let omega = match options.omega {
        Some(w) => w,
        None => options.freq_factor * max_k,
    };
    let modulations = ModulationSet { omega, ..provisional };
    let residual = residual_bound_for(&modulations, geometry, options.max_order)?;

    let diagonal = diag_pre.map(|d| {
        let worst = diagonal_factors(&modulations, geometry.waveguide_cols(), geometry.ny)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        DiagonalReport {
            chi: d.chi,
            u3: d.u3,
            kx_factor: d.kx_factor,
            ky_factor_before_fix: d.ky_factor_before_fix,
            ky_factor: d.ky_factor,
            ky_kx_ratio: (d.ky_factor / d.kx_factor).abs(),
            max_diagonal_factor: worst,
        }
    });

    Ok(LatticeDesign {
        geometry: *geometry,
        modulations,
        detuning: detuning_profile(spec, geometry),
        k0,
        f_grid,
        flags,
        report: DesignReport {
            max_f,
            xi1,
            j0_xi1,
            x_factor,
            y_factor,
            stencil_kx: 1.0 / geometry.dx,
            stencil_ky: 1.0 / (2.0 * geometry.dy),
            max_effective_coupling: max_k,
            residual_bound: residual,
            diagonal,
        },
    })
}

/// Standalone design holding only the three diagonal-cancellation channels.
pub fn diagonal_preset(geometry: &LatticeGeometry, k0: f64, gamma: u32, omega: f64, with_fix: bool) -> Result<LatticeDesign> {
    let d = diagonal_cancellation(crate::special_functions::j0_first_zero(), geometry, None)?;
    let [m1, m2, c] = d.channels.clone();
    let mut named = vec![("diag-m1".to_string(), m1), ("diag-m2".to_string(), m2)];
    if with_fix {
        named.push(("diag-c".to_string(), c));
    }
    let modulations = ModulationSet::new(omega, gamma, named)?;
    let worst = diagonal_factors(&modulations, geometry.waveguide_cols(), geometry.ny)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let residual = residual_bound_for(&modulations, geometry, 64)?;
    let ky = if with_fix { d.ky_factor } else { d.ky_factor_before_fix };
    Ok(LatticeDesign {
        geometry: *geometry,
        modulations,
        detuning: DetuningProfile::zero(geometry),
        k0,
        f_grid: vec![1.0; geometry.spinor_len()],
        flags: DesignFlags { diagonal_cancellation: true, x_halving_modulation: false, y_scaling_modulation: false },
        report: DesignReport {
            max_f: 1.0,
            xi1: f64::NAN,
            j0_xi1: f64::NAN,
            x_factor: 1.0,
            y_factor: 1.0,
            stencil_kx: k0 * d.kx_factor,
            stencil_ky: k0 * ky,
            max_effective_coupling: k0 * d.kx_factor.abs().max(ky.abs()),
            residual_bound: residual,
            diagonal: Some(DiagonalReport {
                chi: d.chi,
                u3: d.u3,
                kx_factor: d.kx_factor,
                ky_factor_before_fix: d.ky_factor_before_fix,
                ky_factor: d.ky_factor,
                ky_kx_ratio: (ky / d.kx_factor).abs(),
                max_diagonal_factor: worst,
            }),
        },
    })
}

/// Helper for callers holding a plain closure for `f`.
pub fn conformal_factor_field(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> ScalarField {
    ScalarField::closure(move |_, x, y| f(x, y).ln())
}
