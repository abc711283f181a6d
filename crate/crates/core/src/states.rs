//! Spinor fields on the `(n, m)` grid: positive-energy packets, spectral flat-space
//! propagation, truncation, and the encoding into waveguide amplitudes.

use std::f64::consts::{PI, SQRT_2};

use rustfft::FftPlanner;

use crate::design::LatticeGeometry;
use crate::dynamics::AmplitudeField;
use crate::error::{Error, Result};
use crate::C64;

const I: C64 = C64::new(0.0, 1.0);

/// Two-component complex samples, indexed `m * nx + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinorField {
    pub geometry: LatticeGeometry,
    pub values: Vec<[C64; 2]>,
}

impl SpinorField {
    pub fn zeros(geometry: LatticeGeometry) -> Self {
        let len = geometry.spinor_len();
        Self { geometry, values: vec![[C64::new(0.0, 0.0); 2]; len] }
    }

    pub fn new(geometry: LatticeGeometry, values: Vec<[C64; 2]>) -> Result<Self> {
        if values.len() != geometry.spinor_len() {
            return Err(Error::Validation(format!(
                "spinor field has {} samples, geometry needs {}",
                values.len(),
                geometry.spinor_len()
            )));
        }
        if values.iter().flatten().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::Validation("spinor field has non-finite entries".into()));
        }
        Ok(Self { geometry, values })
    }

    pub fn from_fn(geometry: LatticeGeometry, mut f: impl FnMut(f64, f64) -> [C64; 2]) -> Self {
        let mut values = Vec::with_capacity(geometry.spinor_len());
        for m in 0..geometry.ny {
            for n in 0..geometry.nx {
                values.push(f(geometry.x(n), geometry.y(m)));
            }
        }
        Self { geometry, values }
    }

    pub fn at(&self, n: usize, m: usize) -> [C64; 2] {
        self.values[m * self.geometry.nx + n]
    }

    /// `Σ |ψ|² δx δy`.
    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v[0].norm_sqr() + v[1].norm_sqr()).sum::<f64>()
            * self.geometry.cell_area()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `|ψ(n, m)|²` per grid point.
    pub fn density(&self) -> Vec<f64> {
        self.values.iter().map(|v| v[0].norm_sqr() + v[1].norm_sqr()).collect()
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn add_assign(&mut self, other: &SpinorField) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            a[0] += b[0];
            a[1] += b[1];
        }
    }

    /// `‖self − other‖` with the same area element as [`SpinorField::norm`].
    pub fn distance(&self, other: &SpinorField) -> f64 {
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a[0] - b[0]).norm_sqr() + (a[1] - b[1]).norm_sqr())
            .sum();
        (s * self.geometry.cell_area()).sqrt()
    }

    /// Density-weighted mean position.
    pub fn centroid(&self) -> [f64; 2] {
        let (mut sx, mut sy, mut w) = (0.0, 0.0, 0.0);
        for m in 0..self.geometry.ny {
            for n in 0..self.geometry.nx {
                let v = self.at(n, m);
                let d = v[0].norm_sqr() + v[1].norm_sqr();
                sx += d * self.geometry.x(n);
                sy += d * self.geometry.y(m);
                w += d;
            }
        }
        [sx / w, sy / w]
    }

    /// Norm carried by points within `sites` grid steps of the boundary.
    pub fn boundary_norm(&self, sites: usize) -> f64 {
        let g = &self.geometry;
        let mut s = 0.0;
        for m in 0..g.ny {
            for n in 0..g.nx {
                if n < sites || m < sites || n + sites >= g.nx || m + sites >= g.ny {
                    let v = self.at(n, m);
                    s += v[0].norm_sqr() + v[1].norm_sqr();
                }
            }
        }
        (s * g.cell_area()).sqrt()
    }

    /// Bilinear interpolation at an arbitrary point; zero outside the sampled rectangle.
    pub fn interpolate(&self, x: f64, y: f64) -> [C64; 2] {
        let g = &self.geometry;
        let fx = (x - g.x(0)) / g.dx;
        let fy = (y - g.y(0)) / g.dy;
        if !(fx >= 0.0 && fy >= 0.0 && fx <= (g.nx - 1) as f64 && fy <= (g.ny - 1) as f64) {
            return [C64::new(0.0, 0.0); 2];
        }
        let n = (fx.floor() as usize).min(g.nx - 2);
        let m = (fy.floor() as usize).min(g.ny - 2);
        let (tx, ty) = (fx - n as f64, fy - m as f64);
        let w = [
            ((1.0 - tx) * (1.0 - ty), self.at(n, m)),
            (tx * (1.0 - ty), self.at(n + 1, m)),
            ((1.0 - tx) * ty, self.at(n, m + 1)),
            (tx * ty, self.at(n + 1, m + 1)),
        ];
        let mut out = [C64::new(0.0, 0.0); 2];
        for (wt, v) in w {
            out[0] += v[0] * wt;
            out[1] += v[1] * wt;
        }
        out
    }

    /// Value at the grid node nearest to `(x, y)`; zero outside the grid.
    pub fn nearest(&self, x: f64, y: f64) -> [C64; 2] {
        let g = &self.geometry;
        let n = ((x - g.x(0)) / g.dx).round();
        let m = ((y - g.y(0)) / g.dy).round();
        if n < 0.0 || m < 0.0 || n >= g.nx as f64 || m >= g.ny as f64 {
            return [C64::new(0.0, 0.0); 2];
        }
        self.at(n as usize, m as usize)
    }
}

/// `h(k) = σ_y k_x + σ_x k_y + m σ_z` as `(h11, h12)`; `h22 = −h11`, `h21 = conj(h12)`.
pub fn dirac_symbol(kx: f64, ky: f64, mass: f64) -> (f64, C64) {
    (mass, C64::new(ky, -kx))
}

pub fn dirac_energy(kx: f64, ky: f64, mass: f64) -> f64 {
    (kx * kx + ky * ky + mass * mass).sqrt()
}

/// Unit eigenvector of `h(k)` with eigenvalue `+E(k)`.
///
/// At `k = 0, m = 0` the symbol vanishes; the limit along `+k_x`, `(1, i)/√2`, is used.
pub fn positive_energy_spinor(kx: f64, ky: f64, mass: f64) -> [C64; 2] {
    let e = dirac_energy(kx, ky, mass);
    let (_, h12) = dirac_symbol(kx, ky, mass);
    let u = [C64::new(e + mass, 0.0), h12.conj()];
    let nrm = (u[0].norm_sqr() + u[1].norm_sqr()).sqrt();
    if nrm == 0.0 {
        return [C64::new(1.0 / SQRT_2, 0.0), C64::new(0.0, 1.0 / SQRT_2)];
    }
    [u[0] / nrm, u[1] / nrm]
}

/// `P₊(k) = (E + h(k)) / (2E)`; requires `E > 0`.
pub fn positive_projector(kx: f64, ky: f64, mass: f64) -> [[C64; 2]; 2] {
    let e = dirac_energy(kx, ky, mass);
    let (h11, h12) = dirac_symbol(kx, ky, mass);
    let s = 1.0 / (2.0 * e);
    [
        [C64::new((e + h11) * s, 0.0), h12 * s],
        [h12.conj() * s, C64::new((e - h11) * s, 0.0)],
    ]
}

/// `exp(−i h(k) t) v`.
pub fn apply_free_evolution(kx: f64, ky: f64, mass: f64, t: f64, v: [C64; 2]) -> [C64; 2] {
    let e = dirac_energy(kx, ky, mass);
    let (h11, h12) = dirac_symbol(kx, ky, mass);
    let (c, s) = if e > 0.0 { ((e * t).cos(), (e * t).sin() / e) } else { (1.0, t) };
    let hv0 = v[0] * h11 + h12 * v[1];
    let hv1 = h12.conj() * v[0] - v[1] * h11;
    [v[0] * c - I * hv0 * s, v[1] * c - I * hv1 * s]
}

/// Angular wavenumbers in transform order for `len` samples at spacing `d`.
pub fn wavenumbers(len: usize, d: f64) -> Vec<f64> {
    (0..len)
        .map(|j| {
            let f = if j < len / 2 { j as f64 } else { j as f64 - len as f64 };
            2.0 * PI * f / (len as f64 * d)
        })
        .collect()
}

/// In-place 2-D transform of `data[m * nx + n]`, unnormalized in both directions.
pub(crate) fn fft2(data: &mut [C64], nx: usize, ny: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (px, py) = if inverse {
        (planner.plan_fft_inverse(nx), planner.plan_fft_inverse(ny))
    } else {
        (planner.plan_fft_forward(nx), planner.plan_fft_forward(ny))
    };
    px.process(data);
    let mut t = vec![C64::new(0.0, 0.0); nx * ny];
    for m in 0..ny {
        for n in 0..nx {
            t[n * ny + m] = data[m * nx + n];
        }
    }
    py.process(&mut t);
    for m in 0..ny {
        for n in 0..nx {
            data[m * nx + n] = t[n * ny + m];
        }
    }
}

/// Separable direct DFT with the same conventions as [`fft2`].
pub(crate) fn dft2_direct(data: &mut [C64], nx: usize, ny: usize, inverse: bool) {
    let sign = if inverse { 1.0 } else { -1.0 };
    let line = |v: &[C64], len: usize| -> Vec<C64> {
        (0..len)
            .map(|j| {
                (0..len)
                    .map(|n| v[n] * C64::from_polar(1.0, sign * 2.0 * PI * ((j * n) % len) as f64 / len as f64))
                    .sum()
            })
            .collect()
    };
    for m in 0..ny {
        let out = line(&data[m * nx..(m + 1) * nx], nx);
        data[m * nx..(m + 1) * nx].copy_from_slice(&out);
    }
    for n in 0..nx {
        let col: Vec<C64> = (0..ny).map(|m| data[m * nx + n]).collect();
        for (m, v) in line(&col, ny).into_iter().enumerate() {
            data[m * nx + n] = v;
        }
    }
}

/// Which discrete Fourier implementation to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Fast,
    /// Quadratic-cost reference; only accepted up to 64 × 64.
    Direct,
}

pub const DIRECT_DFT_LIMIT: usize = 64;

fn transform(data: &mut [C64], nx: usize, ny: usize, inverse: bool, kind: Transform) -> Result<()> {
    match kind {
        Transform::Fast => fft2(data, nx, ny, inverse),
        Transform::Direct => {
            if nx > DIRECT_DFT_LIMIT || ny > DIRECT_DFT_LIMIT {
                return Err(Error::Validation(format!(
                    "direct DFT limited to {DIRECT_DFT_LIMIT}x{DIRECT_DFT_LIMIT}"
                )));
            }
            dft2_direct(data, nx, ny, inverse)
        }
    }
    Ok(())
}

fn split(field: &SpinorField) -> [Vec<C64>; 2] {
    [field.values.iter().map(|v| v[0]).collect(), field.values.iter().map(|v| v[1]).collect()]
}

fn join(geometry: LatticeGeometry, c: [Vec<C64>; 2]) -> SpinorField {
    let values = c[0].iter().zip(&c[1]).map(|(a, b)| [*a, *b]).collect();
    SpinorField { geometry, values }
}

/// Gaussian packet on the positive-energy branch, normalized to `1/√2`.
///
/// `width` is the momentum-space standard deviation of `|G(k)|²`, with
/// `G(k) = exp(−|k − k_c|² / (4 width²))`. The grid is treated as periodic.
pub fn positive_energy_gaussian(
    k_center: [f64; 2],
    width: f64,
    x_center: [f64; 2],
    mass: f64,
    geometry: &LatticeGeometry,
) -> Result<SpinorField> {
    if !(width > 0.0) {
        return Err(Error::Validation("packet width must be positive".into()));
    }
    let g = *geometry;
    let kmax_x = PI / g.dx;
    let kmax_y = PI / g.dy;
    if k_center[0].abs() >= kmax_x || k_center[1].abs() >= kmax_y {
        return Err(Error::Validation("packet momentum outside the Brillouin zone".into()));
    }
    let kx = wavenumbers(g.nx, g.dx);
    let ky = wavenumbers(g.ny, g.dy);
    let (x0, y0) = (g.x(0), g.y(0));
    let mut c = [vec![C64::new(0.0, 0.0); g.spinor_len()], vec![C64::new(0.0, 0.0); g.spinor_len()]];
    for (m, &qy) in ky.iter().enumerate() {
        for (n, &qx) in kx.iter().enumerate() {
            let d2 = (qx - k_center[0]).powi(2) + (qy - k_center[1]).powi(2);
            let amp = (-d2 / (4.0 * width * width)).exp();
            if amp == 0.0 {
                continue;
            }
            let phase = C64::from_polar(amp, qx * (x0 - x_center[0]) + qy * (y0 - x_center[1]));
            let u = positive_energy_spinor(qx, qy, mass);
            c[0][m * g.nx + n] = u[0] * phase;
            c[1][m * g.nx + n] = u[1] * phase;
        }
    }
    for comp in c.iter_mut() {
        fft2(comp, g.nx, g.ny, true);
    }
    let mut field = join(g, c);
    let nrm = field.norm();
    field.scale(1.0 / (SQRT_2 * nrm));
    Ok(field)
}

/// Fraction of the squared norm on the positive-energy branch, mode by mode.
pub fn positive_energy_fraction(field: &SpinorField, mass: f64) -> f64 {
    let g = field.geometry;
    let mut c = split(field);
    for comp in c.iter_mut() {
        fft2(comp, g.nx, g.ny, false);
    }
    let (kx, ky) = (wavenumbers(g.nx, g.dx), wavenumbers(g.ny, g.dy));
    let (mut pos, mut tot) = (0.0, 0.0);
    for (m, &qy) in ky.iter().enumerate() {
        for (n, &qx) in kx.iter().enumerate() {
            let i = m * g.nx + n;
            let v = [c[0][i], c[1][i]];
            let w = v[0].norm_sqr() + v[1].norm_sqr();
            tot += w;
            let u = positive_energy_spinor(qx, qy, mass);
            if dirac_energy(qx, qy, mass) == 0.0 {
                pos += w;
                continue;
            }
            pos += (u[0].conj() * v[0] + u[1].conj() * v[1]).norm_sqr();
        }
    }
    pos / tot
}

/// Multiply each Fourier mode by `exp(−i h(k) t)`; the grid is periodic.
pub fn flat_propagate(field: &SpinorField, t: f64, mass: f64) -> Result<SpinorField> {
    flat_propagate_with(field, t, mass, Transform::Fast)
}

pub fn flat_propagate_with(field: &SpinorField, t: f64, mass: f64, kind: Transform) -> Result<SpinorField> {
    let g = field.geometry;
    let edge = field.boundary_norm(1);
    if edge > 1e-8 {
        log::warn!("flat_propagate: boundary norm {edge:.3e} exceeds 1e-8; periodic images may interfere");
    }
    if t == 0.0 {
        return Ok(field.clone());
    }
    let mut c = split(field);
    for comp in c.iter_mut() {
        transform(comp, g.nx, g.ny, false, kind)?;
    }
    let (kx, ky) = (wavenumbers(g.nx, g.dx), wavenumbers(g.ny, g.dy));
    for (m, &qy) in ky.iter().enumerate() {
        for (n, &qx) in kx.iter().enumerate() {
            let i = m * g.nx + n;
            let v = apply_free_evolution(qx, qy, mass, t, [c[0][i], c[1][i]]);
            c[0][i] = v[0];
            c[1][i] = v[1];
        }
    }
    let inv = 1.0 / g.spinor_len() as f64;
    for comp in c.iter_mut() {
        transform(comp, g.nx, g.ny, true, kind)?;
        comp.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(join(g, c))
}

/// Outcome of [`truncate_mollify`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationReport {
    pub norm_before: f64,
    pub norm_after: f64,
    /// `‖ψ − ψ_truncated‖`.
    pub removed_norm: f64,
    pub support_points: usize,
}

/// Zero the field where `|ψ| < threshold` and taper it to zero over a band of
/// physical `ramp_width` inside the kept region, with a raised-cosine profile in
/// the distance to the discarded set.
pub fn truncate_mollify(field: &SpinorField, threshold: f64, ramp_width: f64) -> (SpinorField, TruncationReport) {
    let g = field.geometry;
    let (nx, ny) = (g.nx, g.ny);
    let mags: Vec<f64> = field.density().iter().map(|d| d.sqrt()).collect();
    let mut dist: Vec<f64> = mags.iter().map(|&a| if a < threshold { 0.0 } else { f64::INFINITY }).collect();
    // Two-pass chamfer distance transform with physical step lengths.
    let diag = (g.dx * g.dx + g.dy * g.dy).sqrt();
    let fwd = [(-1isize, 0isize, g.dx), (0, -1, g.dy), (-1, -1, diag), (1, -1, diag)];
    let pass = |dist: &mut Vec<f64>, n: usize, m: usize, offs: &[(isize, isize, f64)], sgn: isize| {
        let i = m * nx + n;
        for &(dn, dm, w) in offs {
            let (qn, qm) = (n as isize + sgn * dn, m as isize + sgn * dm);
            if qn >= 0 && qm >= 0 && (qn as usize) < nx && (qm as usize) < ny {
                let c = dist[qm as usize * nx + qn as usize] + w;
                if c < dist[i] {
                    dist[i] = c;
                }
            }
        }
    };
    for m in 0..ny {
        for n in 0..nx {
            pass(&mut dist, n, m, &fwd, 1);
        }
    }
    for m in (0..ny).rev() {
        for n in (0..nx).rev() {
            pass(&mut dist, n, m, &fwd, -1);
        }
    }
    let mut out = field.clone();
    let mut support = 0;
    for (v, &d) in out.values.iter_mut().zip(&dist) {
        let w = if d == 0.0 {
            0.0
        } else if ramp_width <= 0.0 || d >= ramp_width {
            1.0
        } else {
            0.5 * (1.0 - (PI * d / ramp_width).cos())
        };
        if w > 0.0 {
            support += 1;
        }
        v[0] *= w;
        v[1] *= w;
    }
    let report = TruncationReport {
        norm_before: field.norm(),
        norm_after: out.norm(),
        removed_norm: field.distance(&out),
        support_points: support,
    };
    (out, report)
}

/// Phase and component layout of the spinor-to-waveguide map.
///
/// Column `a` belongs to spinor column `n = ⌊a/2⌋`, row `b` to `m = b`. On rows with
/// `b + row_offset` even, even columns carry component 2 and odd columns component 1;
/// on the other rows the roles swap. The phase is `μ = (−1)^{n+1} i^m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EncodingTables {
    pub row_offset: usize,
}

impl EncodingTables {
    /// Component index (0 for the first, 1 for the second) carried by site `(a, b)`.
    pub fn component(&self, a: usize, b: usize) -> usize {
        let psi_row = (b + self.row_offset) % 2 == 0;
        match (psi_row, a % 2 == 0) {
            (true, true) | (false, false) => 1,
            _ => 0,
        }
    }

    pub fn phase(&self, a: usize, b: usize) -> C64 {
        let n = a / 2;
        let s = if n % 2 == 0 { -1.0 } else { 1.0 };
        let ipow = [C64::new(1.0, 0.0), I, C64::new(-1.0, 0.0), -I][b % 4];
        ipow * s
    }

    /// `+1` on sites carrying the first component, `−1` on the second.
    pub fn mass_sign(&self, a: usize, b: usize) -> f64 {
        if self.component(a, b) == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

fn check_f(f_grid: &[f64], geometry: &LatticeGeometry) -> Result<()> {
    if f_grid.len() != geometry.spinor_len() {
        return Err(Error::Validation("f grid shape mismatch".into()));
    }
    if let Some(v) = f_grid.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!("f grid must be positive and finite, found {v}")));
    }
    Ok(())
}

/// `c_ab = μ(a,b) · ψ_κ(n,m) / f(n,m)`, i.e. `Z = 1/√f` applied to `χ = ψ/√f`.
pub fn encode(spinor: &SpinorField, f_grid: &[f64]) -> Result<AmplitudeField> {
    encode_with(spinor, f_grid, &EncodingTables::default())
}

pub fn encode_with(spinor: &SpinorField, f_grid: &[f64], tables: &EncodingTables) -> Result<AmplitudeField> {
    let g = spinor.geometry;
    check_f(f_grid, &g)?;
    let cols = g.waveguide_cols();
    let mut values = Vec::with_capacity(cols * g.ny);
    for b in 0..g.ny {
        for a in 0..cols {
            let n = a / 2;
            let i = b * g.nx + n;
            values.push(tables.phase(a, b) * spinor.values[i][tables.component(a, b)] / f_grid[i]);
        }
    }
    Ok(AmplitudeField::new(cols, g.ny, values, 0.0))
}

/// Exact inverse of [`encode`].
pub fn decode(amplitudes: &AmplitudeField, f_grid: &[f64], geometry: &LatticeGeometry) -> Result<SpinorField> {
    decode_with(amplitudes, f_grid, geometry, &EncodingTables::default())
}

pub fn decode_with(
    amplitudes: &AmplitudeField,
    f_grid: &[f64],
    geometry: &LatticeGeometry,
    tables: &EncodingTables,
) -> Result<SpinorField> {
    check_f(f_grid, geometry)?;
    if amplitudes.cols != geometry.waveguide_cols() || amplitudes.rows != geometry.ny {
        return Err(Error::Validation("amplitude field does not match the geometry".into()));
    }
    let mut out = SpinorField::zeros(*geometry);
    for b in 0..amplitudes.rows {
        for a in 0..amplitudes.cols {
            let i = b * geometry.nx + a / 2;
            let c = amplitudes.values[b * amplitudes.cols + a];
            out.values[i][tables.component(a, b)] = c * f_grid[i] / tables.phase(a, b);
        }
    }
    Ok(out)
}

/// `Z` built by stepping along `x` on the first row and then along `y`, using
/// `Z(n',m')/Z(n,m) = √(f(n,m)/f(n',m'))`.
pub fn z_factor_x_first(f_grid: &[f64], nx: usize, ny: usize) -> Vec<f64> {
    let mut z = vec![0.0; nx * ny];
    z[0] = 1.0 / f_grid[0].sqrt();
    for n in 1..nx {
        z[n] = z[n - 1] * (f_grid[n - 1] / f_grid[n]).sqrt();
    }
    for m in 1..ny {
        for n in 0..nx {
            let (i, p) = (m * nx + n, (m - 1) * nx + n);
            z[i] = z[p] * (f_grid[p] / f_grid[i]).sqrt();
        }
    }
    z
}

/// As [`z_factor_x_first`] but stepping along `y` first.
pub fn z_factor_y_first(f_grid: &[f64], nx: usize, ny: usize) -> Vec<f64> {
    let mut z = vec![0.0; nx * ny];
    z[0] = 1.0 / f_grid[0].sqrt();
    for m in 1..ny {
        let (i, p) = (m * nx, (m - 1) * nx);
        z[i] = z[p] * (f_grid[p] / f_grid[i]).sqrt();
    }
    for m in 0..ny {
        for n in 1..nx {
            let (i, p) = (m * nx + n, m * nx + n - 1);
            z[i] = z[p] * (f_grid[p] / f_grid[i]).sqrt();
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom(nx: usize, ny: usize, dx: f64, dy: f64) -> LatticeGeometry {
        LatticeGeometry::new(nx, ny, dx, dy).unwrap()
    }

    fn random_field(g: LatticeGeometry, seed: u64) -> SpinorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = || C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        SpinorField::from_fn(g, |_, _| [r(), r()])
    }

    #[test]
    fn massless_eigenvector_along_x() {
        let u = positive_energy_spinor(0.7, 0.0, 0.0);
        assert!((u[0] - C64::new(1.0 / SQRT_2, 0.0)).norm() < 1e-15);
        assert!((u[1] - C64::new(0.0, 1.0 / SQRT_2)).norm() < 1e-15);
        let z = positive_energy_spinor(0.0, 0.0, 0.0);
        assert!((z[0] - u[0]).norm() < 1e-15 && (z[1] - u[1]).norm() < 1e-15);
    }

    proptest! {
        #[test]
        fn projector_idempotent_and_eigenvector(kx in -3.0f64..3.0, ky in -3.0f64..3.0, m in 0.0f64..2.0) {
            prop_assume!(dirac_energy(kx, ky, m) > 1e-6);
            let p = positive_projector(kx, ky, m);
            for i in 0..2 {
                for j in 0..2 {
                    let pp = p[i][0] * p[0][j] + p[i][1] * p[1][j];
                    prop_assert!((pp - p[i][j]).norm() < 1e-12);
                }
            }
            let u = positive_energy_spinor(kx, ky, m);
            let pu = [p[0][0] * u[0] + p[0][1] * u[1], p[1][0] * u[0] + p[1][1] * u[1]];
            prop_assert!((pu[0] - u[0]).norm() < 1e-12 && (pu[1] - u[1]).norm() < 1e-12);
        }

        #[test]
        fn propagation_is_shift_equivariant(seed in 0u64..50, sx in 0usize..8, sy in 0usize..8) {
            let g = geom(8, 8, 0.7, 0.4);
            let f = random_field(g, seed);
            let shift = |s: &SpinorField| {
                let mut o = s.clone();
                for m in 0..8 {
                    for n in 0..8 {
                        o.values[((m + sy) % 8) * 8 + (n + sx) % 8] = s.at(n, m);
                    }
                }
                o
            };
            let a = shift(&flat_propagate(&f, 1.3, 0.5).unwrap());
            let b = flat_propagate(&shift(&f), 1.3, 0.5).unwrap();
            prop_assert!(a.distance(&b) < 1e-12);
        }

        #[test]
        fn encode_is_invertible_and_weighted(seed in 0u64..50) {
            let g = geom(4, 6, 1.0, 0.5);
            let psi = random_field(g, seed);
            let f: Vec<f64> = (0..g.spinor_len()).map(|i| 0.5 + (i as f64 * 0.37).sin().abs()).collect();
            let c = encode(&psi, &f).unwrap();
            let back = decode(&c, &f, &g).unwrap();
            prop_assert!(back.distance(&psi) < 1e-12);
            let weighted: f64 = psi.values.iter().zip(&f).map(|(v, fi)| (v[0].norm_sqr() + v[1].norm_sqr()) / (fi * fi)).sum();
            prop_assert!((c.norm_sqr() - weighted).abs() < 1e-12 * weighted);
        }
    }

    #[test]
    fn packet_norm_and_positive_fraction() {
        let g = geom(64, 64, 0.5, 0.5);
        for m in [0.0, 1.0] {
            let p = positive_energy_gaussian([0.6, -0.2], 0.4, [1.0, -2.0], m, &g).unwrap();
            assert!((p.norm() - 1.0 / SQRT_2).abs() < 1e-10);
            assert!(positive_energy_fraction(&p, m) > 0.999);
            // the first component has a real positive momentum profile, so its
            // centroid sits exactly at the packet centre
            let (mut sx, mut sy, mut w) = (0.0, 0.0, 0.0);
            for mm in 0..g.ny {
                for n in 0..g.nx {
                    let d = p.at(n, mm)[0].norm_sqr();
                    sx += d * g.x(n);
                    sy += d * g.y(mm);
                    w += d;
                }
            }
            assert!((sx / w - 1.0).abs() < 1e-6 && (sy / w + 2.0).abs() < 1e-6, "{} {}", sx / w, sy / w);
        }
    }

    #[test]
    fn fast_transform_matches_direct() {
        let g = geom(24, 16, 0.3, 0.6);
        let f = random_field(g, 7);
        let a = flat_propagate_with(&f, 0.9, 0.8, Transform::Fast).unwrap();
        let b = flat_propagate_with(&f, 0.9, 0.8, Transform::Direct).unwrap();
        assert!(a.distance(&b) < 1e-12 * f.norm().max(1.0));
        assert!(flat_propagate_with(&SpinorField::zeros(geom(66, 4, 1.0, 1.0)), 1.0, 0.0, Transform::Direct).is_err());
    }

    #[test]
    fn propagation_identity_and_unitarity() {
        let g = geom(16, 16, 0.5, 0.5);
        let f = random_field(g, 3);
        assert_eq!(flat_propagate(&f, 0.0, 1.0).unwrap(), f);
        let p = flat_propagate(&f, 2.5, 1.0).unwrap();
        assert!((p.norm() - f.norm()).abs() < 1e-12 * f.norm());
    }

    #[test]
    fn centroid_moves_at_group_velocity() {
        let g = geom(128, 64, 0.25, 0.25);
        let (k, m, t) = (1.2, 0.8, 3.0);
        let p = positive_energy_gaussian([k, 0.0], 0.3, [-3.0, 0.0], m, &g).unwrap();
        let q = flat_propagate(&p, t, m).unwrap();
        // single-band packet: d<x>/dt is the group velocity averaged over |G(k)|²
        let (kxs, kys) = (wavenumbers(g.nx, g.dx), wavenumbers(g.ny, g.dy));
        let (mut num, mut den) = (0.0, 0.0);
        for ky in &kys {
            for kx in &kxs {
                let w = (-((kx - k).powi(2) + ky * ky) / (2.0 * 0.3f64.powi(2))).exp();
                num += w * kx / dirac_energy(*kx, *ky, m);
                den += w;
            }
        }
        let v = num / den;
        let shift = q.centroid()[0] - p.centroid()[0];
        assert!((shift / t - v).abs() < 1e-3 * v, "{} vs {v}", shift / t);
    }

    #[test]
    fn truncation_behaviour() {
        let g = geom(48, 48, 0.5, 0.5);
        let p = positive_energy_gaussian([0.3, 0.0], 0.5, [0.0, 0.0], 1.0, &g).unwrap();
        let min = p.density().iter().cloned().fold(f64::INFINITY, f64::min).sqrt();
        let (same, rep) = truncate_mollify(&p, 0.5 * min, 1.0);
        assert_eq!(same, p);
        assert_eq!(rep.removed_norm, 0.0);

        let peak = p.density().iter().cloned().fold(0.0, f64::max).sqrt();
        let (t, rep) = truncate_mollify(&p, 0.05 * peak, 1.0);
        assert!((rep.removed_norm - p.distance(&t)).abs() < 1e-15);
        assert!((rep.norm_after - t.norm()).abs() < 1e-15);
        for (v, d) in t.values.iter().zip(p.density()) {
            if d.sqrt() < 0.05 * peak {
                assert_eq!(v[0].norm() + v[1].norm(), 0.0);
            }
        }
        // compact support: nothing survives beyond the radius where |ψ| drops below threshold
        let c = p.centroid();
        let mut rmax: f64 = 0.0;
        for m in 0..48 {
            for n in 0..48 {
                let v = t.at(n, m);
                if v[0].norm() + v[1].norm() > 0.0 {
                    rmax = rmax.max(((g.x(n) - c[0]).powi(2) + (g.y(m) - c[1]).powi(2)).sqrt());
                }
            }
        }
        assert!(rmax < 12.0 && rep.support_points < 48 * 48);
    }

    #[test]
    fn z_recursions_agree() {
        let g = geom(10, 8, 1.0, 1.0);
        let f: Vec<f64> = (0..g.spinor_len())
            .map(|i| {
                let (n, m) = (i % 10, i / 10);
                (g.x(n).powi(2) + g.y(m).powi(2)).sqrt().powf(0.3)
            })
            .collect();
        let zx = z_factor_x_first(&f, 10, 8);
        let zy = z_factor_y_first(&f, 10, 8);
        for i in 0..f.len() {
            assert!((zx[i] - zy[i]).abs() < 1e-12);
            assert!((zx[i] * f[i].sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn encoding_tables_cell() {
        let t = EncodingTables::default();
        // ψ-row: (even a → component 2, odd a → component 1)
        assert_eq!((t.component(0, 0), t.component(1, 0)), (1, 0));
        assert_eq!((t.component(0, 1), t.component(1, 1)), (0, 1));
        assert_eq!(t.phase(0, 0), C64::new(-1.0, 0.0));
        assert_eq!(t.phase(2, 1), I);
        assert_eq!(t.phase(3, 3), -I);
        assert_eq!(t.phase(4, 0), t.phase(0, 4));
        assert_eq!(t.mass_sign(1, 0), 1.0);
        let f = vec![1.0; 16];
        let g = geom(4, 4, 2.0, 1.0);
        let psi = random_field(g, 1);
        assert!(decode(&encode(&psi, &f).unwrap(), &f, &g).unwrap().distance(&psi) == 0.0);
        let bad = vec![0.0; 16];
        assert!(matches!(encode(&psi, &bad), Err(Error::Domain(_))));
    }
}
