//! Backgrounds of the form `ds² = e^{2Φ}dt² − e^{2Ψ}(dx² + dy²)` with a pure-gauge
//! vector potential, their connection coefficients, and the conical-space maps.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C64;

/// A 2×2 complex matrix, row-major.
pub type Mat2 = [[C64; 2]; 2];

/// Radius inside which geometric evaluation is refused.
pub const ORIGIN_EXCLUSION: f64 = 1e-12;

pub mod mat2 {
    use super::Mat2;
    use crate::C64;

    pub const ZERO: Mat2 = [[C64::new(0.0, 0.0); 2]; 2];

    pub fn identity() -> Mat2 {
        diag(C64::new(1.0, 0.0), C64::new(1.0, 0.0))
    }
    pub fn diag(a: C64, b: C64) -> Mat2 {
        [[a, C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), b]]
    }
    pub fn sigma_x() -> Mat2 {
        let (o, l) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0));
        [[o, l], [l, o]]
    }
    pub fn sigma_y() -> Mat2 {
        let (o, i) = (C64::new(0.0, 0.0), C64::new(0.0, 1.0));
        [[o, -i], [i, o]]
    }
    pub fn sigma_z() -> Mat2 {
        diag(C64::new(1.0, 0.0), C64::new(-1.0, 0.0))
    }
    pub fn mul(a: &Mat2, b: &Mat2) -> Mat2 {
        let mut r = ZERO;
        for i in 0..2 {
            for j in 0..2 {
                r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        r
    }
    pub fn add(a: &Mat2, b: &Mat2) -> Mat2 {
        let mut r = *a;
        for i in 0..2 {
            for j in 0..2 {
                r[i][j] += b[i][j];
            }
        }
        r
    }
    pub fn scale(a: &Mat2, s: C64) -> Mat2 {
        let mut r = *a;
        r.iter_mut().flatten().for_each(|v| *v *= s);
        r
    }
    pub fn commutator(a: &Mat2, b: &Mat2) -> Mat2 {
        add(&mul(a, b), &scale(&mul(b, a), C64::new(-1.0, 0.0)))
    }
    pub fn adjoint(a: &Mat2) -> Mat2 {
        [[a[0][0].conj(), a[1][0].conj()], [a[0][1].conj(), a[1][1].conj()]]
    }
    pub fn apply(a: &Mat2, v: [C64; 2]) -> [C64; 2] {
        [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
    }
    /// Largest entrywise modulus of `a − b`.
    pub fn max_diff(a: &Mat2, b: &Mat2) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                m = m.max((a[i][j] - b[i][j]).norm());
            }
        }
        m
    }
}

/// Local gamma matrices `γ⁰ = σ_z`, `γ¹ = −iσ_x`, `γ² = iσ_y`.
pub fn gamma(a: usize) -> Mat2 {
    match a {
        0 => mat2::sigma_z(),
        1 => mat2::scale(&mat2::sigma_x(), C64::new(0.0, -1.0)),
        2 => mat2::scale(&mat2::sigma_y(), C64::new(0.0, 1.0)),
        _ => panic!("gamma index {a} out of range"),
    }
}

type FieldFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(f64, f64, f64) -> [f64; 3] + Send + Sync>;

/// Static scalar data on a regular grid, bilinearly interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledField {
    pub x0: f64,
    pub y0: f64,
    pub hx: f64,
    pub hy: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major with `x` fastest: `values[iy * nx + ix]`.
    pub values: Vec<f64>,
}

impl SampledField {
    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 || self.values.len() != self.nx * self.ny {
            return Err(Error::Validation("sampled field shape mismatch".into()));
        }
        if !(self.hx > 0.0 && self.hy > 0.0) {
            return Err(Error::Validation("sampled field spacings must be positive".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("sampled field has non-finite values".into()));
        }
        Ok(())
    }

    /// Bilinear interpolation; points outside the sampled rectangle are clamped to it.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let fx = ((x - self.x0) / self.hx).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((y - self.y0) / self.hy).clamp(0.0, (self.ny - 1) as f64);
        let ix = (fx.floor() as usize).min(self.nx - 2);
        let iy = (fy.floor() as usize).min(self.ny - 2);
        let (tx, ty) = (fx - ix as f64, fy - iy as f64);
        let v = |i: usize, j: usize| self.values[j * self.nx + i];
        (1.0 - ty) * ((1.0 - tx) * v(ix, iy) + tx * v(ix + 1, iy))
            + ty * ((1.0 - tx) * v(ix, iy + 1) + tx * v(ix + 1, iy + 1))
    }
}

/// A real field of `(t, x, y)`.
#[derive(Clone)]
pub enum ScalarField {
    Zero,
    Constant(f64),
    /// `coef · ln √(x² + y²)`, singular at the origin.
    LogRadius { coef: f64 },
    Sampled(SampledField),
    /// `time_independent` lets consumers sample the field once.
    Closure { f: FieldFn, grad: Option<GradFn>, time_independent: bool },
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScalarField::Zero => write!(f, "Zero"),
            ScalarField::Constant(c) => write!(f, "Constant({c})"),
            ScalarField::LogRadius { coef } => write!(f, "LogRadius({coef})"),
            ScalarField::Sampled(s) => write!(f, "Sampled({}x{})", s.nx, s.ny),
            ScalarField::Closure { grad, .. } => {
                write!(f, "Closure(analytic_grad={})", grad.is_some())
            }
        }
    }
}

impl ScalarField {
    pub fn closure(f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        ScalarField::Closure { f: Arc::new(f), grad: None, time_independent: false }
    }

    /// A closure of `(x, y)` only.
    pub fn spatial(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        ScalarField::Closure { f: Arc::new(move |_, x, y| f(x, y)), grad: None, time_independent: true }
    }

    pub fn closure_with_grad(
        f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        grad: impl Fn(f64, f64, f64) -> [f64; 3] + Send + Sync + 'static,
    ) -> Self {
        ScalarField::Closure { f: Arc::new(f), grad: Some(Arc::new(grad)), time_independent: false }
    }

    pub fn value(&self, t: f64, x: f64, y: f64) -> f64 {
        match self {
            ScalarField::Zero => 0.0,
            ScalarField::Constant(c) => *c,
            ScalarField::LogRadius { coef } => 0.5 * coef * (x * x + y * y).ln(),
            ScalarField::Sampled(s) => s.eval(x, y),
            ScalarField::Closure { f, .. } => f(t, x, y),
        }
    }

    /// `(∂_t, ∂_x, ∂_y)`, analytic where available, otherwise fourth-order
    /// central differences with step `1e-5·(1 + |coordinate|)`.
    pub fn gradient(&self, t: f64, x: f64, y: f64) -> [f64; 3] {
        match self {
            ScalarField::Zero | ScalarField::Constant(_) => [0.0; 3],
            ScalarField::LogRadius { coef } => {
                let r2 = x * x + y * y;
                [0.0, coef * x / r2, coef * y / r2]
            }
            ScalarField::Closure { grad: Some(g), .. } => g(t, x, y),
            _ => {
                let p = [t, x, y];
                let mut out = [0.0; 3];
                for (k, o) in out.iter_mut().enumerate() {
                    *o = central_difference(|s| {
                        let mut q = p;
                        q[k] = s;
                        self.value(q[0], q[1], q[2])
                    }, p[k]);
                }
                out
            }
        }
    }

    fn is_singular_at_origin(&self) -> bool {
        matches!(self, ScalarField::LogRadius { .. })
    }

    /// Whether the field is known not to depend on `t`.
    pub fn is_static(&self) -> bool {
        !matches!(self, ScalarField::Closure { time_independent: false, .. })
    }

    /// Same closure, declared independent of `t`.
    pub fn into_static(self) -> Self {
        match self {
            ScalarField::Closure { f, grad, .. } => ScalarField::Closure { f, grad, time_independent: true },
            other => other,
        }
    }
}

/// Fourth-order central difference of `g` at `s`.
pub fn central_difference(g: impl Fn(f64) -> f64, s: f64) -> f64 {
    let h = 1e-5 * (1.0 + s.abs());
    (8.0 * (g(s + h) - g(s - h)) - (g(s + 2.0 * h) - g(s - 2.0 * h))) / (12.0 * h)
}

/// Metric functions `Φ`, `Ψ`, gauge fields `φ`, `Λ` and the mass.
#[derive(Debug, Clone)]
pub struct SpacetimeSpec {
    pub phi: ScalarField,
    pub psi: ScalarField,
    pub gauge_phi: ScalarField,
    pub gauge_lambda: ScalarField,
    pub mass: f64,
    /// `ln(fx/fy)`; zero for the isotropic metrics handled by the compiler.
    pub xy_log_ratio: ScalarField,
}

impl SpacetimeSpec {
    pub fn flat(mass: f64) -> Self {
        Self {
            phi: ScalarField::Zero,
            psi: ScalarField::Zero,
            gauge_phi: ScalarField::Zero,
            gauge_lambda: ScalarField::Zero,
            mass,
            xy_log_ratio: ScalarField::Zero,
        }
    }

    /// The cone `Φ = 0`, `Ψ = −Δ ln r`, so that `f = e^{Φ−Ψ} = r^Δ`.
    pub fn conical(delta: f64, mass: f64) -> Self {
        Self {
            psi: if delta == 0.0 { ScalarField::Zero } else { ScalarField::LogRadius { coef: -delta } },
            ..Self::flat(mass)
        }
    }

    /// `Φ = Ψ = field`, time independent.
    pub fn conformal_static(field: ScalarField, mass: f64) -> Self {
        Self { phi: field.clone(), psi: field, ..Self::flat(mass) }
    }

    pub fn rho(&self, t: f64, x: f64, y: f64) -> f64 {
        self.phi.value(t, x, y) - self.psi.value(t, x, y)
    }

    /// `f = e^{ρ}` at `t = 0`.
    pub fn f(&self, x: f64, y: f64) -> f64 {
        self.rho(0.0, x, y).exp()
    }

    fn singular_at_origin(&self) -> bool {
        [&self.phi, &self.psi, &self.gauge_phi, &self.gauge_lambda]
            .iter()
            .any(|g| g.is_singular_at_origin())
    }

    /// True when every field ignores `t`, so `ρ` is trivially time independent.
    pub fn is_static(&self) -> bool {
        self.phi.is_static() && self.psi.is_static()
    }

    fn guard(&self, x: f64, y: f64) -> Result<()> {
        if self.singular_at_origin() && (x * x + y * y).sqrt() < ORIGIN_EXCLUSION {
            return Err(Error::Singularity(format!("evaluation at ({x}, {y}) is at the origin")));
        }
        Ok(())
    }

    /// Checks that `ρ = Φ − Ψ` does not depend on `t` at the given spatial points,
    /// by comparing values at the supplied times.
    pub fn check_rho_time_independent(&self, points: &[(f64, f64)], times: &[f64], tol: f64) -> Result<()> {
        for &(x, y) in points {
            self.guard(x, y)?;
            let base = self.rho(times.first().copied().unwrap_or(0.0), x, y);
            for &t in times {
                let r = self.rho(t, x, y);
                if !r.is_finite() {
                    return Err(Error::compile("finite-fields", format!("rho not finite at ({x}, {y}, t={t})")));
                }
                if (r - base).abs() > tol {
                    return Err(Error::compile(
                        "rho-time-independence",
                        format!("Phi - Psi changes by {} at ({x}, {y}) between t and t={t}", r - base),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Named closed-form backgrounds for configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SpacetimeConfig {
    Flat {
        #[serde(default)]
        mass: f64,
    },
    Conical {
        delta: f64,
        #[serde(default)]
        mass: f64,
    },
    /// `Φ = Ψ = amplitude · exp(−(x² + y²)/(2 width²))`.
    ConformalStatic {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        mass: f64,
    },
    /// `Φ = Ψ` from sampled data.
    SampledConformal {
        field: SampledField,
        #[serde(default)]
        mass: f64,
    },
    /// Flat `fy` with `ln(fx/fy) = coef·x²y²`, which is not separable for `coef ≠ 0`.
    AnisotropicQuartic {
        coef: f64,
        #[serde(default)]
        mass: f64,
    },
}

impl SpacetimeConfig {
    pub fn build(&self) -> Result<SpacetimeSpec> {
        Ok(match self {
            SpacetimeConfig::Flat { mass } => SpacetimeSpec::flat(*mass),
            SpacetimeConfig::Conical { delta, mass } => {
                ConicalSpec::new(*delta)?;
                SpacetimeSpec::conical(*delta, *mass)
            }
            SpacetimeConfig::ConformalStatic { amplitude, width, mass } => {
                let (a, w) = (*amplitude, *width);
                if !(w > 0.0) {
                    return Err(Error::Validation("conformal-static width must be positive".into()));
                }
                let field = ScalarField::closure_with_grad(
                    move |_, x, y| a * (-(x * x + y * y) / (2.0 * w * w)).exp(),
                    move |_, x, y| {
                        let g = a * (-(x * x + y * y) / (2.0 * w * w)).exp();
                        [0.0, -g * x / (w * w), -g * y / (w * w)]
                    },
                );
                SpacetimeSpec::conformal_static(field.into_static(), *mass)
            }
            SpacetimeConfig::SampledConformal { field, mass } => {
                field.validate()?;
                SpacetimeSpec::conformal_static(ScalarField::Sampled(field.clone()), *mass)
            }
            SpacetimeConfig::AnisotropicQuartic { coef, mass } => {
                let c = *coef;
                SpacetimeSpec {
                    xy_log_ratio: ScalarField::spatial(move |x, y| c * x * x * y * y),
                    ..SpacetimeSpec::flat(*mass)
                }
            }
        })
    }

    pub fn mass(&self) -> f64 {
        match self {
            SpacetimeConfig::Flat { mass }
            | SpacetimeConfig::Conical { mass, .. }
            | SpacetimeConfig::ConformalStatic { mass, .. }
            | SpacetimeConfig::SampledConformal { mass, .. }
            | SpacetimeConfig::AnisotropicQuartic { mass, .. } => *mass,
        }
    }
}

/// Deficit parameter of the cone; `f = r^Δ` and `g = 1/f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConicalSpec {
    pub delta: f64,
}

impl ConicalSpec {
    pub fn new(delta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::Validation(format!("deficit parameter {delta} not in [0, 1)")));
        }
        Ok(Self { delta })
    }

    pub fn f(&self, x: f64, y: f64) -> f64 {
        if self.delta == 0.0 {
            1.0
        } else {
            (x * x + y * y).sqrt().powf(self.delta)
        }
    }

    pub fn g(&self, x: f64, y: f64) -> f64 {
        1.0 / self.f(x, y)
    }

    pub fn spacetime(&self, mass: f64) -> SpacetimeSpec {
        SpacetimeSpec::conical(self.delta, mass)
    }
}

/// `Γ^μ_{νσ}` indexed `[μ][ν][σ]`, coordinates ordered `(t, x, y)`.
pub type Christoffel = [[[f64; 3]; 3]; 3];

#[derive(Debug, Clone)]
pub struct GeometryReport {
    pub christoffel: Christoffel,
    /// Diagonal of `e^a_μ`: `(e^Φ, e^Ψ, e^Ψ)`.
    pub vielbein: [f64; 3],
    pub spin_connection: [Mat2; 3],
}

struct Derivs {
    phi: f64,
    psi: f64,
    dphi: [f64; 3],
    dpsi: [f64; 3],
}

fn derivs(spec: &SpacetimeSpec, (t, x, y): (f64, f64, f64)) -> Result<Derivs> {
    spec.guard(x, y)?;
    let d = Derivs {
        phi: spec.phi.value(t, x, y),
        psi: spec.psi.value(t, x, y),
        dphi: spec.phi.gradient(t, x, y),
        dpsi: spec.psi.gradient(t, x, y),
    };
    if !(d.phi.is_finite() && d.psi.is_finite())
        || d.dphi.iter().chain(d.dpsi.iter()).any(|v| !v.is_finite())
    {
        return Err(Error::Singularity(format!("non-finite metric data at ({t}, {x}, {y})")));
    }
    Ok(d)
}

/// Christoffel symbols of the diagonal metric at `(t, x, y)`.
pub fn christoffel_at(spec: &SpacetimeSpec, point: (f64, f64, f64)) -> Result<Christoffel> {
    let d = derivs(spec, point)?;
    let [pt, px, py] = d.dphi;
    let [qt, qx, qy] = d.dpsi;
    let up = (2.0 * (d.psi - d.phi)).exp(); // e^{2(Ψ−Φ)}
    let down = 1.0 / up;
    let mut g = [[[0.0; 3]; 3]; 3];
    let mut set = |m: usize, n: usize, s: usize, v: f64| {
        g[m][n][s] = v;
        g[m][s][n] = v;
    };
    set(0, 0, 0, pt);
    set(0, 0, 1, px);
    set(0, 0, 2, py);
    set(0, 1, 1, qt * up);
    set(0, 2, 2, qt * up);
    set(1, 0, 0, px * down);
    set(2, 0, 0, py * down);
    set(1, 0, 1, qt);
    set(2, 0, 2, qt);
    set(1, 1, 1, qx);
    set(1, 1, 2, qy);
    set(1, 2, 2, -qx);
    set(2, 1, 1, -qy);
    set(2, 1, 2, qx);
    set(2, 2, 2, qy);
    Ok(g)
}

/// Connection matrices `Ω_0, Ω_1, Ω_2` for `γ⁰ = σ_z`, `γ¹ = −iσ_x`, `γ² = iσ_y`.
pub fn spin_connection_at(spec: &SpacetimeSpec, point: (f64, f64, f64)) -> Result<[Mat2; 3]> {
    let d = derivs(spec, point)?;
    let [_, px, py] = d.dphi;
    let [qt, qx, qy] = d.dpsi;
    let er = (d.phi - d.psi).exp();
    let c01 = mat2::commutator(&gamma(0), &gamma(1));
    let c02 = mat2::commutator(&gamma(0), &gamma(2));
    let c12 = mat2::commutator(&gamma(1), &gamma(2));
    let q = |m: &Mat2, s: f64| mat2::scale(m, C64::new(0.25 * s, 0.0));
    let omega0 = mat2::add(&q(&c01, er * px), &q(&c02, er * py));
    let omega1 = mat2::add(&q(&c01, qt / er), &q(&c12, -qy));
    let omega2 = mat2::add(&q(&c02, qt / er), &q(&c12, qx));
    Ok([omega0, omega1, omega2])
}

pub fn geometry_at(spec: &SpacetimeSpec, point: (f64, f64, f64)) -> Result<GeometryReport> {
    let d = derivs(spec, point)?;
    Ok(GeometryReport {
        christoffel: christoffel_at(spec, point)?,
        vielbein: [d.phi.exp(), d.psi.exp(), d.psi.exp()],
        spin_connection: spin_connection_at(spec, point)?,
    })
}

/// Parallel transport around the cone tip by `angle`: `exp(iΔσ_z·angle/2)`.
pub fn holonomy(delta: f64, angle: f64) -> Mat2 {
    rotation_lift(delta * angle)
}

/// Integrates `dV/ds = −Ω_μ ẋ^μ V` once around the circle of `radius` about the
/// origin, counter-clockwise, with `steps` RK4 steps.
pub fn parallel_transport_loop(spec: &SpacetimeSpec, radius: f64, steps: usize) -> Result<Mat2> {
    if !(radius > 0.0) || steps == 0 {
        return Err(Error::Validation("transport loop needs a positive radius and at least one step".into()));
    }
    let generator = |s: f64| -> Result<Mat2> {
        let om = spin_connection_at(spec, (0.0, radius * s.cos(), radius * s.sin()))?;
        let tangent = mat2::add(
            &mat2::scale(&om[1], C64::new(-radius * s.sin(), 0.0)),
            &mat2::scale(&om[2], C64::new(radius * s.cos(), 0.0)),
        );
        Ok(mat2::scale(&tangent, C64::new(-1.0, 0.0)))
    };
    let h = TAU / steps as f64;
    let c = |s: f64| C64::new(s, 0.0);
    let mut v = mat2::identity();
    for i in 0..steps {
        let s = i as f64 * h;
        let (g0, gm, g1) = (generator(s)?, generator(s + 0.5 * h)?, generator(s + h)?);
        let k1 = mat2::mul(&g0, &v);
        let k2 = mat2::mul(&gm, &mat2::add(&v, &mat2::scale(&k1, c(0.5 * h))));
        let k3 = mat2::mul(&gm, &mat2::add(&v, &mat2::scale(&k2, c(0.5 * h))));
        let k4 = mat2::mul(&g1, &mat2::add(&v, &mat2::scale(&k3, c(h))));
        let sum = mat2::add(&mat2::add(&k1, &mat2::scale(&k2, c(2.0))), &mat2::add(&mat2::scale(&k3, c(2.0)), &k4));
        v = mat2::add(&v, &mat2::scale(&sum, c(h / 6.0)));
    }
    Ok(v)
}

/// Spin-½ lift of a planar rotation: `exp(i·angle·σ_z/2)`.
pub fn rotation_lift(angle: f64) -> Mat2 {
    let p = C64::from_polar(1.0, 0.5 * angle);
    mat2::diag(p, p.conj())
}

/// Which flat chart of the cone a point is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Patch {
    /// Cut along the positive x-axis; global angle `τ ∈ (0, 2π)`.
    Theta,
    /// Cut along the negative x-axis; global angle `τ ∈ (−π, π)`.
    Phi,
}

/// Global angle in the range used by `patch`; fails on the patch cut or the origin.
pub fn patch_angle(patch: Patch, x: f64, y: f64) -> Result<f64> {
    if x == 0.0 && y == 0.0 {
        return Err(Error::PatchDomain("origin is not covered by any patch".into()));
    }
    match patch {
        Patch::Theta => {
            if y == 0.0 && x > 0.0 {
                return Err(Error::PatchDomain(format!("({x}, {y}) lies on the theta-patch cut")));
            }
            let t = y.atan2(x);
            Ok(if t < 0.0 { t + TAU } else { t })
        }
        Patch::Phi => {
            if y == 0.0 && x < 0.0 {
                return Err(Error::PatchDomain(format!("({x}, {y}) lies on the phi-patch cut")));
            }
            Ok(y.atan2(x))
        }
    }
}

/// Global Cartesian point to flat polar coordinates `(ρ', angle)` of the chosen patch,
/// with `ρ' = R^{1−Δ}/(1−Δ)` and the angle in `(0, 2π(1−Δ))`.
pub fn global_to_flat(delta: f64, patch: Patch, (x, y): (f64, f64)) -> Result<(f64, f64)> {
    let tau = patch_angle(patch, x, y)?;
    let s = 1.0 - delta;
    let r = (x * x + y * y).sqrt();
    let rho = r.powf(s) / s;
    let angle = match patch {
        Patch::Theta => s * tau,
        Patch::Phi => s * (tau + PI),
    };
    Ok((rho, angle))
}

/// Global Cartesian point to flat Cartesian coordinates of the chosen patch.
pub fn global_to_flat_cartesian(delta: f64, patch: Patch, p: (f64, f64)) -> Result<(f64, f64)> {
    let (rho, a) = global_to_flat(delta, patch, p)?;
    Ok((rho * a.cos(), rho * a.sin()))
}

/// Inverse of [`global_to_flat`].
pub fn flat_to_global(delta: f64, patch: Patch, (rho, angle): (f64, f64)) -> (f64, f64) {
    let s = 1.0 - delta;
    let r = (s * rho).powf(1.0 / s);
    let tau = match patch {
        Patch::Theta => angle / s,
        Patch::Phi => angle / s - PI,
    };
    (r * tau.cos(), r * tau.sin())
}

/// `α = (1−Δ)π`, the angle between the patches for `y > 0`.
pub fn alpha_angle(delta: f64) -> f64 {
    (1.0 - delta) * PI
}

/// `β = (1+Δ)π`, the angle between the patches for `y < 0`.
pub fn beta_angle(delta: f64) -> f64 {
    (1.0 + delta) * PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn metric(spec: &SpacetimeSpec, p: [f64; 3]) -> [f64; 3] {
        let (phi, psi) = (spec.phi.value(p[0], p[1], p[2]), spec.psi.value(p[0], p[1], p[2]));
        [(2.0 * phi).exp(), -(2.0 * psi).exp(), -(2.0 * psi).exp()]
    }

    fn metric_derivative(spec: &SpacetimeSpec, p: [f64; 3], k: usize) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = central_difference(|s| {
                let mut q = p;
                q[k] = s;
                metric(spec, q)[i]
            }, p[k]);
        }
        out
    }

    /// `½ g^{μλ}(∂_ν g_{λσ} + ∂_σ g_{λν} − ∂_λ g_{νσ})` from finite differences of the metric.
    fn christoffel_oracle(spec: &SpacetimeSpec, p: [f64; 3]) -> Christoffel {
        let g = metric(spec, p);
        let dg: Vec<[f64; 3]> = (0..3).map(|k| metric_derivative(spec, p, k)).collect();
        let dgd = |l: usize, a: usize, b: usize| if a == b { dg[l][a] } else { 0.0 };
        let mut out = [[[0.0; 3]; 3]; 3];
        for m in 0..3 {
            for n in 0..3 {
                for s in 0..3 {
                    out[m][n][s] = 0.5 / g[m] * (dgd(n, m, s) + dgd(s, m, n) - dgd(m, n, s));
                }
            }
        }
        out
    }

    fn wobbly() -> SpacetimeSpec {
        let phi = ScalarField::closure(|t, x, y| 0.3 * (x + 0.5 * t).sin() * y.cos() + 0.1 * t);
        let psi = ScalarField::closure(|t, x, y| 0.3 * (x + 0.5 * t).sin() * y.cos() + 0.1 * t - 0.2 * x * y);
        SpacetimeSpec { phi, psi, ..SpacetimeSpec::flat(1.0) }
    }

    #[test]
    fn flat_symbols_vanish() {
        let g = christoffel_at(&SpacetimeSpec::flat(0.0), (0.3, 1.0, -2.0)).unwrap();
        assert!(g.iter().flatten().flatten().all(|&v| v == 0.0));
        let om = spin_connection_at(&SpacetimeSpec::flat(0.0), (0.3, 1.0, -2.0)).unwrap();
        assert!(om.iter().all(|m| mat2::max_diff(m, &mat2::ZERO) == 0.0));
    }

    #[test]
    fn conical_example_and_oracle() {
        let spec = SpacetimeSpec::conical(0.5, 0.0);
        let g = christoffel_at(&spec, (0.0, 1.0, 0.0)).unwrap();
        assert!((g[1][1][1] + 0.5).abs() < 1e-14);
        assert_eq!(g[0][0][0], 0.0);
        let o = christoffel_oracle(&spec, [0.0, 1.0, 0.0]);
        for (a, b) in g.iter().flatten().flatten().zip(o.iter().flatten().flatten()) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(matches!(christoffel_at(&spec, (0.0, 0.0, 0.0)), Err(Error::Singularity(_))));
    }

    #[test]
    fn general_metric_matches_oracle_and_is_compatible() {
        let spec = wobbly();
        for p in [[0.2, 0.4, -0.7], [1.1, -0.3, 0.9], [-0.5, 2.0, 0.1]] {
            let g = christoffel_at(&spec, (p[0], p[1], p[2])).unwrap();
            let o = christoffel_oracle(&spec, p);
            for m in 0..3 {
                for n in 0..3 {
                    for s in 0..3 {
                        assert!((g[m][n][s] - o[m][n][s]).abs() < 1e-7, "Γ^{m}_{n}{s}");
                        assert_eq!(g[m][n][s], g[m][s][n]);
                    }
                }
            }
            // ∇_λ g_{μν} = ∂_λ g_{μν} − Γ^σ_{λμ} g_{σν} − Γ^σ_{λν} g_{μσ}
            let gm = metric(&spec, p);
            for l in 0..3 {
                let dg = metric_derivative(&spec, p, l);
                for m in 0..3 {
                    for n in 0..3 {
                        let d = if m == n { dg[m] } else { 0.0 };
                        let cov = d - g[n][l][m] * gm[n] - g[m][l][n] * gm[m];
                        assert!(cov.abs() < 1e-7, "nabla_{l} g_{m}{n} = {cov}");
                    }
                }
            }
        }
    }

    /// `Ω_ν = (1/8) ω_{abν}[γ^a, γ^b]` with `ω^a_{bν} = e^a_μ ∂_ν e^μ_b + e^a_μ e^σ_b Γ^μ_{σν}`.
    fn omega_oracle(spec: &SpacetimeSpec, p: [f64; 3]) -> [Mat2; 3] {
        let gam = christoffel_oracle(spec, p);
        let viel = |q: [f64; 3]| {
            let (a, b) = (spec.phi.value(q[0], q[1], q[2]), spec.psi.value(q[0], q[1], q[2]));
            [a.exp(), b.exp(), b.exp()]
        };
        let e = viel(p);
        let eta = [1.0, -1.0, -1.0];
        let mut out = [mat2::ZERO; 3];
        for nu in 0..3 {
            for a in 0..3 {
                for b in 0..3 {
                    let inv_b = |q: [f64; 3]| 1.0 / viel(q)[b];
                    let d_inv = if a == b {
                        central_difference(|s| {
                            let mut q = p;
                            q[nu] = s;
                            inv_b(q)
                        }, p[nu])
                    } else {
                        0.0
                    };
                    let w_up = e[a] * d_inv + e[a] / e[b] * gam[a][b][nu];
                    let w = eta[a] * w_up;
                    let c = mat2::commutator(&gamma(a), &gamma(b));
                    out[nu] = mat2::add(&out[nu], &mat2::scale(&c, C64::new(w / 8.0, 0.0)));
                }
            }
        }
        out
    }

    #[test]
    fn spin_connection_matches_oracle() {
        let conformal = SpacetimeSpec::conformal_static(
            ScalarField::closure(|_, x, y| 0.4 * (x * y).sin() + 0.1 * x),
            0.0,
        );
        for spec in [wobbly(), conformal, SpacetimeSpec::conical(0.3, 0.0)] {
            for p in [[0.1, 0.7, 0.3], [0.0, -1.2, 0.8]] {
                let om = spin_connection_at(&spec, (p[0], p[1], p[2])).unwrap();
                let or = omega_oracle(&spec, p);
                for nu in 0..3 {
                    assert!(mat2::max_diff(&om[nu], &or[nu]) < 1e-7, "Omega_{nu}");
                }
            }
        }
    }

    #[test]
    fn conical_spin_connection_is_rotation_only() {
        let spec = SpacetimeSpec::conical(0.4, 0.0);
        let om = spin_connection_at(&spec, (0.0, 2.0, 0.0)).unwrap();
        let c12 = mat2::commutator(&gamma(1), &gamma(2));
        let want = mat2::scale(&c12, C64::new(0.25 * (-0.4 / 2.0), 0.0));
        assert!(mat2::max_diff(&om[2], &want) < 1e-14);
        assert!(mat2::max_diff(&om[0], &mat2::ZERO) < 1e-14);
        // rotation generators are anti-Hermitian
        assert!(mat2::max_diff(&mat2::adjoint(&om[2]), &mat2::scale(&om[2], C64::new(-1.0, 0.0))) < 1e-15);
    }

    #[test]
    fn holonomy_examples_and_ode() {
        assert!(mat2::max_diff(&holonomy(0.0, TAU), &mat2::identity()) < 1e-15);
        let want = mat2::scale(&mat2::sigma_z(), C64::new(0.0, 1.0));
        assert!(mat2::max_diff(&holonomy(0.5, TAU), &want) < 1e-15);
        let v = holonomy(0.3, TAU);
        let rk = integrate_transport(0.3, TAU, 2000);
        assert!(mat2::max_diff(&v, &rk) < 1e-8);
        // geometric transport with the spin connection along a loop of radius 2
        let loop_v = parallel_transport_loop(&SpacetimeSpec::conical(0.3, 0.0), 2.0, 2000).unwrap();
        assert!(mat2::max_diff(&v, &loop_v) < 1e-8);
        assert!(mat2::max_diff(&rotation_lift(TAU), &mat2::scale(&mat2::identity(), C64::new(-1.0, 0.0))) < 1e-15);
        assert!(mat2::max_diff(&rotation_lift(2.0 * TAU), &mat2::identity()) < 1e-15);
    }

    /// RK4 for `dV/dτ = (iΔσ_z/2) V`.
    fn integrate_transport(delta: f64, angle: f64, steps: usize) -> Mat2 {
        let gen = mat2::scale(&mat2::sigma_z(), C64::new(0.0, 0.5 * delta));
        let h = angle / steps as f64;
        let f = |v: &Mat2| mat2::mul(&gen, v);
        let mut v = mat2::identity();
        for _ in 0..steps {
            let k1 = f(&v);
            let k2 = f(&mat2::add(&v, &mat2::scale(&k1, C64::new(0.5 * h, 0.0))));
            let k3 = f(&mat2::add(&v, &mat2::scale(&k2, C64::new(0.5 * h, 0.0))));
            let k4 = f(&mat2::add(&v, &mat2::scale(&k3, C64::new(h, 0.0))));
            let s = mat2::add(&mat2::add(&k1, &mat2::scale(&k2, C64::new(2.0, 0.0))),
                              &mat2::add(&mat2::scale(&k3, C64::new(2.0, 0.0)), &k4));
            v = mat2::add(&v, &mat2::scale(&s, C64::new(h / 6.0, 0.0)));
        }
        v
    }

    #[test]
    fn patch_examples() {
        let (r, a) = global_to_flat(0.0, Patch::Theta, (1.0, 1.0)).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-15 && (a - PI / 4.0).abs() < 1e-15);
        let (r, _) = global_to_flat(0.2, Patch::Theta, (0.0, 1.0)).unwrap();
        assert!((r - 1.25).abs() < 1e-15);
        assert!(global_to_flat(0.2, Patch::Theta, (1.0, 0.0)).is_err());
        assert!(global_to_flat(0.2, Patch::Phi, (-1.0, 0.0)).is_err());
        assert!(global_to_flat(0.2, Patch::Phi, (0.0, 0.0)).is_err());
        for d in [0.0, 0.1, 0.37] {
            assert!((alpha_angle(d) + beta_angle(d) - TAU).abs() < 1e-15);
        }
    }

    #[test]
    fn rho_check_flags_time_dependence() {
        let pts = [(0.5, 0.5), (1.0, -2.0)];
        assert!(wobbly().check_rho_time_independent(&pts, &[0.0, 1.0], 1e-10).is_ok());
        let bad = SpacetimeSpec { phi: ScalarField::closure(|t, x, _| t * x), ..SpacetimeSpec::flat(0.0) };
        let err = bad.check_rho_time_independent(&pts, &[0.0, 1.0], 1e-10).unwrap_err();
        assert!(matches!(err, Error::Compile { ref check, .. } if check == "rho-time-independence"));
    }

    proptest! {
        #[test]
        fn holonomy_composes(d in 0.0f64..1.0, a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let ab = mat2::mul(&holonomy(d, a), &holonomy(d, b));
            prop_assert!(mat2::max_diff(&ab, &holonomy(d, a + b)) < 1e-12);
        }

        #[test]
        fn patch_angles_differ_by_alpha_beta(d in 0.0f64..0.9, x in -5.0f64..5.0, y in -5.0f64..5.0) {
            prop_assume!(y.abs() > 1e-9);
            let (_, th) = global_to_flat(d, Patch::Theta, (x, y)).unwrap();
            let (_, ph) = global_to_flat(d, Patch::Phi, (x, y)).unwrap();
            let diff = (ph - th).rem_euclid(TAU);
            let want = if y > 0.0 { alpha_angle(d) } else { beta_angle(d) };
            prop_assert!((diff - want).abs() < 1e-12 || (diff - want).abs() > TAU - 1e-12);
        }

        #[test]
        fn flat_map_inverts(d in 0.0f64..0.9, x in -5.0f64..5.0, y in 0.01f64..5.0) {
            for patch in [Patch::Theta, Patch::Phi] {
                let q = global_to_flat(d, patch, (x, y)).unwrap();
                let (gx, gy) = flat_to_global(d, patch, q);
                prop_assert!((gx - x).abs() < 1e-9 && (gy - y).abs() < 1e-9);
            }
        }
    }
}
