//! Bessel functions of the first kind and the root/inversion helpers built on them.
//!
//! Values come from `libm::jn`, which switches between forward recurrence and a
//! normalized backward recurrence depending on the order and argument.

use crate::error::{Error, Result};

/// Largest `|x|` accepted by [`bessel_j`].
pub const MAX_ARGUMENT: f64 = 1.0e4;
/// Largest order accepted by [`bessel_j`].
pub const MAX_ORDER: u32 = 4096;

const SCAN_STEP: f64 = 0.05;

/// `J_n(x)` for a non-negative integer order.
pub fn bessel_j(order: u32, x: f64) -> Result<f64> {
    if !x.is_finite() || x.abs() > MAX_ARGUMENT {
        return Err(Error::Domain(format!(
            "bessel_j argument {x} outside [-{MAX_ARGUMENT}, {MAX_ARGUMENT}]"
        )));
    }
    if order > MAX_ORDER {
        return Err(Error::Domain(format!("bessel_j order {order} exceeds {MAX_ORDER}")));
    }
    Ok(libm::jn(order as i32, x))
}

/// `J_n(x)` for any integer order, using `J_{-n} = (-1)^n J_n`.
pub fn bessel_j_signed(order: i64, x: f64) -> Result<f64> {
    let n = u32::try_from(order.unsigned_abs())
        .map_err(|_| Error::Domain(format!("bessel_j order {order} too large")))?;
    let v = bessel_j(n, x)?;
    Ok(if order < 0 && n % 2 == 1 { -v } else { v })
}

/// `J_0(x)`; panics only for arguments outside the supported range.
pub fn j0(x: f64) -> f64 {
    bessel_j(0, x).expect("J0 argument within supported range")
}

/// First positive zero of `J_0`, bisected to machine precision.
pub fn j0_first_zero() -> f64 {
    bisect(j0, 2.3, 2.5)
}

/// Bisection on a sign-changing bracket until the interval stops shrinking.
pub(crate) fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut glo = g(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if (gm < 0.0) == (glo < 0.0) {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
    }
    if g(lo).abs() <= g(hi).abs() {
        lo
    } else {
        hi
    }
}

/// `J_0(xi) + J_0(3 xi)`, the function whose zeros make a sign-flip pair.
pub fn sign_flip_residual(xi: f64) -> f64 {
    j0(xi) + j0(3.0 * xi)
}

/// First `count` positive solutions of `J_0(xi) = -J_0(3 xi)`.
pub fn find_sign_flip_roots(count: usize) -> Vec<f64> {
    let mut roots = Vec::with_capacity(count);
    let mut a = SCAN_STEP;
    let mut ga = sign_flip_residual(a);
    while roots.len() < count {
        let b = a + SCAN_STEP;
        let gb = sign_flip_residual(b);
        if ga == 0.0 {
            roots.push(a);
        } else if (ga < 0.0) != (gb < 0.0) {
            roots.push(bisect(sign_flip_residual, a, b));
        }
        a = b;
        ga = gb;
    }
    roots
}

/// Solve `J_0(x) = target` on the first monotone branch `[0, j0_first_zero)`.
pub fn invert_j0(target: f64) -> Result<f64> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::Domain(format!("invert_j0 target {target} not in (0, 1]")));
    }
    if target == 1.0 {
        return Ok(0.0);
    }
    Ok(bisect(|x| j0(x) - target, 0.0, j0_first_zero()))
}

/// The two root families used by the lattice design.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BesselRootSet {
    pub j0_first_zero: f64,
    pub sign_flip_roots: Vec<f64>,
}

impl BesselRootSet {
    pub fn compute(count: usize) -> Self {
        Self {
            j0_first_zero: j0_first_zero(),
            sign_flip_roots: find_sign_flip_roots(count.max(1)),
        }
    }

    /// The smallest sign-flip root.
    pub fn xi1(&self) -> f64 {
        self.sign_flip_roots[0]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.j0_first_zero > 2.40 && self.j0_first_zero < 2.41) {
            return Err(Error::Validation("j0_first_zero outside (2.40, 2.41)".into()));
        }
        if self.sign_flip_roots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("sign_flip_roots not increasing".into()));
        }
        if let Some(r) = self
            .sign_flip_roots
            .iter()
            .find(|&&r| sign_flip_residual(r).abs() >= 1e-10)
        {
            return Err(Error::Validation(format!("sign-flip residual too large at {r}")));
        }
        Ok(())
    }
}
