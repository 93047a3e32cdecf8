//! Adaptive Simpson quadrature and bracketing root finders.

use crate::error::{Error, Result};

/// Default absolute tolerance for [`integrate`].
pub const DEFAULT_QUAD_TOL: f64 = 1e-9;
/// Recursion depth cap for adaptive Simpson.
pub const MAX_QUAD_DEPTH: u32 = 50;
/// Default bracket width for [`find_root`].
pub const DEFAULT_ROOT_TOL: f64 = 1e-9;

struct Simpson<'a, F> {
    f: &'a F,
    converged: bool,
}

impl<F: Fn(f64) -> f64> Simpson<'_, F> {
    #[allow(clippy::too_many_arguments)]
    fn refine(&mut self, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = (self.f)(lm);
        let frm = (self.f)(rm);
        let h = b - a;
        let left = h / 12.0 * (fa + 4.0 * flm + fm);
        let right = h / 12.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        let within = delta.abs() <= 15.0 * tol;
        if within || depth >= MAX_QUAD_DEPTH || h.abs() < 1e-15 {
            if !within {
                self.converged = false;
            }
            return left + right + delta / 15.0;
        }
        self.refine(a, m, fa, flm, fm, left, tol / 2.0, depth + 1)
            + self.refine(m, b, fm, frm, fb, right, tol / 2.0, depth + 1)
    }
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol` by adaptive Simpson.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(a <= b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::domain(format!("integrate: invalid interval [{a}, {b}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::domain(format!("integrate: tolerance {tol} must be positive")));
    }
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    // Seed with four panels so that integrands vanishing at a, (a+b)/2 and b
    // are not mistaken for zero.
    let mut total = 0.0;
    let mut s = Simpson { f: &f, converged: true };
    let panels = 4;
    let h = (b - a) / panels as f64;
    let mut left = a;
    let mut f_left = fa;
    for i in 0..panels {
        let right = if i + 1 == panels { b } else { a + (i + 1) as f64 * h };
        let f_right = if i + 1 == panels { fb } else { f(right) };
        let m = 0.5 * (left + right);
        let fm = f(m);
        let whole = (right - left) / 6.0 * (f_left + 4.0 * fm + f_right);
        total += s.refine(left, right, f_left, fm, f_right, whole, tol / panels as f64, 0);
        left = right;
        f_left = f_right;
    }
    if !total.is_finite() {
        return Err(Error::numeric("integrate: non-finite integral", None));
    }
    if !s.converged {
        return Err(Error::numeric(
            "integrate: depth cap reached before tolerance",
            Some(total),
        ));
    }
    Ok(total)
}

/// Finds a root of `f` in `[lo, hi]` by bisection.
///
/// The returned point lies in a bracket of width at most `tol` that contains
/// a sign change (or an exact zero).
pub fn find_root<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (mut lo, mut hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut flo = f(lo);
    let fhi = f(hi);
    if !flo.is_finite() || !fhi.is_finite() {
        return Err(Error::Bracket { lo, hi });
    }
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Bracket { lo, hi });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Bisects a monotone predicate that is false at `lo` and true at `hi`.
///
/// Returns the final `(lo, hi)` bracket, `hi - lo <= tol`, with the predicate
/// still false at `lo` and true at `hi`. The caller must guarantee the
/// endpoint values; they are not re-evaluated.
pub fn bisect_predicate<P: FnMut(f64) -> Result<bool>>(
    mut pred: P,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    let increasing = lo < hi;
    while (hi - lo).abs() > tol {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if pred(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    debug_assert_eq!(increasing, lo < hi);
    Ok((lo, hi))
}
