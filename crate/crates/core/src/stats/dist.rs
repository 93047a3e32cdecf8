//! Normal and Student t distribution functions.
//!
//! The checked entry points (`norm_cdf`, `norm_quantile`, `t_cdf`) validate
//! their arguments. The unchecked helpers (`phi`, `phi_inv`, ...) are used in
//! inner loops and map infinite arguments to the obvious limits.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, inv_beta_reg, ln_beta};
use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn phi_density(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF, unchecked.
#[inline]
pub fn phi(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(x)` without cancellation.
#[inline]
pub fn phi_upper(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Standard normal quantile, unchecked. Returns `-inf`/`+inf` at 0 and 1.
pub fn phi_inv(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        -lower_quantile(1.0 - p)
    } else {
        lower_quantile(p)
    }
}

/// Quantile of the upper tail: the `z` with `1 - Φ(z) = q`.
///
/// Accurate for tiny `q` where `phi_inv(1 - q)` would lose everything.
pub fn phi_inv_upper(q: f64) -> f64 {
    -phi_inv(q)
}

// p in (0, 0.5]
fn lower_quantile(p: f64) -> f64 {
    let x0 = -SQRT_2 * erfc_inv(2.0 * p);
    let d = phi_density(x0);
    if d == 0.0 || !x0.is_finite() {
        return x0;
    }
    // one Newton step on the lower tail
    x0 - (phi(x0) - p) / d
}

/// Standard normal CDF with absolute error below 1e-12.
pub fn norm_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain(format!("norm_cdf: non-finite argument {x}")));
    }
    Ok(phi(x))
}

/// Standard normal quantile for `p` in the open unit interval.
pub fn norm_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("norm_quantile: p = {p} outside (0, 1)")));
    }
    Ok(phi_inv(p))
}

/// Student t CDF with `df` degrees of freedom.
pub fn t_cdf(x: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) || df.is_nan() {
        return Err(Error::domain(format!("t_cdf: df = {df} must be positive")));
    }
    if x.is_nan() {
        return Err(Error::domain("t_cdf: NaN argument"));
    }
    Ok(t_cdf_unchecked(x, df))
}

/// Upper tail `1 - T_df(x)`; accurate deep into the tail.
pub fn t_upper(x: f64, df: f64) -> f64 {
    if x == f64::INFINITY {
        return 0.0;
    }
    if x == f64::NEG_INFINITY {
        return 1.0;
    }
    if df.is_infinite() {
        return phi_upper(x);
    }
    let tail = 0.5 * beta_reg(0.5 * df, 0.5, df / (df + x * x));
    if x >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

pub(crate) fn t_cdf_unchecked(x: f64, df: f64) -> f64 {
    t_upper(-x, df)
}

/// Student t density.
pub fn t_density(x: f64, df: f64) -> f64 {
    if df.is_infinite() {
        return phi_density(x);
    }
    let log_norm = -0.5 * df.ln() - ln_beta(0.5 * df, 0.5);
    (log_norm - 0.5 * (df + 1.0) * (x * x / df).ln_1p()).exp()
}

/// Student t quantile.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if df.is_infinite() {
        return phi_inv(p);
    }
    if p > 0.5 {
        return t_upper_quantile(1.0 - p, df);
    }
    -t_upper_quantile(p, df)
}

/// The `x` with `1 - T_df(x) = q`, for `q` in (0, 1).
pub fn t_upper_quantile(q: f64, df: f64) -> f64 {
    if q > 0.5 {
        return -t_upper_quantile(1.0 - q, df);
    }
    if q == 0.5 {
        return 0.0;
    }
    let b = inv_beta_reg(0.5 * df, 0.5, 2.0 * q);
    let mut x = if b > 0.0 { (df * (1.0 / b - 1.0)).sqrt() } else { f64::INFINITY };
    if !x.is_finite() {
        return x;
    }
    // Newton on ln S(x) against ln x: nearly linear in the polynomial tail,
    // so it also repairs a poor starting point from the incomplete beta.
    let target = q.ln();
    for _ in 0..60 {
        let s = t_upper(x, df);
        let d = t_density(x, df);
        if s <= 0.0 || d <= 0.0 {
            break;
        }
        let g = s.ln() - target;
        let slope = -x * d / s;
        let step = g / slope;
        let next = x * (-step).exp();
        if !next.is_finite() || next <= 0.0 {
            break;
        }
        let done = (next - x).abs() <= 1e-15 * x;
        x = next;
        if done {
            break;
        }
    }
    x
}

/// Reference distribution of a stagewise test statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RefDist {
    Normal,
    StudentT { df: f64 },
}

impl RefDist {
    /// One-sided p-value `1 - G(stat)`.
    #[inline]
    pub fn upper_p(&self, stat: f64) -> f64 {
        match *self {
            RefDist::Normal => phi_upper(stat),
            RefDist::StudentT { df } => t_upper(stat, df),
        }
    }

    /// Normal score of the p-value: the `z` with `1 - Φ(z) = 1 - G(stat)`.
    pub fn z_score(&self, stat: f64) -> f64 {
        match *self {
            RefDist::Normal => stat,
            RefDist::StudentT { df } => {
                if stat >= 0.0 {
                    phi_inv_upper(t_upper(stat, df))
                } else {
                    phi_inv(t_upper(-stat, df))
                }
            }
        }
    }

    /// Statistic whose upper p-value equals `q`.
    pub fn upper_quantile(&self, q: f64) -> f64 {
        match *self {
            RefDist::Normal => phi_inv_upper(q),
            RefDist::StudentT { df } => {
                if q <= 0.0 {
                    f64::INFINITY
                } else if q >= 1.0 {
                    f64::NEG_INFINITY
                } else {
                    t_upper_quantile(q, df)
                }
            }
        }
    }
}
