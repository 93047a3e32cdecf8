//! Max combination of two stagewise p-values and the overall p-value `Q`.
//!
//! Everything is evaluated on the normal-score scale where possible. A
//! p-value `p` corresponds to the score `z = Φ⁻¹(1 - p)`, and the combination
//! `C(p1, p2) = 1 - F(e)` is monotone in the statistic
//! `e = max(w z1 + √(1-w²) z2, w★ z1 + √(1-w★²) z2)`, so comparisons of `C`
//! values are comparisons of `e` values with the direction flipped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::bvn::bvn_upper;
use crate::stats::dist::{phi, phi_density, phi_inv_upper, phi_upper};
use crate::stats::numeric::{find_root, integrate};

/// Half-width of the score range used for quadrature and inversion.
pub const SCORE_LIMIT: f64 = 10.0;
const INVERSE_TOL: f64 = 1e-10;
const MIDDLE_TOL: f64 = 1e-11;
const CALIBRATION_TOL: f64 = 1e-8;

/// The two weights of the max combination test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCombination", into = "RawCombination")]
pub struct CombinationSpec {
    w: f64,
    w_star: f64,
    r: f64,
}

#[derive(Serialize, Deserialize)]
struct RawCombination {
    w: f64,
    w_star: f64,
}

impl TryFrom<RawCombination> for CombinationSpec {
    type Error = Error;
    fn try_from(raw: RawCombination) -> Result<Self> {
        CombinationSpec::new(raw.w, raw.w_star)
    }
}

impl From<CombinationSpec> for RawCombination {
    fn from(spec: CombinationSpec) -> Self {
        RawCombination { w: spec.w, w_star: spec.w_star }
    }
}

impl CombinationSpec {
    pub fn new(w: f64, w_star: f64) -> Result<Self> {
        for (name, v) in [("w", w), ("w_star", w_star)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::domain(format!("weight {name} = {v} outside (0, 1]")));
            }
        }
        let r = if w == w_star {
            1.0
        } else {
            (w * w_star + ((1.0 - w * w) * (1.0 - w_star * w_star)).sqrt()).min(1.0)
        };
        Ok(CombinationSpec { w, w_star, r })
    }

    /// Inverse normal combination with a single weight.
    pub fn inverse_normal(w: f64) -> Result<Self> {
        Self::new(w, w)
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn w_star(&self) -> f64 {
        self.w_star
    }

    /// Correlation between the two weighted scores.
    pub fn correlation(&self) -> f64 {
        self.r
    }

    fn weights(&self) -> [f64; 2] {
        [self.w, self.w_star]
    }

    /// Combined statistic `max(ε_w, ε_w★)` for stage scores `z1`, `z2`.
    #[inline]
    pub fn statistic(&self, z1: f64, z2: f64) -> f64 {
        let a = self.w * z1 + (1.0 - self.w * self.w).sqrt() * z2;
        let b = self.w_star * z1 + (1.0 - self.w_star * self.w_star).sqrt() * z2;
        a.max(b)
    }

    /// `1 - F(x)`: null probability that the combined statistic exceeds `x`.
    pub fn upper_tail(&self, x: f64) -> f64 {
        if self.r >= 1.0 {
            return phi_upper(x);
        }
        // P(max > x) = 2 P(ε > x) - P(both > x), free of cancellation near 0
        (2.0 * phi_upper(x) - bvn_upper(x, x, self.r)).clamp(0.0, 1.0)
    }

    /// `F⁻¹(1 - c)`: the statistic whose upper tail equals `c`.
    pub fn upper_tail_inv(&self, c: f64) -> Result<f64> {
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::domain(format!("tail probability {c} outside (0, 1)")));
        }
        if self.r >= 1.0 {
            return Ok(phi_inv_upper(c));
        }
        let f = |x: f64| self.upper_tail(x) - c;
        if f(SCORE_LIMIT) >= 0.0 {
            return Ok(SCORE_LIMIT);
        }
        if f(-SCORE_LIMIT) <= 0.0 {
            return Ok(-SCORE_LIMIT);
        }
        find_root(f, -SCORE_LIMIT, SCORE_LIMIT, INVERSE_TOL)
    }

    /// Smallest stage-2 score that makes the combined statistic reach `e`
    /// given stage-1 score `z1`. May be infinite when a weight equals one.
    pub fn stage2_threshold(&self, z1: f64, e: f64) -> f64 {
        self.weights()
            .iter()
            .map(|&w| {
                let s = (1.0 - w * w).sqrt();
                if s == 0.0 {
                    if z1 >= e {
                        f64::NEG_INFINITY
                    } else {
                        f64::INFINITY
                    }
                } else {
                    (e - w * z1) / s
                }
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Overall level and the stage-1 efficacy and futility bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBoundaries", into = "RawBoundaries")]
pub struct Boundaries {
    alpha: f64,
    alpha1: f64,
    alpha0: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBoundaries {
    alpha: f64,
    alpha1: f64,
    alpha0: f64,
}

impl TryFrom<RawBoundaries> for Boundaries {
    type Error = Error;
    fn try_from(raw: RawBoundaries) -> Result<Self> {
        Boundaries::new(raw.alpha, raw.alpha1, raw.alpha0)
    }
}

impl From<Boundaries> for RawBoundaries {
    fn from(b: Boundaries) -> Self {
        RawBoundaries { alpha: b.alpha, alpha1: b.alpha1, alpha0: b.alpha0 }
    }
}

impl Boundaries {
    /// Requires `0 <= alpha1 <= alpha <= alpha0 <= 1` and `0 < alpha < 1`.
    pub fn new(alpha: f64, alpha1: f64, alpha0: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::domain(format!("alpha = {alpha} outside (0, 1)")));
        }
        if !(alpha1 >= 0.0 && alpha1 <= alpha) {
            return Err(Error::domain(format!("alpha1 = {alpha1} must lie in [0, alpha = {alpha}]")));
        }
        if !(alpha0 >= alpha && alpha0 <= 1.0) {
            return Err(Error::domain(format!("alpha0 = {alpha0} must lie in [alpha = {alpha}, 1]")));
        }
        Ok(Boundaries { alpha, alpha1, alpha0 })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn alpha1(&self) -> f64 {
        self.alpha1
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    /// Stage-1 score above which the hypothesis is rejected at stage 1.
    pub fn efficacy_score(&self) -> f64 {
        phi_inv_upper(self.alpha1)
    }

    /// Stage-1 score at or below which the hypothesis is accepted at stage 1.
    pub fn futility_score(&self) -> f64 {
        phi_inv_upper(self.alpha0)
    }

    /// Branch of a stage-1 p-value.
    pub fn branch(&self, p1: f64) -> Branch {
        if p1 < self.alpha1 {
            Branch::Efficacy
        } else if p1 >= self.alpha0 {
            Branch::Futility
        } else {
            Branch::Middle
        }
    }
}

/// Stage-1 outcome region for one hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    Efficacy,
    Middle,
    Futility,
}

/// Branch of a stage-1 score against score-scale bounds `(b1, b0)`.
///
/// Mirrors [`Boundaries::branch`]: `p1 == alpha1` is middle and
/// `p1 == alpha0` is futility.
#[inline]
pub fn branch_of_score(z1: f64, b1: f64, b0: f64) -> Branch {
    if z1 > b1 {
        Branch::Efficacy
    } else if z1 <= b0 {
        Branch::Futility
    } else {
        Branch::Middle
    }
}

fn check_p(name: &str, p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} = {p} outside (0, 1)")))
    }
}

/// `C(p1, p2) = 1 - F(max{ε(w, p1, p2), ε(w★, p1, p2)})`.
pub fn comb_value(p1: f64, p2: f64, spec: &CombinationSpec) -> Result<f64> {
    check_p("p1", p1)?;
    check_p("p2", p2)?;
    Ok(spec.upper_tail(spec.statistic(phi_inv_upper(p1), phi_inv_upper(p2))))
}

/// `P(X ∈ [α₁, α₀), max{ε_w, ε_w★} >= e)` for a statistic threshold `e`,
/// expressed through stage-1 score bounds `z_lo = Φ⁻¹(1-α₀)` and
/// `z_hi = Φ⁻¹(1-α₁)`.
pub fn middle_prob_score(e: f64, z_lo: f64, z_hi: f64, spec: &CombinationSpec) -> Result<f64> {
    let lo = z_lo.max(-SCORE_LIMIT);
    let hi = z_hi.min(SCORE_LIMIT);
    if !(lo < hi) {
        return Ok(0.0);
    }
    let integrand = |z: f64| phi_density(z) * phi(-spec.stage2_threshold(z, e));
    // split where the integrand has kinks
    let mut cuts = vec![lo, hi];
    let [w, ws] = spec.weights();
    let (s, ss) = ((1.0 - w * w).sqrt(), (1.0 - ws * ws).sqrt());
    if w != ws {
        let denom = w * ss - ws * s;
        if denom != 0.0 {
            cuts.push(e * (ss - s) / denom);
        }
    }
    if s == 0.0 || ss == 0.0 {
        cuts.push(e);
    }
    cuts.retain(|c| c.is_finite() && *c >= lo && *c <= hi);
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    let mut total = 0.0;
    for pair in cuts.windows(2) {
        total += integrate(integrand, pair[0], pair[1], MIDDLE_TOL / cuts.len() as f64)?;
    }
    Ok(total.clamp(0.0, 1.0))
}

/// `P(α₀ > X >= α₁, C(X, Y) <= c)` for independent uniform `X`, `Y`.
pub fn middle_prob(c: f64, bounds: &Boundaries, spec: &CombinationSpec) -> Result<f64> {
    check_p("c", c)?;
    let e = spec.upper_tail_inv(c)?;
    middle_prob_score(e, bounds.futility_score(), bounds.efficacy_score(), spec)
}

/// Overall p-value `Q(p1, p2)`; `p2` is only consulted on the middle branch.
pub fn overall_p(p1: f64, p2: Option<f64>, bounds: &Boundaries, spec: &CombinationSpec) -> Result<f64> {
    check_p("p1", p1)?;
    match bounds.branch(p1) {
        Branch::Efficacy | Branch::Futility => Ok(p1),
        Branch::Middle => {
            let p2 = p2.ok_or_else(|| Error::state("stage-2 p-value required on the middle branch"))?;
            check_p("p2", p2)?;
            let e = spec.statistic(phi_inv_upper(p1), phi_inv_upper(p2));
            Ok(bounds.alpha1 + middle_prob_score(e, bounds.futility_score(), bounds.efficacy_score(), spec)?)
        }
    }
}

/// Stage-2 critical statistic: the `e` with `α₁ + P(middle, max ε >= e) = α`.
///
/// Rejection at stage 2 is `statistic(z1, z2) > e_crit`.
pub fn critical_statistic(bounds: &Boundaries, spec: &CombinationSpec) -> Result<f64> {
    critical_statistic_for(bounds.alpha, bounds.alpha1, bounds.alpha0, spec)
}

fn critical_statistic_for(level: f64, alpha1: f64, alpha0: f64, spec: &CombinationSpec) -> Result<f64> {
    let (z_lo, z_hi) = (phi_inv_upper(alpha0), phi_inv_upper(alpha1));
    let g = |e: f64| middle_prob_score(e, z_lo, z_hi, spec).map(|m| alpha1 + m - level);
    let g_lo = g(-SCORE_LIMIT)?;
    let g_hi = g(SCORE_LIMIT)?;
    if !(g_lo >= 0.0 && g_hi <= 0.0) {
        return Err(Error::Calibration(format!(
            "no stage-2 critical value for level {level} with alpha1 = {alpha1}, alpha0 = {alpha0}"
        )));
    }
    // middle_prob is decreasing in e; bisect directly on the sign
    let (mut lo, mut hi) = (-SCORE_LIMIT, SCORE_LIMIT);
    while hi - lo > INVERSE_TOL {
        let mid = 0.5 * (lo + hi);
        if g(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Critical value of `C` on the middle branch: `α₁ + middle_prob(c) = α`.
pub fn critical_c(bounds: &Boundaries, spec: &CombinationSpec) -> Result<f64> {
    if !(bounds.alpha1 < bounds.alpha) {
        return Err(Error::Calibration(format!(
            "critical_c requires alpha1 < alpha (got {} and {})",
            bounds.alpha1, bounds.alpha
        )));
    }
    Ok(spec.upper_tail(critical_statistic(bounds, spec)?))
}

/// Conditional error function `A(p1)` for critical combination value `c`.
pub fn conditional_error(p1: f64, c: f64, spec: &CombinationSpec) -> Result<f64> {
    check_p("p1", p1)?;
    let e = spec.upper_tail_inv(c)?;
    Ok(phi(-spec.stage2_threshold(phi_inv_upper(p1), e)))
}

/// Pocock-type efficacy bound.
///
/// Returns the `α₁` for which the stage-2 rejection region on the combined
/// statistic uses the stage-1 score bound itself, `max{ε_w, ε_w★} >=
/// Φ⁻¹(1-α₁)`, and the design spends exactly `α`. For `w = w★` this is the
/// same as requiring the critical value of `C` to equal `α₁`.
pub fn calibrate_pocock(alpha: f64, alpha0: f64, spec: &CombinationSpec) -> Result<f64> {
    if !(alpha > 0.0 && alpha < alpha0 && alpha0 <= 1.0) {
        return Err(Error::Calibration(format!(
            "calibrate_pocock requires 0 < alpha < alpha0 <= 1 (got {alpha}, {alpha0})"
        )));
    }
    let z_lo = phi_inv_upper(alpha0);
    let g = |a1: f64| -> Result<f64> {
        let z1 = phi_inv_upper(a1);
        Ok(a1 + middle_prob_score(z1, z_lo, z1, spec)? - alpha)
    };
    let (mut lo, mut hi) = (1e-12, alpha);
    if !(g(lo)? < 0.0 && g(hi)? > 0.0) {
        return Err(Error::Calibration("no Pocock-type efficacy bound in (0, alpha)".into()));
    }
    while hi - lo > CALIBRATION_TOL * 1e-2 {
        let mid = 0.5 * (lo + hi);
        if g(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
