//! Simultaneous bioequivalence for two endpoints.
//!
//! Both endpoints are declared equivalent when `min θ⁽ᵏ⁾ > -Δ` and
//! `max θ⁽ᵏ⁾ < Δ`. The lower hypothesis is tested on the endpoint with the
//! smaller estimate and the upper one on the endpoint with the larger
//! estimate, each with that endpoint's own standard error, and both run
//! through the single-endpoint adaptive machinery.

use serde::{Deserialize, Serialize};

use crate::combination::Boundaries;
use crate::error::{Error, Result};
use crate::stats::dist::{phi, phi_inv_upper, phi_upper, RefDist};
use crate::stats::linalg::{chol, SymMatrix};
use crate::tost::{
    finalize_scores, interim_decide_scores, side_bound, DesignSpec, Estimate, Side, TostState,
};

/// Stage estimates for two endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointPairSummary {
    pub theta_hat: [f64; 2],
    /// Standard errors of `theta_hat`.
    pub se: [f64; 2],
    /// Subjects per arm, which sets the t degrees of freedom.
    pub n: u32,
    pub stage: u8,
}

impl EndpointPairSummary {
    pub fn new(theta_hat: [f64; 2], se: [f64; 2], n: u32, stage: u8) -> Result<Self> {
        if theta_hat.iter().any(|t| !t.is_finite()) {
            return Err(Error::domain("theta_hat must be finite"));
        }
        if se.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::domain(format!("standard errors {se:?} must be positive")));
        }
        if n < 2 {
            return Err(Error::domain(format!("stage size n = {n} must be at least 2")));
        }
        if stage != 1 && stage != 2 {
            return Err(Error::domain(format!("stage must be 1 or 2, got {stage}")));
        }
        Ok(EndpointPairSummary { theta_hat, se, n, stage })
    }

    /// From per-subject standard deviations of a parallel-arm stage.
    pub fn from_sigma(theta_hat: [f64; 2], sigma_hat: [f64; 2], n: u32, stage: u8) -> Result<Self> {
        let f = (2.0 / n as f64).sqrt();
        Self::new(theta_hat, [sigma_hat[0] * f, sigma_hat[1] * f], n, stage)
    }

    /// The same stage with the endpoint labels exchanged.
    pub fn swapped(&self) -> Self {
        EndpointPairSummary {
            theta_hat: [self.theta_hat[1], self.theta_hat[0]],
            se: [self.se[1], self.se[0]],
            ..*self
        }
    }
}

/// Estimates of `min θ` and `max θ` with the standard errors of the
/// endpoints that attain them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMaxQuantities {
    /// `true` when endpoint 1 has the smaller estimate (ties go to endpoint 1).
    pub selector: bool,
    pub theta_min: f64,
    pub theta_max: f64,
    pub se_min: f64,
    pub se_max: f64,
}

impl MinMaxQuantities {
    pub fn min_estimate(&self, dist: RefDist) -> Estimate {
        Estimate { theta: self.theta_min, se: self.se_min, dist }
    }

    pub fn max_estimate(&self, dist: RefDist) -> Estimate {
        Estimate { theta: self.theta_max, se: self.se_max, dist }
    }
}

pub fn minmax(s: &EndpointPairSummary) -> MinMaxQuantities {
    let a = s.theta_hat[0] <= s.theta_hat[1];
    let (lo, hi) = if a { (0, 1) } else { (1, 0) };
    MinMaxQuantities {
        selector: a,
        theta_min: s.theta_hat[lo],
        theta_max: s.theta_hat[hi],
        se_min: s.se[lo],
        se_max: s.se[hi],
    }
}

/// `(p₋ᵐⁱⁿ, p₊ᵐᵃˣ)` with normal reference distribution.
pub fn minmax_p(q: &MinMaxQuantities, delta: f64) -> (f64, f64) {
    (
        phi_upper((q.theta_min + delta) / q.se_min),
        phi_upper((delta - q.theta_max) / q.se_max),
    )
}

/// Shifted p-value of the min (minus side) or max (plus side) estimate,
/// normal reference distribution.
pub fn minmax_shifted_p(q: &MinMaxQuantities, shift: f64, side: Side) -> f64 {
    match side {
        Side::Minus => phi_upper((q.theta_min - shift) / q.se_min),
        Side::Plus => phi_upper(-(q.theta_max + shift) / q.se_max),
    }
}

/// Normal scores of `(p₋ᵐⁱⁿ, p₊ᵐᵃˣ)` under the design's test family.
pub fn minmax_scores(s: &EndpointPairSummary, design: &DesignSpec) -> (f64, f64) {
    let q = minmax(s);
    let dist = design.ref_dist(s.n);
    let d = design.delta();
    (
        q.min_estimate(dist).score(Side::Minus, -d),
        q.max_estimate(dist).score(Side::Plus, -d),
    )
}

/// Interim decision of the min/max procedure.
pub fn minmax_interim(stage1: &EndpointPairSummary, design: &DesignSpec) -> TostState {
    let (zm, zp) = minmax_scores(stage1, design);
    interim_decide_scores(zm, zp, design.bounds())
}

/// Stage-2 decision of the min/max procedure; only hypotheses still open
/// receive their stage-2 score.
pub fn minmax_finalize(
    state: &TostState,
    stage2: &EndpointPairSummary,
    design: &DesignSpec,
) -> Result<TostState> {
    let (zm, zp) = minmax_scores(stage2, design);
    let open = |s: Side| !state.outcome(s).state.is_terminal();
    finalize_scores(
        state,
        open(Side::Minus).then_some(zm),
        open(Side::Plus).then_some(zp),
        design,
    )
}

/// `(lᵐⁱⁿ, uᵐᵃˣ)`: lower bound for `min θ` and upper bound for `max θ`,
/// aligned with the min/max decisions.
pub fn ci_minmax(
    stage1: &EndpointPairSummary,
    stage2: Option<&EndpointPairSummary>,
    design: &DesignSpec,
) -> Result<(f64, f64)> {
    let q1 = minmax(stage1);
    let d1 = design.ref_dist(stage1.n);
    let q2 = stage2.map(|s| (minmax(s), design.ref_dist(s.n)));
    let (delta, bounds, spec) = (design.delta(), design.bounds(), design.spec());
    let lower = side_bound(
        Side::Minus,
        &q1.min_estimate(d1),
        q2.map(|(q, d)| q.min_estimate(d)).as_ref(),
        delta,
        bounds,
        spec,
    )?;
    let upper = -side_bound(
        Side::Plus,
        &q1.max_estimate(d1),
        q2.map(|(q, d)| q.max_estimate(d)).as_ref(),
        delta,
        bounds,
        spec,
    )?;
    Ok((lower, upper))
}

/// Conditions under which `lᵐⁱⁿ < uᵐᵃˣ` is guaranteed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prop2Diagnostic {
    /// `min{1+ω, 1+1/ω} z_{1-α} - z_{1-α₁} > 0`.
    pub precision_ok: bool,
    /// The two-Φ sum exceeds `2α`.
    pub inequality_ok: bool,
    /// `(-κ - s)/2 > -z_{1-α}`, which implies `inequality_ok`.
    pub sufficient_ok: bool,
    /// Value of the two-Φ sum.
    pub phi_sum: f64,
}

/// Below this distance from 1, `ω` is treated as exactly 1.
const OMEGA_ONE_TOL: f64 = 1e-9;

/// Evaluates the conditions for `ω = σᵐⁱⁿ/σᵐᵃˣ` and
/// `κ = z_{1-α₁} - 2Δ/(σᵐⁱⁿ + σᵐᵃˣ)`.
pub fn check_prop2(omega: f64, kappa: f64, alpha: f64, alpha1: f64) -> Result<Prop2Diagnostic> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(Error::domain(format!("omega = {omega} must be positive")));
    }
    if !kappa.is_finite() {
        return Err(Error::domain("kappa must be finite"));
    }
    for (name, a) in [("alpha", alpha), ("alpha1", alpha1)] {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::domain(format!("{name} = {a} outside (0, 1)")));
        }
    }
    let z = phi_inv_upper(alpha);
    let z1 = phi_inv_upper(alpha1);
    let w = omega;
    let precision_ok = (1.0 + w).min(1.0 + 1.0 / w) * z - z1 > 0.0;
    // log(ω)(ω-1)/(ω+1) is >= 0 and vanishes smoothly at ω = 1
    let s = (kappa * kappa + 2.0 * w.ln() * (w - 1.0) / (w + 1.0)).sqrt();
    let phi_sum = if (w - 1.0).abs() < OMEGA_ONE_TOL {
        // both arguments tend to ∓∞ when κ <= 0 and to -κ when κ > 0
        if kappa <= 0.0 {
            1.0
        } else {
            2.0 * phi(-kappa)
        }
    } else {
        phi((-w * kappa + s) / (w - 1.0)) + phi((kappa - w * s) / (w - 1.0))
    };
    Ok(Prop2Diagnostic {
        precision_ok,
        inequality_ok: phi_sum > 2.0 * alpha,
        sufficient_ok: (-kappa - s) / 2.0 > -z,
        phi_sum,
    })
}

/// Proposition 2 diagnostic for a realized stage 1, together with the
/// design-level requirements `α₀ <= 0.5` and `α₁ < α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prop2Check {
    pub omega: f64,
    pub kappa: f64,
    pub conditions: Prop2Diagnostic,
    pub guarantee: bool,
}

pub fn prop2_for(stage1: &EndpointPairSummary, design: &DesignSpec) -> Result<Prop2Check> {
    let q = minmax(stage1);
    let b = design.bounds();
    let omega = q.se_min / q.se_max;
    let kappa = phi_inv_upper(b.alpha1()) - 2.0 * design.delta() / (q.se_min + q.se_max);
    let conditions = check_prop2(omega, kappa, b.alpha(), b.alpha1())?;
    let guarantee = b.alpha0() <= 0.5
        && b.alpha1() < b.alpha()
        && conditions.precision_ok
        && conditions.inequality_ok;
    Ok(Prop2Check { omega, kappa, conditions, guarantee })
}

/// Intersection-union decision over the four per-endpoint hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IuDecision {
    /// `rejected[k][0]` is `H0-` and `rejected[k][1]` is `H0+` of endpoint `k`.
    pub rejected: [[bool; 2]; 2],
    pub bioequivalent: bool,
}

/// Rejects each hypothesis whose overall p-value is below `α`; equivalence
/// needs all four.
pub fn iu_comparator(overall_p: [[f64; 2]; 2], alpha: f64) -> IuDecision {
    let rejected = overall_p.map(|row| row.map(|q| q < alpha));
    IuDecision { rejected, bioequivalent: rejected.iter().flatten().all(|r| *r) }
}

/// The intersection-union design continues to stage 2 unless every stage-1
/// p-value is at or above `α₀` or below `α₁`.
pub fn iu_needs_stage2(p1: [[f64; 2]; 2], bounds: &Boundaries) -> bool {
    !p1.iter().flatten().all(|&p| p >= bounds.alpha0() || p < bounds.alpha1())
}

/// Within-subject covariance of `(log Cmax, log AUC)` under treatments 1 and 2,
/// ordered `(Cmax₁, AUC₁, Cmax₂, AUC₂)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointCovariance {
    gamma: SymMatrix,
}

/// Maps the four measurements onto the two treatment differences.
pub const CONTRAST: [f64; 8] = [1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0];

impl EndpointCovariance {
    pub fn new(gamma: SymMatrix) -> Result<Self> {
        if gamma.dim() != 4 {
            return Err(Error::domain(format!("gamma must be 4x4, got {0}x{0}", gamma.dim())));
        }
        chol(&gamma)?;
        Ok(EndpointCovariance { gamma })
    }

    /// Independent arms with the same 2x2 covariance `g` in each.
    pub fn parallel(g: &SymMatrix) -> Result<Self> {
        if g.dim() != 2 {
            return Err(Error::domain("per-arm covariance must be 2x2"));
        }
        let mut e = vec![0.0; 16];
        for i in 0..2 {
            for j in 0..2 {
                e[i * 4 + j] = g.get(i, j);
                e[(i + 2) * 4 + j + 2] = g.get(i, j);
            }
        }
        Self::new(SymMatrix::new(4, e)?)
    }

    pub fn gamma(&self) -> &SymMatrix {
        &self.gamma
    }
}

/// `Σ = A Γ Aᵀ`.
pub fn sigma_from_gamma(cov: &EndpointCovariance) -> Result<SymMatrix> {
    let sigma = cov.gamma.congruence(&CONTRAST, 2)?;
    chol(&sigma).map_err(|e| Error::numeric(format!("A Γ Aᵀ is not positive definite: {e}"), None))?;
    Ok(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combination::{calibrate_pocock, CombinationSpec};
    use crate::stats::rng::RngStream;
    use crate::stats::sampling::MvnSampler;
    use crate::tost::{ci_bounds, StageSummary};
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn delta() -> f64 {
        1.25f64.ln()
    }

    fn design(alpha1: f64, alpha0: f64, use_t: bool) -> DesignSpec {
        DesignSpec::new(
            delta(),
            Boundaries::new(0.05, alpha1, alpha0).unwrap(),
            CombinationSpec::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2).unwrap(),
            use_t,
        )
        .unwrap()
    }

    fn pair(t: [f64; 2], se: [f64; 2], stage: u8) -> EndpointPairSummary {
        EndpointPairSummary::new(t, se, 40, stage).unwrap()
    }

    #[test]
    fn minmax_examples() {
        let q = minmax(&pair([-0.1, 0.2], [0.05, 0.07], 1));
        assert!(q.selector);
        assert_eq!((q.theta_min, q.se_min, q.theta_max, q.se_max), (-0.1, 0.05, 0.2, 0.07));
        let tie = minmax(&pair([0.1, 0.1], [0.05, 0.07], 1));
        assert!(tie.selector);
        assert_eq!(tie.theta_min, tie.theta_max);
        assert_eq!(tie.se_min, 0.05);
        let sw = minmax(&pair([0.2, -0.1], [0.07, 0.05], 1));
        assert!(!sw.selector);
        assert_eq!((sw.theta_min, sw.se_min, sw.theta_max, sw.se_max), (-0.1, 0.05, 0.2, 0.07));
    }

    #[test]
    fn summary_validation() {
        assert!(EndpointPairSummary::new([0.0, 0.0], [0.0, 0.1], 40, 1).is_err());
        assert!(EndpointPairSummary::new([f64::NAN, 0.0], [0.1, 0.1], 40, 1).is_err());
        assert!(EndpointPairSummary::new([0.0, 0.0], [0.1, 0.1], 40, 0).is_err());
    }

    #[test]
    fn minmax_p_is_selected_endpoint_p() {
        let d = delta();
        let q = minmax(&pair([-d, 0.1], [0.05, 0.07], 1));
        assert!((minmax_p(&q, d).0 - 0.5).abs() < 1e-15);
        let mut rng = RngStream::new(8, 0);
        for _ in 0..1000 {
            let t = [rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)];
            let se = [rng.random_range(0.01..0.2), rng.random_range(0.01..0.2)];
            let q = minmax(&pair(t, se, 1));
            // componentwise oracle
            let pm: Vec<f64> = (0..2).map(|k| 1.0 - phi((t[k] + d) / se[k])).collect();
            let pp: Vec<f64> = (0..2).map(|k| 1.0 - phi((d - t[k]) / se[k])).collect();
            let k = if t[0] <= t[1] { 0 } else { 1 };
            let (a, b) = minmax_p(&q, d);
            assert!((a - pm[k]).abs() < 1e-12);
            assert!((b - pp[1 - k]).abs() < 1e-12);
            assert!((minmax_shifted_p(&q, -d, Side::Minus) - a).abs() < 1e-15);
            assert!((minmax_shifted_p(&q, -d, Side::Plus) - b).abs() < 1e-15);
        }
    }

    #[test]
    fn stage1_bounds_closed_form() {
        // α₀ = α₁ forces a stage-1 stop, where the bounds are plain Wald bounds
        let d = DesignSpec::new(
            delta(),
            Boundaries::new(0.05, 0.05, 0.05).unwrap(),
            CombinationSpec::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2).unwrap(),
            false,
        )
        .unwrap();
        let s = pair([0.03, -0.02], [0.06, 0.08], 1);
        let (l, u) = ci_minmax(&s, None, &d).unwrap();
        let z = phi_inv_upper(0.05);
        assert!((l - (-0.02 - 0.08 * z)).abs() < 1e-7);
        assert!((u - (0.03 + 0.06 * z)).abs() < 1e-7);
    }

    #[test]
    fn single_endpoint_when_identical() {
        let d = design(0.031, 0.5, false);
        let s1 = StageSummary::new(0.02, 0.294, 40, 1).unwrap();
        let s2 = StageSummary::new(-0.01, 0.3, 40, 2).unwrap();
        let p1 = pair([0.02, 0.02], [s1.se(), s1.se()], 1);
        let p2 = pair([-0.01, -0.01], [s2.se(), s2.se()], 2);
        let a = ci_bounds(&s1, Some(&s2), &d).unwrap();
        let b = ci_minmax(&p1, Some(&p2), &d).unwrap();
        assert_eq!(a, b);
    }

    fn random_two_stage(rng: &mut RngStream, d: &DesignSpec) -> (EndpointPairSummary, Option<EndpointPairSummary>) {
        let t = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
        let se = [rng.random_range(0.04..0.09), rng.random_range(0.04..0.09)];
        let s1 = pair(t, se, 1);
        let st = minmax_interim(&s1, d);
        if !st.needs_stage2() {
            return (s1, None);
        }
        let t2 = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
        let se2 = [rng.random_range(0.03..0.09), rng.random_range(0.03..0.09)];
        (s1, Some(pair(t2, se2, 2)))
    }

    #[test]
    fn relabeling_invariance() {
        for use_t in [false, true] {
            let d = design(0.031, 0.5, use_t);
            let mut rng = RngStream::new(31, use_t as u64);
            for _ in 0..200 {
                let (s1, s2) = random_two_stage(&mut rng, &d);
                let a = ci_minmax(&s1, s2.as_ref(), &d).unwrap();
                let sw2 = s2.map(|s| s.swapped());
                let b = ci_minmax(&s1.swapped(), sw2.as_ref(), &d).unwrap();
                // exact ties flip the selector but not the selected values
                assert_eq!(a, b);
                assert_eq!(minmax_scores(&s1, &d), minmax_scores(&s1.swapped(), &d));
            }
        }
    }

    #[test]
    fn decisions_align_with_bounds() {
        let d = design(0.031, 0.5, false);
        let mut rng = RngStream::new(32, 0);
        for _ in 0..500 {
            let (s1, s2) = random_two_stage(&mut rng, &d);
            let st = minmax_interim(&s1, &d);
            let st = match s2 {
                Some(s2) => minmax_finalize(&st, &s2, &d).unwrap(),
                None => st,
            };
            let (l, u) = ci_minmax(&s1, s2.as_ref(), &d).unwrap();
            assert_eq!(st.minus.state.is_rejected(), l > -delta(), "{l}");
            assert_eq!(st.plus.state.is_rejected(), u < delta(), "{u}");
        }
    }

    #[test]
    fn prop2_bounds_ordered() {
        let d = design(0.031, 0.5, false);
        let mut rng = RngStream::new(33, 0);
        let mut checked = 0;
        for _ in 0..2000 {
            let (s1, s2) = random_two_stage(&mut rng, &d);
            if !prop2_for(&s1, &d).unwrap().guarantee {
                continue;
            }
            checked += 1;
            let (l, u) = ci_minmax(&s1, s2.as_ref(), &d).unwrap();
            assert!(l < u, "l = {l}, u = {u}");
        }
        assert!(checked > 1000);
    }

    #[test]
    fn prop2_numeric_case() {
        // independent arithmetic: s = sqrt(4 + 2 ln 0.9 (-0.1)/1.9) = 2.00277,
        // min{1.9, 2.111} z_0.95 - z_0.97 = 1.24443
        let c = check_prop2(0.9, -2.0, 0.05, 0.03).unwrap();
        assert!(c.precision_ok && c.inequality_ok && c.sufficient_ok);
        assert!((c.phi_sum - 1.0).abs() < 1e-12);
        let c = check_prop2(0.5, 1.2, 0.05, 0.03).unwrap();
        assert!((c.phi_sum - 0.21324382995362512).abs() < 1e-12);
        assert!(c.precision_ok && c.inequality_ok && c.sufficient_ok);
        // large κ: the margin is too small for the bound ordering
        let c = check_prop2(0.5, 3.0, 0.05, 0.03).unwrap();
        assert!(!c.sufficient_ok && !c.inequality_ok);
        assert!(check_prop2(0.0, 1.0, 0.05, 0.03).is_err());
    }

    #[test]
    fn prop2_limit_at_omega_one() {
        for kappa in [-2.0, -0.3, 0.0, 0.4, 1.0, 1.9] {
            let at = check_prop2(1.0, kappa, 0.05, 0.03).unwrap();
            for eps in [1e-5, -1e-5] {
                let near = check_prop2(1.0 + eps, kappa, 0.05, 0.03).unwrap();
                assert!((near.phi_sum - at.phi_sum).abs() < 1e-3, "κ {kappa}: {} vs {}", near.phi_sum, at.phi_sum);
            }
        }
        // at ω = 1 the conditions reduce to the single-endpoint ones
        let z = phi_inv_upper(0.05);
        let z1 = phi_inv_upper(0.03);
        let c = check_prop2(1.0, 0.5, 0.05, 0.03).unwrap();
        assert_eq!(c.precision_ok, 2.0 * z - z1 > 0.0);
        for ratio in [0.5, 1.0, 1.5, 2.0, 3.0] {
            // κ = z1 - Δ/σ₁n with equal standard errors
            let c = check_prop2(1.0, z1 - ratio, 0.05, 0.03).unwrap();
            assert_eq!(c.inequality_ok, ratio > z1 - z);
        }
    }

    proptest! {
        #[test]
        fn sufficient_implies_inequality(omega in 0.05f64..20.0, kappa in -4.0f64..4.0) {
            let c = check_prop2(omega, kappa, 0.05, 0.031).unwrap();
            if c.sufficient_ok {
                prop_assert!(c.inequality_ok, "{c:?}");
            }
        }

        #[test]
        fn minmax_swap(t1 in -1.0f64..1.0, t2 in -1.0f64..1.0, e1 in 0.01f64..1.0, e2 in 0.01f64..1.0) {
            let s = pair([t1, t2], [e1, e2], 1);
            let (a, b) = (minmax(&s), minmax(&s.swapped()));
            prop_assert_eq!((a.theta_min, a.theta_max), (b.theta_min, b.theta_max));
            if t1 != t2 {
                prop_assert_eq!(a.selector, !b.selector);
            }
            prop_assert!(a.theta_min <= a.theta_max);
        }
    }

    /// `(min side, max side)` of the Lemma, each as `(lhs, rhs)`.
    fn lemma_sides(u: f64, v: f64, s1: f64, s2: f64) -> ((f64, f64), (f64, f64)) {
        let p = if u <= v { 1.0 } else { 0.0 };
        let lo = (u * p + v * (1.0 - p)) / (p * s1 + (1.0 - p) * s2);
        let hi = (u * (1.0 - p) + v * p) / ((1.0 - p) * s1 + p * s2);
        let ind = |b: bool| if b { 1.0 } else { 0.0 };
        let lo_rhs = u / s1 * ind(s1 <= s2) + v / s2 * ind(s1 > s2);
        let hi_rhs = u / s1 * ind(s1 > s2) + v / s2 * ind(s1 <= s2);
        ((lo, lo_rhs), (hi, hi_rhs))
    }

    #[test]
    fn lemma_on_nonnegative_numerators() {
        let mut rng = RngStream::new(34, 0);
        for _ in 0..200_000 {
            let (u, v) = (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
            let (s1, s2) = (rng.random_range(0.01..2.0), rng.random_range(0.01..2.0));
            let ((lo, lo_rhs), (hi, hi_rhs)) = lemma_sides(u, v, s1, s2);
            assert!(lo <= lo_rhs && hi >= hi_rhs, "{u} {v} {s1} {s2}");
        }
    }

    #[test]
    fn lemma_fails_for_negative_numerators() {
        let ((lo, lo_rhs), _) = lemma_sides(-1.0, -0.5, 2.0, 0.1);
        assert!(lo > lo_rhs);
        let (_, (hi, hi_rhs)) = lemma_sides(-1.0, -0.5, 2.0, 0.1);
        assert!(hi < hi_rhs);
    }

    #[test]
    fn iu_rules() {
        assert!(iu_comparator([[0.01, 0.02], [0.03, 0.04]], 0.05).bioequivalent);
        let d = iu_comparator([[0.01, 0.02], [0.05, 0.04]], 0.05);
        assert!(!d.bioequivalent);
        assert_eq!(d.rejected, [[true, true], [false, true]]);
        let b = Boundaries::new(0.05, 0.03, 0.5).unwrap();
        assert!(!iu_needs_stage2([[0.01, 0.6], [0.02, 0.5]], &b));
        assert!(iu_needs_stage2([[0.01, 0.6], [0.03, 0.02]], &b));
    }

    #[test]
    fn minmax_dominates_iu_when_selector_agrees() {
        // stage-1-only designs: both procedures use the same stage-1 p-values
        let alpha1 = calibrate_pocock(0.05, 0.5, &CombinationSpec::inverse_normal(FRAC_1_SQRT_2).unwrap()).unwrap();
        let d = design(alpha1, 0.5, false);
        let cov = SymMatrix::from_rows([[1.0, 0.8], [0.8, 1.0]]).unwrap().scaled(0.06f64.powi(2));
        let mut rng = RngStream::new(35, 0);
        for _ in 0..5000 {
            let th = [rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25)];
            let s = MvnSampler::new(th.to_vec(), &cov).unwrap().sample(&mut rng);
            let s1 = pair([s[0], s[1]], [0.06, 0.06], 1);
            let st = minmax_interim(&s1, &d);
            let p = |k: usize, side: Side| {
                let e = Estimate { theta: s1.theta_hat[k], se: s1.se[k], dist: RefDist::Normal };
                e.p_value(side, -delta())
            };
            let q = [[p(0, Side::Minus), p(0, Side::Plus)], [p(1, Side::Minus), p(1, Side::Plus)]];
            let iu_stage1_reject = q.iter().flatten().all(|&x| x <= alpha1);
            if iu_stage1_reject {
                assert_eq!(st.bioequivalent, Some(true));
            }
        }
    }

    #[test]
    fn sigma_from_gamma_examples() {
        let g = SymMatrix::from_rows([[0.09, 0.05], [0.05, 0.08]]).unwrap();
        let s = sigma_from_gamma(&EndpointCovariance::parallel(&g).unwrap()).unwrap();
        assert_eq!(s, g.scaled(2.0));
        let s = sigma_from_gamma(&EndpointCovariance::new(SymMatrix::identity(4)).unwrap()).unwrap();
        assert_eq!(s, SymMatrix::identity(2).scaled(2.0));

        let mut rng = RngStream::new(36, 0);
        for _ in 0..50 {
            // random PD Γ = B Bᵀ + I/10
            let b: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut e = vec![0.0; 16];
            for i in 0..4 {
                for j in 0..4 {
                    e[i * 4 + j] = (0..4).map(|k| b[i * 4 + k] * b[j * 4 + k]).sum::<f64>();
                }
                e[i * 4 + i] += 0.1;
            }
            let gamma = SymMatrix::new(4, e.clone()).unwrap();
            let s = sigma_from_gamma(&EndpointCovariance::new(gamma).unwrap()).unwrap();
            // direct product A Γ Aᵀ
            let a = CONTRAST;
            for r in 0..2 {
                for c in 0..2 {
                    let mut acc = 0.0;
                    for i in 0..4 {
                        for j in 0..4 {
                            acc += a[r * 4 + i] * e[i * 4 + j] * a[c * 4 + j];
                        }
                    }
                    assert!((s.get(r, c) - acc).abs() < 1e-12);
                }
            }
        }
        // perfectly correlated difference vector is singular
        let g = SymMatrix::from_rows([[1.0, 1.0 - 1e-17], [1.0 - 1e-17, 1.0]]).unwrap();
        assert!(EndpointCovariance::parallel(&g).is_err());
    }
}
