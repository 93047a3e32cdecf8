//! Two-stage adaptive TOST for a single endpoint.
//!
//! Each one-sided hypothesis (`H0-: θ <= -Δ`, `H0+: θ >= Δ`) is staged
//! separately: it can be rejected or dropped for futility at the interim and
//! is then never re-tested, or it continues and is decided by the overall
//! p-value `Q` of the combination test.
//!
//! Confidence bounds invert the shifted overall p-values. The shifted stage-1
//! bounds move with the shifted stage-1 statistic, so the stage-1 branch is the
//! same for every shift and the bound search is a monotone bisection.

use serde::{Deserialize, Serialize};

use crate::combination::{branch_of_score, middle_prob_score, Boundaries, Branch, CombinationSpec};
use crate::error::{Error, Result};
use crate::stats::dist::{phi_inv_upper, phi_upper, RefDist};
use crate::stats::numeric::bisect_predicate;

/// Bisection width for confidence bounds.
pub const CI_TOL: f64 = 1e-8;
const MAX_EXPANSIONS: u32 = 200;

/// Which one-sided null hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// `H0-: θ <= -Δ`.
    Minus,
    /// `H0+: θ >= Δ`.
    Plus,
}

/// Degrees of freedom for t-based stagewise p-values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DfRule {
    /// Pooled two-sample variance: `2n - 2` for `n` subjects per arm.
    #[default]
    Pooled,
}

impl DfRule {
    pub fn df(&self, n_per_arm: u32) -> f64 {
        match self {
            DfRule::Pooled => 2.0 * n_per_arm as f64 - 2.0,
        }
    }
}

/// Margin, levels, combination weights and the stagewise test family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDesign", into = "RawDesign")]
pub struct DesignSpec {
    delta: f64,
    bounds: Boundaries,
    spec: CombinationSpec,
    use_t: bool,
    df_rule: DfRule,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDesign {
    delta: f64,
    alpha: f64,
    alpha1: f64,
    alpha0: f64,
    w: f64,
    w_star: f64,
    #[serde(default)]
    use_t: bool,
    #[serde(default)]
    df_rule: DfRule,
}

impl TryFrom<RawDesign> for DesignSpec {
    type Error = Error;
    fn try_from(r: RawDesign) -> Result<Self> {
        let mut d = DesignSpec::new(
            r.delta,
            Boundaries::new(r.alpha, r.alpha1, r.alpha0)?,
            CombinationSpec::new(r.w, r.w_star)?,
            r.use_t,
        )?;
        d.df_rule = r.df_rule;
        Ok(d)
    }
}

impl From<DesignSpec> for RawDesign {
    fn from(d: DesignSpec) -> Self {
        RawDesign {
            delta: d.delta,
            alpha: d.bounds.alpha(),
            alpha1: d.bounds.alpha1(),
            alpha0: d.bounds.alpha0(),
            w: d.spec.w(),
            w_star: d.spec.w_star(),
            use_t: d.use_t,
            df_rule: d.df_rule,
        }
    }
}

impl DesignSpec {
    pub fn new(delta: f64, bounds: Boundaries, spec: CombinationSpec, use_t: bool) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::domain(format!("margin delta = {delta} must be positive")));
        }
        Ok(DesignSpec { delta, bounds, spec, use_t, df_rule: DfRule::Pooled })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn alpha(&self) -> f64 {
        self.bounds.alpha()
    }

    pub fn bounds(&self) -> &Boundaries {
        &self.bounds
    }

    pub fn spec(&self) -> &CombinationSpec {
        &self.spec
    }

    pub fn use_t(&self) -> bool {
        self.use_t
    }

    pub fn df_rule(&self) -> DfRule {
        self.df_rule
    }

    /// Same design with normal or t stagewise p-values.
    pub fn with_t(mut self, use_t: bool) -> Self {
        self.use_t = use_t;
        self
    }

    /// Reference distribution for a stage with `n` subjects per arm.
    pub fn ref_dist(&self, n_per_arm: u32) -> RefDist {
        if self.use_t {
            RefDist::StudentT { df: self.df_rule.df(n_per_arm) }
        } else {
            RefDist::Normal
        }
    }
}

/// Sufficient statistics of one stage of a parallel-arm trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    /// Estimated log-scale difference, test minus reference.
    pub theta_hat: f64,
    /// Estimated per-subject standard deviation.
    pub sigma_hat: f64,
    /// Subjects per arm.
    pub n: u32,
    /// 1 or 2.
    pub stage: u8,
}

impl StageSummary {
    pub fn new(theta_hat: f64, sigma_hat: f64, n: u32, stage: u8) -> Result<Self> {
        if !theta_hat.is_finite() {
            return Err(Error::domain("theta_hat must be finite"));
        }
        if !(sigma_hat > 0.0 && sigma_hat.is_finite()) {
            return Err(Error::domain(format!("sigma_hat = {sigma_hat} must be positive")));
        }
        if n < 2 {
            return Err(Error::domain(format!("stage size n = {n} must be at least 2")));
        }
        if stage != 1 && stage != 2 {
            return Err(Error::domain(format!("stage must be 1 or 2, got {stage}")));
        }
        Ok(StageSummary { theta_hat, sigma_hat, n, stage })
    }

    /// Standard error of `theta_hat`, `σ̂ √(2/n)`.
    pub fn se(&self) -> f64 {
        self.sigma_hat * (2.0 / self.n as f64).sqrt()
    }

    pub fn estimate(&self, design: &DesignSpec) -> Estimate {
        Estimate { theta: self.theta_hat, se: self.se(), dist: design.ref_dist(self.n) }
    }
}

/// An estimate with its standard error and the reference distribution of
/// its standardized statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub theta: f64,
    pub se: f64,
    pub dist: RefDist,
}

impl Estimate {
    /// Test statistic for `side` against shift `delta`: `(θ̂ - δ)/se` for
    /// minus and `-(θ̂ + δ)/se` for plus. `delta = -Δ` gives the TOST statistics.
    #[inline]
    pub fn statistic(&self, side: Side, delta: f64) -> f64 {
        match side {
            Side::Minus => (self.theta - delta) / self.se,
            Side::Plus => -(self.theta + delta) / self.se,
        }
    }

    /// Normal score of the shifted p-value.
    #[inline]
    pub fn score(&self, side: Side, delta: f64) -> f64 {
        self.dist.z_score(self.statistic(side, delta))
    }

    /// Shifted p-value `1 - G(statistic)`.
    #[inline]
    pub fn p_value(&self, side: Side, delta: f64) -> f64 {
        self.dist.upper_p(self.statistic(side, delta))
    }
}

/// Stagewise TOST p-value.
pub fn stage_p(summary: &StageSummary, design: &DesignSpec, side: Side) -> f64 {
    summary.estimate(design).p_value(side, -design.delta)
}

/// Shifted stagewise p-value `p^δ`.
pub fn shifted_p(summary: &StageSummary, design: &DesignSpec, side: Side, shift: f64) -> f64 {
    summary.estimate(design).p_value(side, shift)
}

/// Shifted stage-1 boundaries `(α₁^δ, α₀^δ)` with normal quantiles.
pub fn shifted_bounds(shift: f64, design: &DesignSpec, sigma_1n: f64) -> (f64, f64) {
    let s = (shift + design.delta) / sigma_1n;
    let b = design.bounds;
    (phi_upper(phi_inv_upper(b.alpha1()) - s), phi_upper(phi_inv_upper(b.alpha0()) - s))
}

/// Shifted stage-1 bounds on the score scale for a stage-1 estimate.
///
/// The offset is applied on the scale of the statistic's own reference
/// distribution, the same scale on which the stage-1 statistic moves. In
/// normal mode this is exactly `Φ⁻¹(1-α₁) - (δ+Δ)/σ₁n`.
pub fn shifted_score_bounds(shift: f64, delta: f64, bounds: &Boundaries, stage1: &Estimate) -> (f64, f64) {
    let s = (shift + delta) / stage1.se;
    let d = stage1.dist;
    let b1 = d.z_score(d.upper_quantile(bounds.alpha1()) - s);
    let b0 = d.z_score(d.upper_quantile(bounds.alpha0()) - s);
    (b1, b0)
}

/// Overall p-value from stage scores and score-scale bounds on a known branch.
pub fn q_from_scores(
    branch: Branch,
    z1: f64,
    z2: Option<f64>,
    b1: f64,
    b0: f64,
    spec: &CombinationSpec,
) -> Result<f64> {
    match branch {
        Branch::Efficacy | Branch::Futility => Ok(phi_upper(z1)),
        Branch::Middle => {
            let z2 = z2.ok_or_else(|| Error::state("stage-2 data required on the middle branch"))?;
            Ok(phi_upper(b1) + middle_prob_score(spec.statistic(z1, z2), b0, b1, spec)?)
        }
    }
}

/// Shifted overall p-value for one side, from the stage estimates attached to
/// that side.
pub fn side_shifted_p(
    shift: f64,
    side: Side,
    stage1: &Estimate,
    stage2: Option<&Estimate>,
    delta: f64,
    bounds: &Boundaries,
    spec: &CombinationSpec,
) -> Result<f64> {
    let (b1, b0) = shifted_score_bounds(shift, delta, bounds, stage1);
    let z1 = stage1.score(side, shift);
    let branch = branch_of_score(z1, b1, b0);
    let z2 = stage2.map(|e| e.score(side, shift));
    q_from_scores(branch, z1, z2, b1, b0, spec)
}

/// Overall shifted p-value `p^δ = Q(p₁^δ, p₂^δ, α₁^δ, α₀^δ)`.
pub fn overall_shifted_p(
    shift: f64,
    stage1: &StageSummary,
    stage2: Option<&StageSummary>,
    design: &DesignSpec,
    side: Side,
) -> Result<f64> {
    let e1 = stage1.estimate(design);
    let e2 = stage2.map(|s| s.estimate(design));
    side_shifted_p(shift, side, &e1, e2.as_ref(), design.delta, &design.bounds, &design.spec)
}

/// `inf{δ : p^δ >= α}` for one side.
///
/// The search is anchored at `δ = -Δ` so that the returned point lies on the
/// same side of `-Δ` as the test decision dictates.
pub fn side_bound(
    side: Side,
    stage1: &Estimate,
    stage2: Option<&Estimate>,
    delta: f64,
    bounds: &Boundaries,
    spec: &CombinationSpec,
) -> Result<f64> {
    // the branch never changes with the shift; fix it from the unshifted data
    let b1 = stage1.dist.z_score(stage1.dist.upper_quantile(bounds.alpha1()));
    let b0 = stage1.dist.z_score(stage1.dist.upper_quantile(bounds.alpha0()));
    let branch = branch_of_score(stage1.score(side, -delta), b1, b0);
    if branch == Branch::Middle && stage2.is_none() {
        return Err(Error::state("confidence bound needs stage-2 data on the middle branch"));
    }
    let alpha = bounds.alpha();
    let mut pred = |d: f64| -> Result<bool> {
        let (b1, b0) = shifted_score_bounds(d, delta, bounds, stage1);
        let z1 = stage1.score(side, d);
        let z2 = stage2.map(|e| e.score(side, d));
        Ok(q_from_scores(branch, z1, z2, b1, b0, spec)? >= alpha)
    };

    let anchor = -delta;
    let at_anchor = pred(anchor)?;
    let mut step = stage1.se;
    let mut inner = anchor;
    let mut outer = None;
    for _ in 0..MAX_EXPANSIONS {
        let x = if at_anchor { anchor - step } else { anchor + step };
        if pred(x)? != at_anchor {
            outer = Some(x);
            break;
        }
        inner = x;
        step *= 2.0;
    }
    let outer = outer.ok_or_else(|| Error::numeric("confidence bound bracket did not close", Some(inner)))?;
    let (lo, hi) = if at_anchor {
        bisect_predicate(&mut pred, outer, inner, CI_TOL)?
    } else {
        bisect_predicate(&mut pred, inner, outer, CI_TOL)?
    };
    Ok(0.5 * (lo + hi))
}

/// Lower and upper confidence bounds aligned with the TOST decision.
pub fn ci_bounds(
    stage1: &StageSummary,
    stage2: Option<&StageSummary>,
    design: &DesignSpec,
) -> Result<(f64, f64)> {
    let e1 = stage1.estimate(design);
    let e2 = stage2.map(|s| s.estimate(design));
    let lower = side_bound(Side::Minus, &e1, e2.as_ref(), design.delta, &design.bounds, &design.spec)?;
    let upper = -side_bound(Side::Plus, &e1, e2.as_ref(), design.delta, &design.bounds, &design.spec)?;
    Ok((lower, upper))
}

/// Lifecycle state of one hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HypothesisState {
    RejectedStage1,
    FutileStage1,
    Continue,
    RejectedStage2,
    AcceptedStage2,
}

impl HypothesisState {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, HypothesisState::Continue)
    }

    pub fn is_rejected(&self) -> bool {
        matches!(self, HypothesisState::RejectedStage1 | HypothesisState::RejectedStage2)
    }
}

/// Verdict and p-values of one hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisOutcome {
    pub state: HypothesisState,
    pub p1: f64,
    /// Normal score of `p1`.
    pub z1: f64,
    pub p2: Option<f64>,
    pub overall_p: Option<f64>,
}

/// Decision state of both one-sided hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TostState {
    pub minus: HypothesisOutcome,
    pub plus: HypothesisOutcome,
    /// `Some(true)` once both are rejected, `Some(false)` once either is
    /// accepted, `None` while the outcome is open.
    pub bioequivalent: Option<bool>,
}

impl TostState {
    pub fn outcome(&self, side: Side) -> &HypothesisOutcome {
        match side {
            Side::Minus => &self.minus,
            Side::Plus => &self.plus,
        }
    }

    /// The trial goes on to stage 2 iff a hypothesis is still open.
    pub fn needs_stage2(&self) -> bool {
        !self.minus.state.is_terminal() || !self.plus.state.is_terminal()
    }

    fn refresh(&mut self) {
        let (m, p) = (self.minus.state, self.plus.state);
        let accepted = |s: HypothesisState| {
            matches!(s, HypothesisState::FutileStage1 | HypothesisState::AcceptedStage2)
        };
        self.bioequivalent = if accepted(m) || accepted(p) {
            Some(false)
        } else if m.is_rejected() && p.is_rejected() {
            Some(true)
        } else {
            None
        };
    }
}

fn interim_outcome(p1: f64, z1: f64, b1: f64, b0: f64) -> HypothesisOutcome {
    let (state, overall_p) = match branch_of_score(z1, b1, b0) {
        Branch::Efficacy => (HypothesisState::RejectedStage1, Some(p1)),
        Branch::Futility => (HypothesisState::FutileStage1, Some(p1)),
        Branch::Middle => (HypothesisState::Continue, None),
    };
    HypothesisOutcome { state, p1, z1, p2: None, overall_p }
}

/// Interim decision from the two stage-1 p-values.
pub fn interim_decide(p1_minus: f64, p1_plus: f64, bounds: &Boundaries) -> TostState {
    interim_decide_scores(phi_inv_upper(p1_minus), phi_inv_upper(p1_plus), bounds)
        .with_p1(p1_minus, p1_plus)
}

/// Interim decision from the normal scores of the stage-1 p-values.
pub fn interim_decide_scores(z1_minus: f64, z1_plus: f64, bounds: &Boundaries) -> TostState {
    let (b1, b0) = (bounds.efficacy_score(), bounds.futility_score());
    let mut st = TostState {
        minus: interim_outcome(phi_upper(z1_minus), z1_minus, b1, b0),
        plus: interim_outcome(phi_upper(z1_plus), z1_plus, b1, b0),
        bioequivalent: None,
    };
    st.refresh();
    st
}

impl TostState {
    fn with_p1(mut self, p_minus: f64, p_plus: f64) -> Self {
        for (o, p) in [(&mut self.minus, p_minus), (&mut self.plus, p_plus)] {
            o.p1 = p;
            if o.overall_p.is_some() {
                o.overall_p = Some(p);
            }
        }
        self
    }
}

/// Stage-2 decisions from stage-2 p-values.
pub fn finalize(
    state: &TostState,
    p2_minus: Option<f64>,
    p2_plus: Option<f64>,
    design: &DesignSpec,
) -> Result<TostState> {
    for (name, p) in [("p2_minus", p2_minus), ("p2_plus", p2_plus)] {
        if let Some(p) = p {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::domain(format!("{name} = {p} outside (0, 1)")));
            }
        }
    }
    let mut out = finalize_scores(state, p2_minus.map(phi_inv_upper), p2_plus.map(phi_inv_upper), design)?;
    if let Some(p) = p2_minus {
        out.minus.p2 = Some(p);
    }
    if let Some(p) = p2_plus {
        out.plus.p2 = Some(p);
    }
    Ok(out)
}

/// Stage-2 decisions from the normal scores of the stage-2 p-values.
pub fn finalize_scores(
    state: &TostState,
    z2_minus: Option<f64>,
    z2_plus: Option<f64>,
    design: &DesignSpec,
) -> Result<TostState> {
    let mut out = *state;
    let b = design.bounds;
    let (b1, b0) = (b.efficacy_score(), b.futility_score());
    for (side, o, z2) in [(Side::Minus, &mut out.minus, z2_minus), (Side::Plus, &mut out.plus, z2_plus)] {
        match (o.state, z2) {
            (HypothesisState::Continue, Some(z2)) => {
                let q = q_from_scores(Branch::Middle, o.z1, Some(z2), b1, b0, &design.spec)?;
                o.p2 = Some(phi_upper(z2));
                o.overall_p = Some(q);
                o.state = if q < b.alpha() {
                    HypothesisState::RejectedStage2
                } else {
                    HypothesisState::AcceptedStage2
                };
            }
            (HypothesisState::Continue, None) => {
                return Err(Error::state(format!("{side:?} hypothesis continues but has no stage-2 p-value")));
            }
            (_, Some(_)) => {
                return Err(Error::state(format!(
                    "{side:?} hypothesis was decided at stage 1 and cannot be re-tested"
                )));
            }
            (_, None) => {}
        }
    }
    out.refresh();
    Ok(out)
}

/// Conditions under which the aligned bounds satisfy `l < u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prop1Diagnostic {
    /// `α₀ <= 0.5`.
    pub futility_bound_ok: bool,
    /// `α₁ < α` and `2 z_{1-α} - z_{1-α₁} > 0`.
    pub efficacy_bound_ok: bool,
    /// `Δ/σ₁n > z_{1-α₁} - z_{1-α}`.
    pub margin_ok: bool,
    /// All three conditions.
    pub guarantee: bool,
    /// `2Δ/σ₁n > z_{1-α₁} + z_{1-α₀}`: futility on one side forces efficacy
    /// on the other, so giving up always stops the trial at stage 1.
    pub futility_forces_stop: bool,
}

pub fn check_prop1(design: &DesignSpec, sigma_1n: f64) -> Prop1Diagnostic {
    let b = design.bounds;
    let z = phi_inv_upper(b.alpha());
    let z1 = phi_inv_upper(b.alpha1());
    let z0 = phi_inv_upper(b.alpha0());
    let ratio = design.delta / sigma_1n;
    let futility_bound_ok = b.alpha0() <= 0.5;
    let efficacy_bound_ok = b.alpha1() < b.alpha() && 2.0 * z - z1 > 0.0;
    let margin_ok = ratio > z1 - z;
    Prop1Diagnostic {
        futility_bound_ok,
        efficacy_bound_ok,
        margin_ok,
        guarantee: futility_bound_ok && efficacy_bound_ok && margin_ok,
        futility_forces_stop: 2.0 * ratio > z1 + z0,
    }
}
