//! Monte Carlo operating characteristics of the two-stage procedure.
//!
//! Every replicate draws its data from its own random streams, keyed by the
//! study seed and `replicate * 8 + purpose`, so a study gives the same report
//! whatever the number of worker threads.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combination::{branch_of_score, Branch};
use crate::error::{Error, Result};
use crate::multi::{ci_minmax, iu_comparator, minmax_finalize, minmax_interim, EndpointPairSummary};
use crate::ssr::{iu_n2, ssr_multi, InterimEstimates, SsrConfig, SsrOutcome, SsrPlan};
use crate::stats::linalg::SymMatrix;
use crate::stats::rng::RngStream;
use crate::stats::sampling::MvnSampler;
use crate::tost::{
    ci_bounds, finalize_scores, interim_decide_scores, q_from_scores, DesignSpec, HypothesisState, Side, StageSummary,
    TostState,
};

/// Replicate failures above this fraction fail the whole study.
pub const MAX_FAILURE_RATE: f64 = 0.001;

const STREAMS_PER_REPLICATE: u64 = 8;
const STAGE1_REF: u64 = 0;
const STAGE1_TEST: u64 = 1;
const STAGE2_REF: u64 = 2;
const STAGE2_TEST: u64 = 3;
const SSR_NORMALS: u64 = 4;
const SSR_CHIS: u64 = 5;
const IU_NORMALS: u64 = 6;
const IU_CHIS: u64 = 7;

/// True effect: one endpoint or an endpoint pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Theta {
    Single(f64),
    Pair([f64; 2]),
}

impl Theta {
    fn min(&self) -> f64 {
        match *self {
            Theta::Single(t) => t,
            Theta::Pair([a, b]) => a.min(b),
        }
    }

    fn max(&self) -> f64 {
        match *self {
            Theta::Single(t) => t,
            Theta::Pair([a, b]) => a.max(b),
        }
    }
}

/// Decision rule run alongside the adaptive TOST on the same data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Comparator {
    #[default]
    None,
    /// Four per-endpoint hypotheses, all of which must be rejected.
    IntersectionUnion,
    /// Both hypotheses re-tested at stage 2 whenever the trial continues.
    Maurer,
}

/// One simulated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScenario", into = "RawScenario")]
pub struct ScenarioConfig {
    pub name: Option<String>,
    pub theta: Theta,
    pub sigma: f64,
    pub endpoint_correlation: Option<f64>,
    pub n1: u32,
    pub design: DesignSpec,
    pub ssr: SsrConfig,
    pub replications: u32,
    pub seed: u64,
    pub comparator: Comparator,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    theta: Theta,
    #[serde(default = "default_sigma")]
    sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    endpoint_correlation: Option<f64>,
    #[serde(default = "default_n1")]
    n1: u32,
    #[serde(default = "default_replications")]
    replications: u32,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    comparator: Comparator,
    design: DesignSpec,
    #[serde(default)]
    ssr: SsrConfig,
}

fn default_sigma() -> f64 {
    0.294
}

fn default_n1() -> u32 {
    40
}

fn default_replications() -> u32 {
    5000
}

impl TryFrom<RawScenario> for ScenarioConfig {
    type Error = Error;
    fn try_from(r: RawScenario) -> Result<Self> {
        let cfg = ScenarioConfig {
            name: r.name,
            theta: r.theta,
            sigma: r.sigma,
            endpoint_correlation: r.endpoint_correlation,
            n1: r.n1,
            design: r.design,
            ssr: r.ssr,
            replications: r.replications,
            seed: r.seed,
            comparator: r.comparator,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<ScenarioConfig> for RawScenario {
    fn from(c: ScenarioConfig) -> Self {
        RawScenario {
            name: c.name,
            theta: c.theta,
            sigma: c.sigma,
            endpoint_correlation: c.endpoint_correlation,
            n1: c.n1,
            replications: c.replications,
            seed: c.seed,
            comparator: c.comparator,
            design: c.design,
            ssr: c.ssr,
        }
    }
}

impl ScenarioConfig {
    /// Single-endpoint scenario with the default σ, `n₁`, SSR settings and
    /// replicate count.
    pub fn single(theta: f64, design: DesignSpec, seed: u64) -> Self {
        ScenarioConfig {
            name: None,
            theta: Theta::Single(theta),
            sigma: default_sigma(),
            endpoint_correlation: None,
            n1: default_n1(),
            design,
            ssr: SsrConfig::default(),
            replications: default_replications(),
            seed,
            comparator: Comparator::None,
        }
    }

    /// Two-endpoint scenario with equal marginal σ.
    pub fn pair(theta: [f64; 2], rho: f64, design: DesignSpec, seed: u64) -> Self {
        ScenarioConfig { theta: Theta::Pair(theta), endpoint_correlation: Some(rho), ..Self::single(0.0, design, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma = {} must be positive", self.sigma));
        }
        if self.n1 < 2 {
            return bad(format!("n1 = {} must be at least 2", self.n1));
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        match (self.theta, self.endpoint_correlation) {
            (Theta::Single(t), None) if t.is_finite() => {}
            (Theta::Pair([a, b]), Some(r)) if a.is_finite() && b.is_finite() => {
                if !(-1.0..=1.0).contains(&r) {
                    return bad(format!("endpoint_correlation = {r} outside [-1, 1]"));
                }
            }
            (Theta::Single(_), Some(_)) => return bad("endpoint_correlation needs a pair of effects".into()),
            (Theta::Pair(_), None) => return bad("a pair of effects needs endpoint_correlation".into()),
            _ => return bad("theta must be finite".into()),
        }
        match (self.comparator, self.theta) {
            (Comparator::Maurer, Theta::Pair(_)) => bad("the maurer comparator is single-endpoint".into()),
            (Comparator::Maurer, _) if self.design.bounds().alpha0() < 1.0 => {
                bad("the maurer comparator requires alpha0 = 1; its type I error is not controlled otherwise".into())
            }
            (Comparator::IntersectionUnion, Theta::Single(_)) => {
                bad("the intersection-union comparator needs two endpoints".into())
            }
            _ => Ok(()),
        }
    }

    pub fn is_pair(&self) -> bool {
        matches!(self.theta, Theta::Pair(_))
    }
}

/// Interval bounds and key facts of one replicate under one rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleOutcome {
    pub bioequivalent: bool,
    pub stage1_bioequivalent: bool,
    pub n2: u32,
    pub ci: (f64, f64),
}

/// One simulated trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub decision: TostState,
    pub n2: u32,
    pub ci: (f64, f64),
    pub stage_reached: u8,
    pub ssr: Option<SsrOutcome>,
    /// The comparator rule on the same data, if configured.
    pub comparator: Option<RuleOutcome>,
    pub stages: StageData,
}

/// Stage summaries the decision and interval were computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StageData {
    Single { stage1: StageSummary, stage2: Option<StageSummary> },
    Pair { stage1: EndpointPairSummary, stage2: Option<EndpointPairSummary> },
}

impl TrialResult {
    pub fn outcome(&self) -> RuleOutcome {
        let rejected_at_1 = |s: Side| self.decision.outcome(s).state == HypothesisState::RejectedStage1;
        RuleOutcome {
            bioequivalent: self.decision.bioequivalent == Some(true),
            stage1_bioequivalent: rejected_at_1(Side::Minus) && rejected_at_1(Side::Plus),
            n2: self.n2,
            ci: self.ci,
        }
    }
}

/// Per-arm sufficient statistics of one stage.
#[derive(Debug, Clone, Copy)]
struct ArmStats<const K: usize> {
    mean: [f64; K],
    /// Within-arm sums of cross products, upper triangle row-major.
    ss: [f64; 3],
}

fn arm_stats<const K: usize>(mut draw: impl FnMut(&mut [f64; K]), n: u32) -> ArmStats<K> {
    let mut x = vec![[0.0; K]; n as usize];
    for xi in x.iter_mut() {
        draw(xi);
    }
    let mut mean = [0.0; K];
    for xi in &x {
        for k in 0..K {
            mean[k] += xi[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut ss = [0.0; 3];
    for xi in &x {
        let d0 = xi[0] - mean[0];
        ss[0] += d0 * d0;
        if K == 2 {
            let d1 = xi[K - 1] - mean[K - 1];
            ss[1] += d0 * d1;
            ss[2] += d1 * d1;
        }
    }
    ArmStats { mean, ss }
}

/// Everything a study needs that does not change between replicates.
#[derive(Debug, Clone)]
pub struct TrialRunner {
    cfg: ScenarioConfig,
    plan: SsrPlan,
    pair: Option<PairModel>,
}

#[derive(Debug, Clone)]
struct PairModel {
    reference: MvnSampler,
    test: MvnSampler,
}

impl TrialRunner {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let plan = SsrPlan::new(&cfg.design, &cfg.ssr)?;
        let pair = match (cfg.theta, cfg.endpoint_correlation) {
            (Theta::Pair(t), Some(rho)) => {
                let s2 = cfg.sigma * cfg.sigma;
                let g = SymMatrix::from_rows([[s2, rho * s2], [rho * s2, s2]])?;
                Some(PairModel {
                    reference: MvnSampler::new_psd(vec![0.0, 0.0], &g)?,
                    test: MvnSampler::new_psd(t.to_vec(), &g)?,
                })
            }
            _ => None,
        };
        Ok(TrialRunner { cfg: cfg.clone(), plan, pair })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    fn stream(&self, replicate: u64, purpose: u64) -> RngStream {
        RngStream::new(self.cfg.seed, replicate * STREAMS_PER_REPLICATE + purpose)
    }

    /// Runs replicate `replicate` of the study.
    pub fn run(&self, replicate: u64) -> Result<TrialResult> {
        match &self.pair {
            None => self.run_single(replicate),
            Some(m) => self.run_pair(m, replicate),
        }
    }

    fn single_stage(&self, replicate: u64, n: u32, stage: u8) -> Result<StageSummary> {
        let (r, t) = if stage == 1 { (STAGE1_REF, STAGE1_TEST) } else { (STAGE2_REF, STAGE2_TEST) };
        let theta = match self.cfg.theta {
            Theta::Single(t) => t,
            Theta::Pair(_) => unreachable!("single-endpoint stage on a pair scenario"),
        };
        let sigma = self.cfg.sigma;
        let arm = |purpose: u64, mu: f64| {
            let mut rng = self.stream(replicate, purpose);
            arm_stats::<1>(
                |x| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x[0] = mu + sigma * z;
                },
                n,
            )
        };
        let (a, b) = (arm(r, 0.0), arm(t, theta));
        let pooled = ((a.ss[0] + b.ss[0]) / (2.0 * n as f64 - 2.0)).sqrt();
        StageSummary::new(b.mean[0] - a.mean[0], pooled, n, stage)
    }

    fn pair_stage(&self, m: &PairModel, replicate: u64, n: u32, stage: u8) -> Result<(EndpointPairSummary, SymMatrix)> {
        let (r, t) = if stage == 1 { (STAGE1_REF, STAGE1_TEST) } else { (STAGE2_REF, STAGE2_TEST) };
        let arm = |purpose: u64, sampler: &MvnSampler| {
            let mut rng = self.stream(replicate, purpose);
            arm_stats::<2>(
                |x| {
                    let mut z = [0.0; 2];
                    sampler.sample_into(&mut rng, &mut z, x);
                },
                n,
            )
        };
        let (a, b) = (arm(r, &m.reference), arm(t, &m.test));
        let df = 2.0 * n as f64 - 2.0;
        let g = [(a.ss[0] + b.ss[0]) / df, (a.ss[1] + b.ss[1]) / df, (a.ss[2] + b.ss[2]) / df];
        let theta = [b.mean[0] - a.mean[0], b.mean[1] - a.mean[1]];
        let s = EndpointPairSummary::from_sigma(theta, [g[0].sqrt(), g[2].sqrt()], n, stage)?;
        // covariance of one subject's pair of differences: twice the per-arm one
        let sigma_hat = SymMatrix::from_rows([[2.0 * g[0], 2.0 * g[1]], [2.0 * g[1], 2.0 * g[2]]])?;
        Ok((s, sigma_hat))
    }

    fn run_single(&self, replicate: u64) -> Result<TrialResult> {
        let d = &self.cfg.design;
        let delta = d.delta();
        let s1 = self.single_stage(replicate, self.cfg.n1, 1)?;
        let e1 = s1.estimate(d);
        let (zm, zp) = (e1.score(Side::Minus, -delta), e1.score(Side::Plus, -delta));
        let state = interim_decide_scores(zm, zp, d.bounds());
        let est = InterimEstimates::new(s1.theta_hat, s1.sigma_hat, s1.n)?;

        let (decision, n2, ci, ssr, stage2) = if state.needs_stage2() {
            let ssr = self.plan.for_interim(zm, zp, &est)?;
            let n2 = ssr.stage2_size();
            let s2 = self.single_stage(replicate, n2, 2)?;
            let e2 = s2.estimate(d);
            let open = |s: Side| !state.outcome(s).state.is_terminal();
            let decision = finalize_scores(
                &state,
                open(Side::Minus).then(|| e2.score(Side::Minus, -delta)),
                open(Side::Plus).then(|| e2.score(Side::Plus, -delta)),
                d,
            )?;
            (decision, n2, ci_bounds(&s1, Some(&s2), d)?, Some(ssr), Some(s2))
        } else {
            (state, 0, ci_bounds(&s1, None, d)?, None, None)
        };

        let comparator = match self.cfg.comparator {
            Comparator::Maurer => Some(self.maurer(replicate, &s1, stage2, (zm, zp), &est)?),
            _ => None,
        };
        let stages = StageData::Single { stage1: s1, stage2 };
        Ok(TrialResult { decision, n2, ci, stage_reached: if n2 > 0 { 2 } else { 1 }, ssr, comparator, stages })
    }

    /// Re-tests both hypotheses with the combination test whenever the
    /// trial goes on. Stage-2 data come from the same streams as the
    /// adaptive rule's, so the two share a common prefix.
    fn maurer(
        &self,
        replicate: u64,
        s1: &StageSummary,
        adaptive_s2: Option<StageSummary>,
        (zm, zp): (f64, f64),
        est: &InterimEstimates,
    ) -> Result<RuleOutcome> {
        let d = &self.cfg.design;
        let b1 = d.bounds().efficacy_score();
        if zm > b1 && zp > b1 {
            return Ok(RuleOutcome {
                bioequivalent: true,
                stage1_bioequivalent: true,
                n2: 0,
                ci: ci_bounds(s1, None, d)?,
            });
        }
        let n2 = self.plan.maurer_n2(zm, zp, est)?.stage2_size();
        let s2 = match adaptive_s2 {
            Some(s) if s.n == n2 => s,
            _ => self.single_stage(replicate, n2, 2)?,
        };
        let e2 = s2.estimate(d);
        let delta = d.delta();
        let spec = d.spec();
        let e = self.plan.e_crit();
        let reject = |z1: f64, side: Side| spec.statistic(z1, e2.score(side, -delta)) > e;
        Ok(RuleOutcome {
            bioequivalent: reject(zm, Side::Minus) && reject(zp, Side::Plus),
            stage1_bioequivalent: false,
            n2,
            ci: ci_bounds(s1, Some(&s2), d)?,
        })
    }

    fn run_pair(&self, m: &PairModel, replicate: u64) -> Result<TrialResult> {
        let d = &self.cfg.design;
        let (s1, sigma1) = self.pair_stage(m, replicate, self.cfg.n1, 1)?;
        let state = minmax_interim(&s1, d);
        let (decision, n2, ci, ssr, stage2) = if state.needs_stage2() {
            let ssr = ssr_multi(
                &s1,
                &sigma1,
                &self.plan,
                &self.stream(replicate, SSR_NORMALS),
                &self.stream(replicate, SSR_CHIS),
            )?;
            let n2 = ssr.stage2_size();
            let (s2, _) = self.pair_stage(m, replicate, n2, 2)?;
            let decision = minmax_finalize(&state, &s2, d)?;
            (decision, n2, ci_minmax(&s1, Some(&s2), d)?, Some(ssr), Some(s2))
        } else {
            (state, 0, ci_minmax(&s1, None, d)?, None, None)
        };
        let comparator = match self.cfg.comparator {
            Comparator::IntersectionUnion => Some(self.intersection_union(m, replicate, &s1, &sigma1, stage2)?),
            _ => None,
        };
        let stages = StageData::Pair { stage1: s1, stage2 };
        Ok(TrialResult { decision, n2, ci, stage_reached: if n2 > 0 { 2 } else { 1 }, ssr, comparator, stages })
    }

    fn intersection_union(
        &self,
        m: &PairModel,
        replicate: u64,
        s1: &EndpointPairSummary,
        sigma1: &SymMatrix,
        adaptive_s2: Option<EndpointPairSummary>,
    ) -> Result<RuleOutcome> {
        let d = &self.cfg.design;
        let delta = d.delta();
        let b = d.bounds();
        let (b1, b0) = (b.efficacy_score(), b.futility_score());
        let per_endpoint = |s: &EndpointPairSummary, k: usize| {
            // the summary's se is σ̂√(2/n); recover σ̂
            StageSummary::new(s.theta_hat[k], s.se[k] / (2.0 / s.n as f64).sqrt(), s.n, s.stage)
        };
        let stage1 = [per_endpoint(s1, 0)?, per_endpoint(s1, 1)?];
        let z1 = stage1.map(|s| {
            let e = s.estimate(d);
            [e.score(Side::Minus, -delta), e.score(Side::Plus, -delta)]
        });
        let branches = z1.map(|row| row.map(|z| branch_of_score(z, b1, b0)));
        let continues = branches.iter().flatten().any(|br| *br == Branch::Middle);
        let stage1_be = branches.iter().flatten().all(|br| *br == Branch::Efficacy);

        let hull = |ci: [(f64, f64); 2]| (ci[0].0.min(ci[1].0), ci[0].1.max(ci[1].1));
        if !continues {
            let ci = [ci_bounds(&stage1[0], None, d)?, ci_bounds(&stage1[1], None, d)?];
            return Ok(RuleOutcome { bioequivalent: stage1_be, stage1_bioequivalent: stage1_be, n2: 0, ci: hull(ci) });
        }
        let out = iu_n2(
            s1,
            z1,
            sigma1,
            &self.plan,
            &self.stream(replicate, IU_NORMALS),
            &self.stream(replicate, IU_CHIS),
        )?;
        let n2 = out.stage2_size();
        let s2 = match adaptive_s2 {
            Some(s) if s.n == n2 => s,
            _ => self.pair_stage(m, replicate, n2, 2)?.0,
        };
        let stage2 = [per_endpoint(&s2, 0)?, per_endpoint(&s2, 1)?];
        let mut q = [[0.0; 2]; 2];
        for k in 0..2 {
            let e2 = stage2[k].estimate(d);
            let z2 = [e2.score(Side::Minus, -delta), e2.score(Side::Plus, -delta)];
            for j in 0..2 {
                q[k][j] = q_from_scores(branches[k][j], z1[k][j], Some(z2[j]), b1, b0, d.spec())?;
            }
        }
        let dec = iu_comparator(q, b.alpha());
        let ci = [ci_bounds(&stage1[0], Some(&stage2[0]), d)?, ci_bounds(&stage1[1], Some(&stage2[1]), d)?];
        Ok(RuleOutcome { bioequivalent: dec.bioequivalent, stage1_bioequivalent: stage1_be, n2, ci: hull(ci) })
    }
}

/// Runs one replicate of `cfg`. Deterministic in `(cfg.seed, replicate)`.
pub fn simulate_trial(cfg: &ScenarioConfig, replicate: u64) -> Result<TrialResult> {
    TrialRunner::new(cfg)?.run(replicate)
}

/// Counts behind a report. Merging adds fields, so any grouping of
/// replicates gives the same totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub trials: u64,
    pub failures: u64,
    pub upper_below_theta: u64,
    pub theta_below_lower: u64,
    pub upper_le_lower: u64,
    pub n2_sum: u64,
    pub n2_sq_sum: u64,
    pub n2_positive: u64,
    pub bioequivalent: u64,
    pub stage1_bioequivalent: u64,
}

impl Tally {
    pub fn record(&mut self, o: &RuleOutcome, theta: &Theta) {
        let (l, u) = o.ci;
        self.trials += 1;
        self.upper_below_theta += (u < theta.max()) as u64;
        self.theta_below_lower += (theta.min() < l) as u64;
        self.upper_le_lower += (u <= l) as u64;
        self.n2_sum += o.n2 as u64;
        self.n2_sq_sum += (o.n2 as u64).pow(2);
        self.n2_positive += (o.n2 > 0) as u64;
        self.bioequivalent += o.bioequivalent as u64;
        self.stage1_bioequivalent += o.stage1_bioequivalent as u64;
    }

    pub fn record_failure(&mut self) {
        self.failures += 1;
    }

    pub fn merge(mut self, o: &Tally) -> Tally {
        self.trials += o.trials;
        self.failures += o.failures;
        self.upper_below_theta += o.upper_below_theta;
        self.theta_below_lower += o.theta_below_lower;
        self.upper_le_lower += o.upper_le_lower;
        self.n2_sum += o.n2_sum;
        self.n2_sq_sum += o.n2_sq_sum;
        self.n2_positive += o.n2_positive;
        self.bioequivalent += o.bioequivalent;
        self.stage1_bioequivalent += o.stage1_bioequivalent;
        self
    }

    /// Monte Carlo standard error of the average stage-2 size.
    pub fn avg_n2_se(&self) -> f64 {
        if self.trials < 2 {
            return f64::NAN;
        }
        let n = self.trials as f64;
        let mean = self.n2_sum as f64 / n;
        let var = (self.n2_sq_sum as f64 / n - mean * mean) * n / (n - 1.0);
        (var.max(0.0) / n).sqrt()
    }

    pub fn report(&self, rule: &str, seed: u64) -> SimulationReport {
        let rate = |c: u64| if self.trials == 0 { 0.0 } else { c as f64 / self.trials as f64 };
        let given_positive = if self.n2_positive == 0 { 0.0 } else { self.n2_sum as f64 / self.n2_positive as f64 };
        SimulationReport {
            rule: rule.to_string(),
            frac_upper_below_theta: rate(self.upper_below_theta),
            frac_theta_below_lower: rate(self.theta_below_lower),
            frac_upper_le_lower: rate(self.upper_le_lower),
            avg_n2: rate(self.n2_sum),
            avg_n2_given_positive: given_positive,
            avg_total_n2: 2.0 * rate(self.n2_sum),
            avg_total_n2_given_positive: 2.0 * given_positive,
            overall_power: rate(self.bioequivalent),
            stage1_power: rate(self.stage1_bioequivalent),
            replications: self.trials + self.failures,
            failures: self.failures,
            seed,
        }
    }
}

/// Operating characteristics of one rule over a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub rule: String,
    /// `P(u < θ)`; for two endpoints `P(uᵐᵃˣ < max θ)`.
    pub frac_upper_below_theta: f64,
    /// `P(θ < l)`; for two endpoints `P(min θ < lᵐⁱⁿ)`.
    pub frac_theta_below_lower: f64,
    pub frac_upper_le_lower: f64,
    /// Per arm. Includes trials that stopped at the interim.
    pub avg_n2: f64,
    pub avg_n2_given_positive: f64,
    /// The same two averages counted over both arms.
    pub avg_total_n2: f64,
    pub avg_total_n2_given_positive: f64,
    pub overall_power: f64,
    pub stage1_power: f64,
    pub replications: u64,
    pub failures: u64,
    pub seed: u64,
}

pub const ADAPTIVE_RULE: &str = "adaptive-tost";

fn run_all(cfg: &ScenarioConfig, workers: usize) -> Result<Vec<Result<TrialResult>>> {
    let runner = TrialRunner::new(cfg)?;
    let reps = cfg.replications as u64;
    let work = || (0..reps).into_par_iter().map(|r| runner.run(r)).collect::<Vec<_>>();
    if workers == 0 {
        return Ok(work());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(work))
}

fn check_failures(t: &Tally, cfg: &ScenarioConfig, first: Option<&Error>) -> Result<()> {
    if t.failures as f64 > MAX_FAILURE_RATE * cfg.replications as f64 {
        let cause = first.map(|e| format!("; first failure: {e}")).unwrap_or_default();
        return Err(Error::numeric(
            format!("{} of {} replicates failed{cause}", t.failures, cfg.replications),
            None,
        ));
    }
    Ok(())
}

/// Tallies `(adaptive, comparator)` over all replicates. `workers = 0` uses
/// rayon's global pool.
pub fn run_tallies(cfg: &ScenarioConfig, workers: usize) -> Result<(Tally, Tally)> {
    let results = run_all(cfg, workers)?;
    let (mut main, mut comp) = (Tally::default(), Tally::default());
    let mut first_err = None;
    for r in &results {
        match r {
            Ok(t) => {
                main.record(&t.outcome(), &cfg.theta);
                if let Some(c) = &t.comparator {
                    comp.record(c, &cfg.theta);
                }
            }
            Err(e) => {
                main.record_failure();
                comp.record_failure();
                first_err.get_or_insert(e);
            }
        }
    }
    check_failures(&main, cfg, first_err)?;
    Ok((main, comp))
}

/// Report of the adaptive TOST for `cfg`.
pub fn run_study(cfg: &ScenarioConfig, workers: usize) -> Result<SimulationReport> {
    let mut cfg = cfg.clone();
    cfg.comparator = Comparator::None;
    Ok(run_tallies(&cfg, workers)?.0.report(ADAPTIVE_RULE, cfg.seed))
}

/// Reports of `(comparator, adaptive TOST)` on identical data.
pub fn run_comparator_study(cfg: &ScenarioConfig, workers: usize) -> Result<(SimulationReport, SimulationReport)> {
    let name = match cfg.comparator {
        Comparator::None => return Err(Error::config("no comparator configured")),
        Comparator::Maurer => "maurer",
        Comparator::IntersectionUnion => "intersection-union",
    };
    let (main, comp) = run_tallies(cfg, workers)?;
    Ok((comp.report(name, cfg.seed), main.report(ADAPTIVE_RULE, cfg.seed)))
}

/// Column names of the CSV report.
pub const CSV_HEADER: [&str; 19] = [
    "scenario",
    "rule",
    "theta",
    "correlation",
    "w",
    "w_star",
    "alpha1",
    "alpha0",
    "upper CI<theta",
    "theta<lower CI",
    "upper CI<=lower CI",
    "Avg. n2 per arm",
    "Avg n2|n2>0 per arm",
    "Avg. n2 both arms",
    "Avg n2|n2>0 both arms",
    "Avg. power overall",
    "Avg. power stage 1",
    "seed",
    "failures",
];

/// One report with the scenario columns that identify it.
pub fn report_record(cfg: &ScenarioConfig, r: &SimulationReport) -> Vec<String> {
    let theta = match cfg.theta {
        Theta::Single(t) => format!("{t:.6}"),
        Theta::Pair([a, b]) => format!("{a:.6};{b:.6}"),
    };
    let d = &cfg.design;
    vec![
        cfg.name.clone().unwrap_or_default(),
        r.rule.clone(),
        theta,
        cfg.endpoint_correlation.map(|x| format!("{x}")).unwrap_or_default(),
        format!("{:.6}", d.spec().w()),
        format!("{:.6}", d.spec().w_star()),
        format!("{}", d.bounds().alpha1()),
        format!("{}", d.bounds().alpha0()),
        format!("{:.4}", r.frac_upper_below_theta),
        format!("{:.4}", r.frac_theta_below_lower),
        format!("{:.4}", r.frac_upper_le_lower),
        format!("{:.3}", r.avg_n2),
        format!("{:.3}", r.avg_n2_given_positive),
        format!("{:.3}", r.avg_total_n2),
        format!("{:.3}", r.avg_total_n2_given_positive),
        format!("{:.4}", r.overall_power),
        format!("{:.4}", r.stage1_power),
        r.seed.to_string(),
        r.failures.to_string(),
    ]
}

/// Writes reports as comma-separated values with a fixed header row.
pub fn write_csv<W: Write>(out: W, rows: &[(ScenarioConfig, SimulationReport)]) -> Result<()> {
    let io = |e: csv::Error| Error::config(format!("csv output: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(io)?;
    for (cfg, r) in rows {
        w.write_record(report_record(cfg, r)).map_err(io)?;
    }
    w.flush().map_err(|e| Error::config(format!("csv output: {e}")))
}

/// Writes reports as an aligned text table.
pub fn write_table<W: Write>(mut out: W, rows: &[(ScenarioConfig, SimulationReport)]) -> std::io::Result<()> {
    let cells: Vec<Vec<String>> = std::iter::once(CSV_HEADER.iter().map(|s| s.to_string()).collect())
        .chain(rows.iter().map(|(c, r)| report_record(c, r)))
        .collect();
    let widths: Vec<usize> = (0..CSV_HEADER.len())
        .map(|j| cells.iter().map(|row| row[j].chars().count()).max().unwrap_or(0))
        .collect();
    for (i, row) in cells.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}", w = *w))
            .collect();
        writeln!(out, "{}", line.join("  ").trim_end())?;
        if i == 0 {
            writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)))?;
        }
    }
    Ok(())
}
