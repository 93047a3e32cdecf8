use abe_core::combination::{Boundaries, CombinationSpec};
use abe_core::sim::{run_study, ScenarioConfig};
use abe_core::ssr::{InterimEstimates, SsrConfig, SsrPlan};
use abe_core::stats::dist::phi_inv_upper;
use abe_core::tost::{ci_bounds, finalize, interim_decide, stage_p, DesignSpec, Side, StageSummary};

fn design(use_t: bool) -> DesignSpec {
    let spec = CombinationSpec::new(0.5f64.sqrt(), 0.5f64.sqrt()).unwrap();
    DesignSpec::new(1.25f64.ln(), Boundaries::new(0.05, 0.031, 0.5).unwrap(), spec, use_t).unwrap()
}

// Interim decision, re-estimation, final decision and interval by hand, the
// way a trial statistician would chain them.
#[test]
fn two_stage_trial_by_hand() {
    let d = design(true);
    let plan = SsrPlan::new(&d, &SsrConfig::default()).unwrap();
    let delta = d.delta();
    let mut continued = 0;
    for i in 0..40 {
        let theta1 = -0.2 + 0.01 * i as f64;
        let s1 = StageSummary::new(theta1, 0.3, 40, 1).unwrap();
        let (pm, pp) = (stage_p(&s1, &d, Side::Minus), stage_p(&s1, &d, Side::Plus));
        let state = interim_decide(pm, pp, d.bounds());
        let (l, u, be) = if state.needs_stage2() {
            continued += 1;
            let est = InterimEstimates::new(theta1, 0.3, 40).unwrap();
            let n2 = plan.for_interim(phi_inv_upper(pm), phi_inv_upper(pp), &est).unwrap().stage2_size();
            assert!((2..=300).contains(&n2), "θ̂₁ {theta1}: n2 {n2}");
            // the second stage sees the same effect with a slightly larger SD
            let s2 = StageSummary::new(theta1 * 0.5, 0.32, n2, 2).unwrap();
            let cont = |side, p| if state.outcome(side).state.is_terminal() { None } else { Some(p) };
            let fin = finalize(
                &state,
                cont(Side::Minus, stage_p(&s2, &d, Side::Minus)),
                cont(Side::Plus, stage_p(&s2, &d, Side::Plus)),
                &d,
            )
            .unwrap();
            let (l, u) = ci_bounds(&s1, Some(&s2), &d).unwrap();
            (l, u, fin.bioequivalent.unwrap())
        } else {
            let (l, u) = ci_bounds(&s1, None, &d).unwrap();
            (l, u, state.bioequivalent.unwrap())
        };
        assert!(l < u, "θ̂₁ {theta1}: [{l}, {u}]");
        assert_eq!(be, -delta < l && u < delta, "θ̂₁ {theta1}: [{l}, {u}] against decision {be}");
    }
    assert!(continued > 0);
}

#[test]
fn study_reports_do_not_depend_on_worker_count() {
    let mut cfg = ScenarioConfig::single(0.95f64.ln(), design(true), 17);
    cfg.replications = 400;
    let one = run_study(&cfg, 1).unwrap();
    assert_eq!(one, run_study(&cfg, 3).unwrap());
    assert_eq!(one.replications, 400);
    assert_eq!(one.avg_total_n2, 2.0 * one.avg_n2);
    assert!(one.overall_power > 0.9);
}
