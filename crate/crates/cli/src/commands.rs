use std::fmt::Write as _;

use abe_core::combination::{calibrate_pocock, Boundaries, CombinationSpec};
use abe_core::multi::{ci_minmax, minmax_finalize, minmax_interim, EndpointPairSummary};
use abe_core::sim::{run_comparator_study, run_study, write_csv, write_table, Comparator, SimulationReport};
use abe_core::sim::ScenarioConfig;
use abe_core::ssr::{ssr_multi, InterimEstimates, SsrOutcome, SsrPlan};
use abe_core::stats::rng::RngStream;
use abe_core::stats::SymMatrix;
use abe_core::tost::{
    check_prop1, ci_bounds, finalize_scores, interim_decide_scores, DesignSpec, HypothesisOutcome, Side,
    StageSummary, TostState,
};
use serde::Serialize;

use crate::config::{CalibrateInput, InterimInput, PerEndpoint, StageInput, StudyInput, TrialInput};
use crate::error::CliError;
use crate::manifest::RunManifest;

/// SSR streams for two-endpoint inputs, matching the simulator's purposes.
const SSR_NORMALS: u64 = 4;
const SSR_CHIS: u64 = 5;

/// Rendered result of a subcommand.
pub struct Report {
    pub manifest: RunManifest,
    pub csv: String,
    pub table: String,
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(std::io::Error::other(e));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn kebab<T: Serialize>(v: &T) -> String {
    match toml::Value::try_from(v) {
        Ok(toml::Value::String(s)) => s,
        _ => "?".into(),
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// The §5.2 setup: Δ = log 1.25, σ = 0.294, 40 subjects per arm.
fn default_delta_over_sigma() -> f64 {
    1.25f64.ln() / (0.294 * (2.0f64 / 40.0).sqrt())
}

pub fn calibrate(input: CalibrateInput) -> Result<Report, CliError> {
    let need = |x: Option<f64>, name: &str| x.ok_or_else(|| CliError::Config(format!("missing {name}")));
    let alpha = input.alpha.unwrap_or(0.05);
    let alpha0 = need(input.alpha0, "alpha0")?;
    let w = need(input.w, "w")?;
    let w_star = need(input.w_star, "w_star")?;
    let ratio = input.delta_over_sigma.unwrap_or_else(default_delta_over_sigma);
    if !(alpha > 0.0 && alpha < alpha0 && alpha0 <= 1.0) {
        return Err(CliError::Config(format!("need 0 < alpha < alpha0 <= 1, got alpha = {alpha}, alpha0 = {alpha0}")));
    }
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(CliError::Config(format!("delta_over_sigma = {ratio} must be positive")));
    }
    let spec = CombinationSpec::new(w, w_star)?;
    let alpha1 = calibrate_pocock(alpha, alpha0, &spec)?;
    let delta = 1.25f64.ln();
    let design = DesignSpec::new(delta, Boundaries::new(alpha, alpha1, alpha0)?, spec, false)?;
    let d = check_prop1(&design, delta / ratio);

    let resolved = CalibrateInput {
        alpha: Some(alpha),
        alpha0: Some(alpha0),
        w: Some(w),
        w_star: Some(w_star),
        delta_over_sigma: Some(ratio),
    };
    let header = [
        "alpha",
        "alpha0",
        "w",
        "w_star",
        "alpha1",
        "delta_over_sigma",
        "futility_bound_ok",
        "efficacy_bound_ok",
        "margin_ok",
        "prop1_guarantee",
        "futility_forces_stop",
    ];
    let row = vec![
        alpha.to_string(),
        alpha0.to_string(),
        w.to_string(),
        w_star.to_string(),
        alpha1.to_string(),
        ratio.to_string(),
        d.futility_bound_ok.to_string(),
        d.efficacy_bound_ok.to_string(),
        d.margin_ok.to_string(),
        d.guarantee.to_string(),
        d.futility_forces_stop.to_string(),
    ];
    let mut table = String::new();
    writeln!(table, "alpha1 = {alpha1:.6}  (alpha = {alpha}, alpha0 = {alpha0}, w = {w:.6}, w* = {w_star:.6})").unwrap();
    writeln!(table, "l < u guaranteed at delta/sigma_1n = {ratio:.4}: {}", d.guarantee).unwrap();
    writeln!(table, "  alpha0 <= 0.5:              {}", d.futility_bound_ok).unwrap();
    writeln!(table, "  efficacy bound condition:   {}", d.efficacy_bound_ok).unwrap();
    writeln!(table, "  margin condition:           {}", d.margin_ok).unwrap();
    writeln!(table, "futility on one side forces a stop: {}", d.futility_forces_stop).unwrap();
    Ok(Report {
        manifest: RunManifest::new("calibrate", None, &resolved)?,
        csv: csv_text(&header, &[row])?,
        table,
    })
}

enum Stage {
    Single(StageSummary),
    Pair(EndpointPairSummary),
}

fn stage(input: &StageInput, number: u8) -> Result<Stage, CliError> {
    match (input.theta_hat, input.sigma_hat) {
        (PerEndpoint::One(t), PerEndpoint::One(s)) => Ok(Stage::Single(StageSummary::new(t, s, input.n, number)?)),
        (PerEndpoint::Two(t), PerEndpoint::Two(s)) => {
            Ok(Stage::Pair(EndpointPairSummary::from_sigma(t, s, input.n, number)?))
        }
        _ => Err(CliError::Config(format!(
            "stage{number}: theta_hat and sigma_hat must both be numbers or both be pairs"
        ))),
    }
}

fn stages(input: &TrialInput) -> Result<(Stage, Option<Stage>), CliError> {
    let s1 = stage(&input.stage1, 1)?;
    let s2 = input.stage2.as_ref().map(|s| stage(s, 2)).transpose()?;
    match (&s1, &s2) {
        (Stage::Single(_), Some(Stage::Pair(_))) | (Stage::Pair(_), Some(Stage::Single(_))) => {
            Err(CliError::Config("stage1 and stage2 must have the same number of endpoints".into()))
        }
        _ => Ok((s1, s2)),
    }
}

fn scores(s: &StageSummary, d: &DesignSpec) -> (f64, f64) {
    let e = s.estimate(d);
    (e.score(Side::Minus, -d.delta()), e.score(Side::Plus, -d.delta()))
}

pub fn decide(input: TrialInput) -> Result<Report, CliError> {
    let d = &input.design;
    let (s1, s2) = stages(&input)?;
    let interim = match &s1 {
        Stage::Single(s) => {
            let (zm, zp) = scores(s, d);
            interim_decide_scores(zm, zp, d.bounds())
        }
        Stage::Pair(s) => minmax_interim(s, d),
    };
    let state = match s2 {
        None => interim,
        Some(_) if !interim.needs_stage2() => {
            return Err(CliError::Config("stage2 given but the trial stops at the interim".into()));
        }
        Some(Stage::Single(s)) => {
            let (zm, zp) = scores(&s, d);
            let open = |side: Side| !interim.outcome(side).state.is_terminal();
            finalize_scores(&interim, open(Side::Minus).then_some(zm), open(Side::Plus).then_some(zp), d)?
        }
        Some(Stage::Pair(s)) => minmax_finalize(&interim, &s, d)?,
    };
    render_decision(&input, &state)
}

fn render_decision(input: &TrialInput, state: &TostState) -> Result<Report, CliError> {
    let verdict = match state.bioequivalent {
        Some(true) => "bioequivalent",
        Some(false) => "not-bioequivalent",
        None => "continue-to-stage-2",
    };
    let row = |name: &str, o: &HypothesisOutcome| {
        vec![name.to_string(), kebab(&o.state), o.p1.to_string(), opt(o.p2), opt(o.overall_p), verdict.to_string()]
    };
    let rows = [row("H0-", &state.minus), row("H0+", &state.plus)];
    let mut table = String::new();
    for (name, o) in [("H0-", &state.minus), ("H0+", &state.plus)] {
        let show = |p: Option<f64>| p.map(short).unwrap_or_else(|| "-".into());
        writeln!(
            table,
            "{name}: {} (p1 = {}, p2 = {}, overall p = {})",
            kebab(&o.state),
            short(o.p1),
            show(o.p2),
            show(o.overall_p)
        )
        .unwrap();
    }
    writeln!(table, "{verdict}").unwrap();
    Ok(Report {
        manifest: RunManifest::new("decide", None, input)?,
        csv: csv_text(&["hypothesis", "state", "p1", "p2", "overall_p", "decision"], &rows)?,
        table,
    })
}

fn short(p: f64) -> String {
    if p >= 1e-4 {
        format!("{p:.6}")
    } else {
        format!("{p:.3e}")
    }
}

fn or_dash(s: &str) -> &str {
    if s.is_empty() {
        "-"
    } else {
        s
    }
}

pub fn ci(input: TrialInput) -> Result<Report, CliError> {
    let d = &input.design;
    let (s1, s2) = stages(&input)?;
    let (l, u) = match (&s1, &s2) {
        (Stage::Single(a), None) => ci_bounds(a, None, d)?,
        (Stage::Single(a), Some(Stage::Single(b))) => ci_bounds(a, Some(b), d)?,
        (Stage::Pair(a), None) => ci_minmax(a, None, d)?,
        (Stage::Pair(a), Some(Stage::Pair(b))) => ci_minmax(a, Some(b), d)?,
        _ => unreachable!("stages() rejects mixed inputs"),
    };
    let row = vec![l.to_string(), u.to_string(), l.exp().to_string(), u.exp().to_string()];
    let table = format!("log scale:   [{l:.6}, {u:.6}]\nratio scale: [{:.6}, {:.6}]\n", l.exp(), u.exp());
    Ok(Report {
        manifest: RunManifest::new("ci", None, &input)?,
        csv: csv_text(&["lower", "upper", "ratio_lower", "ratio_upper"], &[row])?,
        table,
    })
}

pub fn ssr(input: InterimInput, seed: Option<u64>) -> Result<Report, CliError> {
    let d = &input.design;
    let plan = SsrPlan::new(d, &input.ssr)?;
    let (out, seed): (SsrOutcome, Option<u64>) = match stage(&input.interim, 1)? {
        Stage::Single(s) => {
            let (zm, zp) = scores(&s, d);
            let est = InterimEstimates::new(s.theta_hat, s.sigma_hat, s.n)?;
            (plan.for_interim(zm, zp, &est)?, None)
        }
        Stage::Pair(s) => {
            let rho = input
                .interim
                .correlation
                .ok_or_else(|| CliError::Config("two-endpoint ssr needs interim.correlation".into()))?;
            let PerEndpoint::Two(sd) = input.interim.sigma_hat else { unreachable!() };
            let c = 2.0 * rho * sd[0] * sd[1];
            let sigma = SymMatrix::from_rows([[2.0 * sd[0] * sd[0], c], [c, 2.0 * sd[1] * sd[1]]])?;
            let seed = seed.unwrap_or(0);
            let (normals, chis) = (RngStream::new(seed, SSR_NORMALS), RngStream::new(seed, SSR_CHIS));
            (ssr_multi(&s, &sigma, &plan, &normals, &chis)?, Some(seed))
        }
    };
    let row = vec![
        kebab(&out.scenario),
        out.scenario.number().map(|n| n.to_string()).unwrap_or_default(),
        out.n2.to_string(),
        out.required_cp.to_string(),
        opt(out.achieved_cp),
        out.saturated.to_string(),
        out.degenerate.to_string(),
    ];
    let mut table = String::new();
    writeln!(table, "scenario {} ({})", or_dash(&row[1]), row[0]).unwrap();
    writeln!(table, "n2 = {}{}", out.n2, if out.saturated { " (capped at n2_max)" } else { "" }).unwrap();
    writeln!(table, "required conditional power = {:.6}{}", out.required_cp, if out.degenerate { " (limit)" } else { "" })
        .unwrap();
    if let Some(cp) = out.achieved_cp {
        writeln!(table, "achieved conditional power = {cp:.6}").unwrap();
    }
    Ok(Report {
        manifest: RunManifest::new("ssr", seed, &input)?,
        csv: csv_text(
            &["scenario", "scenario_number", "n2", "required_cp", "achieved_cp", "saturated", "degenerate"],
            &[row],
        )?,
        table,
    })
}

/// Applies the seed precedence: command line, then file, then scenario.
pub fn resolve_study(mut study: StudyInput, seed: Option<u64>) -> StudyInput {
    if let Some(s) = seed.or(study.seed) {
        study.seed = Some(s);
        for sc in &mut study.scenario {
            sc.seed = s;
        }
    }
    study
}

pub fn simulate(study: StudyInput, seed: Option<u64>, workers: usize) -> Result<Report, CliError> {
    if study.scenario.is_empty() {
        return Err(CliError::Config("no [[scenario]] given".into()));
    }
    let study = resolve_study(study, seed);
    let mut rows: Vec<(ScenarioConfig, SimulationReport)> = Vec::new();
    for sc in &study.scenario {
        if sc.comparator == Comparator::None {
            rows.push((sc.clone(), run_study(sc, workers)?));
        } else {
            let (comp, adaptive) = run_comparator_study(sc, workers)?;
            rows.push((sc.clone(), adaptive));
            rows.push((sc.clone(), comp));
        }
    }
    let mut csv = Vec::new();
    write_csv(&mut csv, &rows)?;
    let mut table = Vec::new();
    write_table(&mut table, &rows)?;
    Ok(Report {
        manifest: RunManifest::new("simulate", study.seed, &study)?,
        csv: String::from_utf8(csv).expect("csv output is UTF-8"),
        table: String::from_utf8(table).expect("table output is UTF-8"),
    })
}
