use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix4, Matrix5};
use serde_json::{json, Value};

use panel_ctmc::absorption::{absorption_summary, AbsorptionSummary};
use panel_ctmc::chain::{build_generator, RATE_NAMES};
use panel_ctmc::estimation::{estimate_dataset, EstimationOptions, EstimationResult, PanelDataset};
use panel_ctmc::format::{parse_dataset, write_count_tables, write_records};
use panel_ctmc::gof::{gof_report, GofReport};
use panel_ctmc::simulate::{
    irregular_schedule, panelize_subjects, random_missing_pattern, simulate_cohort, CohortSpec, Execution,
    ObservationSchedule, StartDistribution,
};
use panel_ctmc::summary::{
    expected_counts, limiting_covariance, limiting_distribution, occupancy_at, sojourn_summary, CohortVector,
    OccupancyVector,
};
use panel_ctmc::RateVector;

use crate::config::AnalysisConfig;
use crate::model::FittedModel;
use crate::render::{self, num, vector};
use crate::{AnalysisArgs, CliError, Command, SimulateArgs};

const STATES: [&str; 4] = ["1", "2", "3", "4"];

/// Text for the terminal plus the structured document for `--output`.
struct Report {
    text: String,
    doc: serde_json::Map<String, Value>,
}

impl Report {
    fn new(command: &str, cfg: &AnalysisConfig) -> Self {
        let mut doc = serde_json::Map::new();
        doc.insert("command".into(), json!(command));
        doc.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        doc.insert("config".into(), json!(cfg));
        Report {
            text: String::new(),
            doc,
        }
    }

    fn section(&mut self, key: &str, value: Value) {
        self.doc.insert(key.into(), value);
    }

    fn emit(self, output: Option<&Path>) -> Result<(), CliError> {
        print!("{}", self.text);
        if let Some(path) = output {
            let mut body = serde_json::to_string_pretty(&Value::Object(self.doc)).expect("report serializes");
            body.push('\n');
            std::fs::write(path, body).map_err(|e| CliError::io(path, e))?;
        }
        Ok(())
    }
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Estimate(a) => estimate(&a),
        Command::Summarize(a) => analysis(&a, "summarize", &[Part::Summary]),
        Command::Absorb(a) => analysis(&a, "absorb", &[Part::Absorption]),
        Command::Gof(a) => analysis(&a, "gof", &[Part::Gof]),
        Command::ReportAll(a) => {
            if a.input.is_none() {
                return Err(CliError::Config("report-all needs --input".into()));
            }
            analysis(&a, "report-all", &[Part::Estimation, Part::Summary, Part::Absorption, Part::Gof])
        }
        Command::Simulate(a) => simulate(&a),
    }
}

fn settings(a: &AnalysisArgs) -> Result<AnalysisConfig, CliError> {
    let mut cfg = match &a.config {
        Some(p) => AnalysisConfig::load(p)?,
        None => AnalysisConfig::default(),
    };
    if let Some(t) = a.tol {
        cfg.tolerance = t;
    }
    if let Some(m) = a.max_iter {
        cfg.max_iter = m;
    }
    if let Some(x) = a.alpha {
        cfg.significance = x;
    }
    if let Some(h) = &a.horizons {
        cfg.horizons = h.clone();
    }
    if let Some(p) = a.pi0 {
        cfg.pi0 = p;
    }
    if a.u0.is_some() {
        cfg.u0 = a.u0;
    }
    if a.cvec.is_some() {
        cfg.cvec = a.cvec;
    }
    if a.strict_gradient {
        cfg.strict_gradient = true;
    }
    if let Some(z) = a.zero_cells {
        cfg.zero_cells = z.into();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn options(cfg: &AnalysisConfig) -> EstimationOptions {
    EstimationOptions {
        tol: cfg.tolerance,
        max_iter: cfg.max_iter,
        zero_cells: cfg.zero_cells,
    }
}

fn load_dataset(path: &Path) -> Result<PanelDataset, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_dataset(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn generator_rows(theta: &RateVector) -> Result<[[f64; 4]; 4], CliError> {
    let q = build_generator(theta)?;
    Ok(std::array::from_fn(|i| std::array::from_fn(|j| q.matrix()[(i, j)])))
}

fn estimate(a: &AnalysisArgs) -> Result<(), CliError> {
    let cfg = settings(a)?;
    let input = a
        .input
        .as_deref()
        .ok_or_else(|| CliError::Config("estimate needs --input".into()))?;
    let dataset = load_dataset(input)?;
    let fit = estimate_dataset(&dataset, &options(&cfg))?;
    let mut r = Report::new("estimate", &cfg);
    let model = FittedModel {
        theta: fit.pooled_theta,
        var_theta: Some(fit.pooled_covariance),
    };
    estimation_part(&mut r, &cfg, &fit)?;
    r.section("model", json!(model));
    r.emit(a.output.as_deref())
}

fn estimation_part(r: &mut Report, cfg: &AnalysisConfig, fit: &EstimationResult) -> Result<(), CliError> {
    let t = &mut r.text;
    let _ = writeln!(
        t,
        "estimation (tolerance {}, max_iter {}, zero cells {})",
        num(cfg.tolerance),
        cfg.max_iter,
        serde_json::to_value(cfg.zero_cells).expect("policy serializes").as_str().unwrap_or("")
    );
    let mut cols = vec!["weight", "iterations"];
    cols.extend(RATE_NAMES);
    let rows: Vec<(String, Vec<f64>)> = fit
        .per_interval
        .iter()
        .map(|(dt, e)| {
            let mut row = vec![fit.weights[dt], e.iterations as f64];
            row.extend(e.theta_hat.to_array());
            (format!("delta_t={dt}"), row)
        })
        .collect();
    render::table(t, "", &cols, &rows);
    for (dt, e) in &fit.per_interval {
        if !e.corrected_cells.is_empty() {
            let cells: Vec<String> = e.corrected_cells.iter().map(|(i, j)| format!("({i},{j})")).collect();
            let _ = writeln!(t, "  note: delta_t={dt} zero cells {} counted as 1/2 in the Hessian", cells.join(" "));
        }
    }
    let _ = writeln!(t, "pooled rates");
    let pooled = fit.pooled_theta.to_array();
    for (name, v) in RATE_NAMES.iter().zip(pooled) {
        let _ = writeln!(t, "  {name:<9} {}", num(v));
    }
    let _ = writeln!(t, "generator Q");
    render::square(t, "", &STATES, &generator_rows(&fit.pooled_theta)?);
    let _ = writeln!(t, "var(theta)");
    render::square(t, "", &RATE_NAMES, &fit.pooled_covariance);
    let generator = generator_rows(&fit.pooled_theta)?;
    r.section(
        "estimation",
        json!({
            "options": options(cfg),
            "per_interval": fit.per_interval,
            "weights": fit.weights,
            "pooled_theta": fit.pooled_theta,
            "generator": generator,
            "pooled_covariance": fit.pooled_covariance,
        }),
    );
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Part {
    Estimation,
    Summary,
    Absorption,
    Gof,
}

/// Resolves the model (file, flag, or a fit of `--input`) and runs the
/// requested parts. With `Part::Estimation` the input is always fitted and
/// reported; a `--model` or `--theta` still takes over downstream.
fn analysis(a: &AnalysisArgs, command: &str, parts: &[Part]) -> Result<(), CliError> {
    let cfg = settings(a)?;
    let needs_data = parts.contains(&Part::Gof) || parts.contains(&Part::Estimation);
    let dataset = match &a.input {
        Some(p) => Some(load_dataset(p)?),
        None if needs_data => return Err(CliError::Config(format!("{command} needs --input"))),
        None => None,
    };
    let explicit = match (&a.model, a.theta) {
        (Some(p), _) => Some(FittedModel::load(p)?),
        (None, Some(theta)) => Some(FittedModel { theta, var_theta: None }),
        (None, None) => None,
    };
    let fit = match (&dataset, &explicit) {
        (Some(ds), _) if parts.contains(&Part::Estimation) => Some(estimate_dataset(ds, &options(&cfg))?),
        (Some(ds), None) => Some(estimate_dataset(ds, &options(&cfg))?),
        _ => None,
    };
    let model = match (explicit, &fit) {
        (Some(m), _) => m,
        (None, Some(f)) => FittedModel {
            theta: f.pooled_theta,
            var_theta: Some(f.pooled_covariance),
        },
        (None, None) => return Err(CliError::Config(format!("{command} needs --model, --theta or --input"))),
    };

    let mut r = Report::new(command, &cfg);
    if parts.contains(&Part::Estimation) {
        estimation_part(&mut r, &cfg, fit.as_ref().expect("fitted above"))?;
    }
    let _ = writeln!(r.text, "model rates {}", vector(&model.theta.to_array()));
    r.section("model", json!(model));
    for part in parts {
        match part {
            Part::Estimation => {}
            Part::Summary => summary_part(&mut r, &cfg, &model)?,
            Part::Absorption => absorption_part(&mut r, &model.theta)?,
            Part::Gof => gof_part(&mut r, &cfg, &model.theta, dataset.as_ref().expect("checked above"))?,
        }
    }
    r.emit(a.output.as_deref())
}

fn summary_part(r: &mut Report, cfg: &AnalysisConfig, model: &FittedModel) -> Result<(), CliError> {
    let var = model.var_theta.map(|v| panel_ctmc::estimation::from_rows(&v)).unwrap_or_else(Matrix5::zeros);
    let convention = cfg.gradient();
    let soj = sojourn_summary(&model.theta, &var, convention)?;
    let t = &mut r.text;
    if model.var_theta.is_none() {
        let _ = writeln!(t, "note: no var(theta) supplied; variances below are zero");
    }
    let convention_name = serde_json::to_value(convention).expect("serializes");
    let _ = writeln!(t, "sojourn times (gradient {})", convention_name.as_str().unwrap_or(""));
    for (state, mean, var) in [(1, soj.s1, soj.var_s1), (2, soj.s2, soj.var_s2)] {
        let _ = writeln!(
            t,
            "  state {state}: mean {} years ({}), variance {}",
            num(mean),
            render::years_months(mean),
            num(var)
        );
    }

    let pi0 = OccupancyVector::new(cfg.pi0, 0.0)?;
    let u0 = cfg.u0.map(|u| CohortVector::new(u, 0.0)).transpose()?;
    let mut occ_rows = Vec::new();
    let mut count_rows = Vec::new();
    let mut occupancy = Vec::new();
    for &h in &cfg.horizons {
        let p = occupancy_at(&pi0, &model.theta, h)?;
        let u = u0.as_ref().map(|u0| expected_counts(u0, &model.theta, h)).transpose()?;
        occ_rows.push((format!("t={}", num(h)), p.pi.to_vec()));
        if let Some(u) = &u {
            count_rows.push((format!("t={}", num(h)), u.u.to_vec()));
        }
        occupancy.push(json!({ "t": h, "pi": p.pi, "u": u.map(|u| u.u) }));
    }
    let _ = writeln!(t, "occupancy from pi0 = {}", vector(&cfg.pi0));
    render::table(t, "", &["pi1", "pi2", "pi3", "pi4"], &occ_rows);
    if let Some(u0) = cfg.u0 {
        let _ = writeln!(t, "expected counts from u0 = {}", vector(&u0));
        render::table(t, "", &["u1", "u2", "u3", "u4"], &count_rows);
    }

    let pi_inf = limiting_distribution(&pi0, &model.theta)?;
    let cvec = cfg.cvec.unwrap_or(pi_inf);
    let lc = limiting_covariance(&cvec, &model.theta, &var)?;
    let rows4 = |m: &Matrix4<f64>| -> [[f64; 4]; 4] { std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)])) };
    let cov = rows4(&lc.covariance);
    let pinv = rows4(&lc.q_transpose_pinv);
    let a_rows: [[f64; 5]; 4] = std::array::from_fn(|i| std::array::from_fn(|j| lc.a[(i, j)]));
    let _ = writeln!(t, "limiting distribution {}", vector(&pi_inf));
    let _ = writeln!(t, "pseudo-inverse of Q'");
    render::square(t, "", &STATES, &pinv);
    let _ = writeln!(t, "limiting covariance with cvec = {}", vector(&cvec));
    render::square(t, "", &STATES, &cov);
    r.section(
        "summary",
        json!({
            "sojourn": {
                "gradient": convention,
                "s1": soj.s1,
                "s2": soj.s2,
                "var_s1": soj.var_s1,
                "var_s2": soj.var_s2,
                "s1_years_months": render::years_months(soj.s1),
                "s2_years_months": render::years_months(soj.s2),
            },
            "occupancy": occupancy,
            "limiting": {
                "pi0": cfg.pi0,
                "pi_inf": pi_inf,
                "cvec": cvec,
                "q_transpose_pinv": pinv,
                "a": a_rows,
                "covariance": cov,
            },
        }),
    );
    Ok(())
}

fn absorption_notes(theta: &RateVector) -> Vec<String> {
    let mut notes = Vec::new();
    if theta.lambda23 == 0.0 {
        notes.push("lambda23 = 0: state 3 is unreachable and its E(tau) column is 0 by the closed form".to_string());
    }
    if theta.lambda14 == 0.0 && theta.lambda24 == 0.0 {
        notes.push("lambda14 = lambda24 = 0: state 4 is unreachable and its E(tau) column is 0".to_string());
    }
    notes
}

fn absorption_part(r: &mut Report, theta: &RateVector) -> Result<(), CliError> {
    let s: AbsorptionSummary = absorption_summary(theta)?;
    let notes = absorption_notes(theta);
    let t = &mut r.text;
    let pairs = [
        ("transient block B", &s.b, ["1", "2"]),
        ("absorbing block A", &s.a_block, ["3", "4"]),
        ("B inverse", &s.b_inverse, ["1", "2"]),
        ("Z = B^-1 A", &s.z, ["3", "4"]),
        ("absorption probabilities -Z", &s.absorption_probabilities, ["3", "4"]),
    ];
    for (title, m, cols) in pairs {
        let _ = writeln!(t, "{title}");
        let rows: Vec<(String, Vec<f64>)> = m.iter().zip(["1", "2"]).map(|(r, l)| (l.to_string(), r.to_vec())).collect();
        render::table(t, "", &cols, &rows);
    }
    let _ = writeln!(t, "expected time to absorption E(tau), years");
    let rows: Vec<(String, Vec<f64>)> =
        s.etau.iter().zip(["from 1", "from 2"]).map(|(r, l)| (l.to_string(), r.to_vec())).collect();
    render::table(t, "", &["into 3", "into 4"], &rows);
    for n in &notes {
        let _ = writeln!(t, "  note: {n}");
    }
    let mut v = json!(s);
    v["notes"] = json!(notes);
    r.section("absorption", v);
    Ok(())
}

fn gof_part(r: &mut Report, cfg: &AnalysisConfig, theta: &RateVector, ds: &PanelDataset) -> Result<(), CliError> {
    let g: GofReport = gof_report(theta, ds, cfg.significance)?;
    let t = &mut r.text;
    let _ = writeln!(t, "goodness of fit (alpha {})", num(g.alpha));
    for (dt, part) in &g.per_interval {
        let _ = writeln!(t, "  delta_t={dt}: chi-square {} on {} df; expected counts", num(part.chi_sq), part.df);
        let rows: Vec<(String, Vec<f64>)> =
            part.expected_table.iter().take(2).zip(["1", "2"]).map(|(r, l)| (l.to_string(), r.to_vec())).collect();
        render::table(t, "", &STATES, &rows);
    }
    let _ = writeln!(
        t,
        "  pooled chi-square {} on {} df, critical value {}, reject null: {}",
        num(g.pooled_chi_sq),
        g.pooled_df,
        num(g.critical_value),
        g.reject_null
    );
    let _ = writeln!(t, "  note: {}", g.df_note);
    let _ = writeln!(t, "  reference interpretation: \"{}\"", g.reference_interpretation);
    r.section("gof", json!(g));
    Ok(())
}

fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let theta = match (&a.model, a.theta) {
        (Some(p), _) => FittedModel::load(p)?.theta,
        (None, Some(t)) => t,
        (None, None) => return Err(CliError::Config("simulate needs --model or --theta".into())),
    };
    if a.years == 0 {
        return Err(CliError::Config("--years must be at least 1".into()));
    }
    let start = match a.start_p1 {
        None => StartDistribution::State1,
        Some(p1) if (0.0..=1.0).contains(&p1) => StartDistribution::Mixed { p1 },
        Some(p1) => return Err(CliError::Config(format!("--start-p1 {p1} is outside [0, 1]"))),
    };
    if !(0.0..1.0).contains(&a.skip_prob) {
        return Err(CliError::Config(format!("--skip-prob {} is outside [0, 1)", a.skip_prob)));
    }
    let spec = CohortSpec {
        theta,
        subjects: a.subjects,
        horizon: f64::from(a.years),
        seed: a.seed,
        start,
    };
    let exec = if a.sequential { Execution::Sequential } else { Execution::default() };
    let paths = simulate_cohort(&spec, exec)?;
    let base = ObservationSchedule::annual(a.years);
    let missing = random_missing_pattern(a.subjects, base.times().len(), a.skip_prob, a.max_skip, a.seed)?;
    let schedules = irregular_schedule(&base, &missing)?;
    let body = if a.records {
        write_records(&paths, &schedules)?
    } else {
        write_count_tables(&panelize_subjects(&paths, &schedules)?)
    };
    match &a.output {
        Some(p) => {
            std::fs::write(p, &body).map_err(|e| CliError::io(p, e))?;
            println!("simulated {} subjects over {} years (seed {}) to {}", a.subjects, a.years, a.seed, p.display());
        }
        None => print!("{body}"),
    }
    Ok(())
}
