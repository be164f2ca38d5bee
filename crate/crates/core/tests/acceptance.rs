//! Acceptance report: one PASS/FAIL line per criterion, followed by the
//! individual checks that missed their tolerance.
//!
//! Runs with `cargo test -p panel-ctmc --test acceptance`. The process exits
//! 0 whatever the outcome so the rest of the workspace suite still runs; set
//! `ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use nalgebra::{Matrix4, Matrix5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use panel_ctmc::absorption::{closed_form_etau, expected_absorption_times, z_matrix};
use panel_ctmc::chain::{
    build_generator, characteristic_roots, closed_form_coefficients, matrix_exponential_series,
    transition_matrix, transition_matrix_closed_form, RateVector,
};
use panel_ctmc::estimation::{
    estimate_dataset, hessian_scale_factor, pool_estimates, root_gradients, score_components, scaled_score,
    EstimationOptions, PanelDataset, TransitionCountTable, ZeroCellPolicy,
};
use panel_ctmc::gof::gof_report;
use panel_ctmc::linalg;
use panel_ctmc::simulate::{
    irregular_schedule, panelize_subjects, random_missing_pattern, sample_path_on_stream, simulate_cohort,
    CohortSpec, Execution, ObservationSchedule, StartDistribution,
};
use panel_ctmc::summary::{
    expected_counts, limiting_covariance, occupancy_at, sojourn_summary, svd_pseudoinverse, CohortVector,
    GradientConvention, OccupancyVector,
};

const FITTED: RateVector = RateVector::new(0.2908, 0.02285, 0.02805, 0.2076, 0.068);
const CRUDE: RateVector = RateVector::new(0.3, 0.022, 0.02, 0.18, 0.06);
const NAMES: [&str; 5] = ["lambda12", "lambda14", "mu21", "lambda23", "lambda24"];

#[derive(Default)]
struct Criterion {
    checks: usize,
    misses: Vec<String>,
}

impl Criterion {
    fn close(&mut self, label: impl AsRef<str>, got: f64, want: f64, tol: f64) {
        self.checks += 1;
        if !((got - want).abs() <= tol) {
            self.misses.push(format!(
                "{}: got {got:.6} want {want} (|diff| {:.3e} > tol {tol:.3e})",
                label.as_ref(),
                (got - want).abs()
            ));
        }
    }

    fn flag(&mut self, label: impl AsRef<str>, ok: bool, detail: impl AsRef<str>) {
        self.checks += 1;
        if !ok {
            self.misses.push(format!("{}: {}", label.as_ref(), detail.as_ref()));
        }
    }

    fn fail(&mut self, label: impl AsRef<str>, err: impl std::fmt::Display) {
        self.flag(label, false, format!("error: {err}"));
    }

    fn report(&self, n: usize, title: &str) -> bool {
        let pass = self.misses.is_empty();
        println!(
            "{} {n} {title}: {}/{} checks within tolerance",
            if pass { "PASS" } else { "FAIL" },
            self.checks - self.misses.len(),
            self.checks
        );
        for m in &self.misses {
            println!("       - {m}");
        }
        pass
    }
}

fn tables() -> PanelDataset {
    let mk = |dt, r1: [u64; 4], r2: [u64; 4]| TransitionCountTable::new(dt, [r1, r2, [0; 4], [0; 4]]).unwrap();
    PanelDataset::new(vec![
        mk(1, [330, 163, 45, 12], [5, 185, 45, 15]),
        mk(2, [70, 30, 10, 1], [2, 20, 13, 4]),
        mk(3, [21, 8, 7, 3], [1, 6, 3, 1]),
    ])
    .unwrap()
}

/// Reference covariance of the fitted rates.
fn reference_var_theta() -> Matrix5<f64> {
    let block = [
        [0.061475, -0.04645, -0.01585],
        [-0.04645, 0.037836, -0.00613],
        [-0.01585, -0.00613, 0.123658],
    ];
    Matrix5::from_fn(|i, j| if i < 3 && j < 3 { block[i][j] } else { 0.0 })
}

fn random_theta(rng: &mut ChaCha8Rng, hi: f64) -> RateVector {
    RateVector::from_array(std::array::from_fn(|_| rng.random_range(0.0..hi)))
}

fn estimation() -> Criterion {
    let mut c = Criterion::default();
    let start = Instant::now();
    let fit = estimate_dataset(&tables(), &EstimationOptions::default());
    let elapsed = start.elapsed();
    let fit = match fit {
        Ok(f) => f,
        Err(e) => {
            c.fail("estimate_dataset", e);
            return c;
        }
    };
    let want: [(u32, [f64; 5]); 3] = [
        (1, [0.3, 0.022, 0.02, 0.18, 0.06]),
        (2, [0.27, 0.009, 0.05, 0.333, 0.103]),
        (3, [0.206172, 0.077985, 0.091339, 0.273, 0.091]),
    ];
    for (dt, w) in want {
        let got = fit.per_interval[&dt].theta_hat.to_array();
        for h in 0..5 {
            c.close(format!("dt={dt} {}", NAMES[h]), got[h], w[h], 2e-3);
        }
    }
    let pooled = fit.pooled_theta.to_array();
    for (h, w) in FITTED.to_array().iter().enumerate() {
        c.close(format!("pooled {}", NAMES[h]), pooled[h], *w, 5e-4);
    }
    c.flag("runtime", elapsed < Duration::from_secs(1), format!("{elapsed:?}"));
    c
}

fn transition_probabilities() -> Criterion {
    let mut c = Criterion::default();
    let printed: [(f64, [[f64; 4]; 2]); 3] = [
        (1.0, [[0.7338, 0.2139, 0.0247, 0.0277], [0.0206, 0.7411, 0.1793, 0.059]]),
        (2.0, [[0.5428, 0.3154, 0.0811, 0.0607], [0.0304, 0.5537, 0.3126, 0.1033]]),
        (3.0, [[0.4048, 0.3499, 0.151, 0.0943], [0.0337, 0.4168, 0.4126, 0.1368]]),
    ];
    for (t, rows) in printed {
        let p = transition_matrix(&FITTED, t).unwrap();
        for (i, row) in rows.iter().enumerate() {
            for (j, want) in row.iter().enumerate() {
                c.close(format!("P({t})[{},{}]", i + 1, j + 1), p.get(i + 1, j + 1), *want, 5e-4);
            }
        }
        for i in 3..=4 {
            for j in 1..=4 {
                c.close(format!("P({t})[{i},{j}]"), p.get(i, j), f64::from(u8::from(i == j)), 1e-12);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut compared = 0;
    while compared < 1000 {
        let theta = random_theta(&mut rng, 2.0);
        let t = rng.random_range(0.0..20.0);
        let Ok(cf) = transition_matrix_closed_form(&theta, t) else { continue };
        let series = matrix_exponential_series(&build_generator(&theta).unwrap(), t).unwrap();
        worst = worst.max((cf.matrix() - series.matrix()).abs().max());
        compared += 1;
    }
    c.flag(
        "closed form vs series on 1000 draws",
        worst <= 1e-9,
        format!("max entry difference {worst:.3e}"),
    );
    c
}

fn sojourn() -> Criterion {
    let mut c = Criterion::default();
    let s = sojourn_summary(&FITTED, &reference_var_theta(), GradientConvention::Collapsed).unwrap();
    c.close("s1", s.s1, 3.19, 0.01);
    c.close("s2", s.s2, 3.29, 0.01);
    c.close("var(s1)", s.var_s1, 8.898, 0.05);
    c.close("var(s2)", s.var_s2, 10.129, 0.05);
    c
}

fn occupancy() -> Criterion {
    let mut c = Criterion::default();
    let pi0 = OccupancyVector::new([0.7, 0.3, 0.0, 0.0], 0.0).unwrap();
    let u0 = CohortVector::new([2100.0, 900.0, 0.0, 0.0], 0.0).unwrap();
    let cases = [
        (1.0, [0.52, 0.372, 0.071, 0.037], [1559.0, 1117.0, 214.0, 110.0]),
        (60.0, [0.0, 0.0, 0.715, 0.285], [0.0, 0.0, 2145.0, 855.0]),
    ];
    for (t, pi, u) in cases {
        let pt = occupancy_at(&pi0, &FITTED, t).unwrap();
        let ut = expected_counts(&u0, &FITTED, t).unwrap();
        let pi_tol = if t == 1.0 { 3e-3 } else { 2e-3 };
        for k in 0..4 {
            c.close(format!("pi({t})[{}]", k + 1), pt.pi[k], pi[k], pi_tol);
            c.close(format!("u({t})[{}]", k + 1), ut.u[k], u[k], 5.0);
        }
    }
    c
}

fn limiting() -> Criterion {
    let mut c = Criterion::default();
    let lc = limiting_covariance(&[0.0, 0.0, 0.7, 0.3], &FITTED, &reference_var_theta()).unwrap();
    let want = Matrix4::new(0.088589, 0.16401, 0.0, 0.0, 0.16401, 0.30368, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..4 {
        for j in i..4 {
            c.close(format!("cov[{},{}]", i + 1, j + 1), lc.covariance[(i, j)], want[(i, j)], 2e-3);
        }
    }
    let printed = Matrix4::new(
        -2.48429, 0.71355, 1.1887, 0.58205, -1.48753, -1.6734, 2.2825, 0.87848, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    );
    let pinv = svd_pseudoinverse(&build_generator(&FITTED).unwrap().matrix().transpose());
    for i in 0..4 {
        for j in 0..4 {
            c.close(format!("[Q']+[{},{}]", i + 1, j + 1), pinv[(i, j)], printed[(i, j)], 5e-4);
        }
    }
    c
}

fn absorption() -> Criterion {
    let mut c = Criterion::default();
    let e = expected_absorption_times(&FITTED).unwrap();
    let want = [[4.9142, 1.9121], [2.9164, 1.0074]];
    for i in 0..2 {
        for k in 0..2 {
            c.close(format!("E(tau)[{},{}]", i + 1, k + 3), e[(i, k)], want[i][k], 5e-3);
        }
    }
    let cf = closed_form_etau(&FITTED).unwrap();
    c.flag(
        "closed form vs matrix path",
        (cf - e).abs().max() <= 1e-8,
        format!("max difference {:.3e}", (cf - e).abs().max()),
    );
    let neg_z = -z_matrix(&FITTED).unwrap();
    let n = 100_000u64;
    for start in 1..=2 {
        let mut into4 = 0u64;
        for k in 0..n {
            let tr = sample_path_on_stream(&FITTED, start, 2000.0, 11 + start as u64, k).unwrap();
            if tr.final_state() == 4 {
                into4 += 1;
            }
        }
        let p = neg_z[(start - 1, 1)];
        let freq = into4 as f64 / n as f64;
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        c.close(format!("-Z[{start},4] vs MC frequency"), freq, p, 3.0 * sd);
    }
    c
}

fn goodness_of_fit() -> Criterion {
    let mut c = Criterion::default();
    let r = match gof_report(&FITTED, &tables(), 0.05) {
        Ok(r) => r,
        Err(e) => {
            c.fail("gof_report", e);
            return c;
        }
    };
    for (dt, want, tol) in [(1, 104.247, 0.5), (2, 8.022, 0.1), (3, 6.588, 0.1)] {
        c.close(format!("chi2 dt={dt}"), r.per_interval[&dt].chi_sq, want, tol);
    }
    c.close("pooled chi2", r.pooled_chi_sq, 118.857, 0.6);
    c.flag("pooled df", r.pooled_df == 27, format!("df = {}", r.pooled_df));
    c.flag("reject_null", r.reject_null, "not rejected");
    let printed: [(u32, usize, [f64; 4]); 3] = [
        (1, 0, [403.59, 117.645, 13.585, 15.235]),
        (1, 1, [5.15, 185.275, 44.825, 14.75]),
        (2, 0, [60.2508, 35.0094, 9.0021, 6.7377]),
    ];
    for (dt, i, row) in printed {
        for (j, want) in row.iter().enumerate() {
            let got = r.per_interval[&dt].expected_table[i][j];
            c.close(format!("E dt={dt} [{},{}]", i + 1, j + 1), got, *want, 0.5);
        }
    }
    c
}

fn property_suites() -> Criterion {
    let mut c = Criterion::default();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut stochastic, mut semigroup, mut monotone, mut coeff, mut penrose, mut score_fd, mut zsum, mut convex) =
        (0.0f64, 0.0f64, true, 0.0f64, 0.0f64, 0.0f64, 0.0f64, true);
    for _ in 0..500 {
        let theta = random_theta(&mut rng, 2.0);
        let (s, t) = (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
        let (ps, pt, pst) = (
            transition_matrix(&theta, s).unwrap(),
            transition_matrix(&theta, t).unwrap(),
            transition_matrix(&theta, s + t).unwrap(),
        );
        for i in 0..4 {
            stochastic = stochastic.max((pst.matrix().row(i).sum() - 1.0).abs());
        }
        semigroup = semigroup.max((ps.matrix() * pt.matrix() - pst.matrix()).abs().max());
        let lo = s.min(t);
        let hi = s.max(t);
        let (plo, phi) = (transition_matrix(&theta, lo).unwrap(), transition_matrix(&theta, hi).unwrap());
        for i in 1..=2 {
            for j in 3..=4 {
                monotone &= phi.get(i, j) >= plo.get(i, j) - 1e-12;
            }
        }
        if closed_form_coefficients(&theta).is_ok() {
            // P(0) = I holds only if the coefficient sums do
            let p0 = transition_matrix_closed_form(&theta, 0.0).unwrap();
            coeff = coeff.max((p0.matrix() - Matrix4::identity()).abs().max());
        }
        let qt = build_generator(&theta).unwrap().matrix().transpose();
        let p = linalg::pseudo_inverse(&qt, 1e-12);
        let scale = 1.0 + qt.abs().max() * p.abs().max();
        penrose = penrose.max((qt * p * qt - qt).abs().max() / scale).max((p * qt * p - p).abs().max() / scale);
        if theta.transient_det() > 1e-6 {
            let z = z_matrix(&theta).unwrap();
            for i in 0..2 {
                zsum = zsum.max((z[(i, 0)] + z[(i, 1)] + 1.0).abs());
            }
        }
        if let Ok(g) = root_gradients(&theta) {
            let h = 1e-6;
            for k in 0..5 {
                let mut up = theta.to_array();
                let mut dn = theta.to_array();
                up[k] += h;
                dn[k] = (dn[k] - h).max(0.0);
                let (Ok(a), Ok(b)) = (
                    characteristic_roots(&RateVector::from_array(up)),
                    characteristic_roots(&RateVector::from_array(dn)),
                ) else {
                    continue;
                };
                let width = up[k] - dn[k];
                let fd = (a.0 - b.0) / width;
                if fd.is_finite() && (a.0 - b.0).abs() < 1e-2 {
                    score_fd = score_fd.max((g.d_w1[k] - fd).abs() / (1.0 + fd.abs()));
                }
            }
        }
    }
    let ds = tables();
    for _ in 0..200 {
        let per = [(1, random_theta(&mut rng, 1.0)), (2, random_theta(&mut rng, 1.0)), (3, random_theta(&mut rng, 1.0))]
            .into_iter()
            .collect();
        let pooled = pool_estimates(&per, &ds).unwrap().to_array();
        for h in 0..5 {
            let xs: Vec<f64> = per.values().map(|t| t.to_array()[h]).collect();
            let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            convex &= pooled[h] >= lo - 1e-12 && pooled[h] <= hi + 1e-12;
        }
    }
    c.flag("row-stochasticity", stochastic <= 1e-9, format!("max |row sum - 1| {stochastic:.3e}"));
    c.flag("semigroup", semigroup <= 1e-9, format!("max |P(s)P(t) - P(s+t)| {semigroup:.3e}"));
    c.flag("monotone absorption", monotone, "an absorbing probability decreased");
    c.flag("coefficient identities", coeff <= 1e-9, format!("max |P(0) - I| {coeff:.3e}"));
    c.flag("Penrose conditions", penrose <= 1e-10, format!("max residual {penrose:.3e}"));
    c.flag("score finite differences", score_fd <= 1e-5, format!("max relative error {score_fd:.3e}"));
    c.flag("Z row sums", zsum <= 1e-10, format!("max |row sum + 1| {zsum:.3e}"));
    c.flag("pooling convexity", convex, "pooled value outside per-interval range");

    let spec = |subjects, seed| CohortSpec {
        theta: FITTED,
        subjects,
        horizon: 10.0,
        seed,
        start: StartDistribution::State1,
    };
    let seq = simulate_cohort(&spec(500, 3), Execution::Sequential).unwrap();
    let par = simulate_cohort(&spec(500, 3), Execution::Parallel).unwrap();
    let again = simulate_cohort(&spec(500, 3), Execution::Sequential).unwrap();
    c.flag("simulator determinism", seq == par && seq == again, "runs differ");

    recovery(&mut c);
    let elapsed = start.elapsed();
    c.flag("suite runtime", elapsed < Duration::from_secs(60), format!("{elapsed:?}"));
    c
}

/// Fits 5000-subject cohorts simulated from the fitted rates with ten annual
/// visits, a fifth of which are missed independently (at most two in a row).
fn fit_cohort(seed: u64) -> panel_ctmc::Result<RateVector> {
    const SUBJECTS: usize = 5000;
    let spec = CohortSpec {
        theta: FITTED,
        subjects: SUBJECTS,
        horizon: 10.0,
        seed,
        start: StartDistribution::State1,
    };
    let paths = simulate_cohort(&spec, Execution::default())?;
    let base = ObservationSchedule::annual(10);
    let missing: Vec<BTreeSet<usize>> = random_missing_pattern(SUBJECTS, base.times().len(), 0.2, 2, seed)?;
    let schedules = irregular_schedule(&base, &missing)?;
    let ds = panelize_subjects(&paths, &schedules)?;
    Ok(estimate_dataset(&ds, &EstimationOptions::default())?.pooled_theta)
}

/// The reference cohort must land within three replicate standard
/// deviations of the generating rates, component by component.
fn recovery(c: &mut Criterion) {
    const REPLICATES: u64 = 20;
    let reference = match fit_cohort(1) {
        Ok(t) => t.to_array(),
        Err(e) => return c.fail("5000-subject recovery", e),
    };
    let mut reps = Vec::new();
    for seed in 2..2 + REPLICATES {
        match fit_cohort(seed) {
            Ok(t) => reps.push(t.to_array()),
            Err(e) => return c.fail(format!("5000-subject recovery replicate {seed}"), e),
        }
    }
    let truth = FITTED.to_array();
    for h in 0..5 {
        let mean = reps.iter().map(|r| r[h]).sum::<f64>() / reps.len() as f64;
        let var = reps.iter().map(|r| (r[h] - mean).powi(2)).sum::<f64>() / (reps.len() - 1) as f64;
        c.close(format!("5000-subject recovery {}", NAMES[h]), reference[h], truth[h], 3.0 * var.sqrt());
    }
}

fn mle_machinery() -> Criterion {
    let mut c = Criterion::default();
    let (w1, w2) = characteristic_roots(&CRUDE).unwrap();
    c.close("rho3", w1, -0.37443, 5e-5);
    c.close("rho4", w2, -0.20757, 5e-5);
    let v = score_components(&CRUDE, 1.0).unwrap().v;
    for (h, want) in [-0.71195, -0.72692, -0.5488, -0.77332, -0.77332].iter().enumerate() {
        c.close(format!("v[{}]", h + 1), v[h], *want, 5e-5);
    }
    let ds = tables();
    let t1 = ds.table(1).unwrap();
    let s = scaled_score(&CRUDE, t1).unwrap().v;
    for (h, want) in [-2278.24, -2326.14, -1756.17, -2474.62, -2474.62].iter().enumerate() {
        c.close(format!("scaled score[{}]", h + 1), s[h], *want, 0.02);
    }
    let (f, _) = hessian_scale_factor(t1, ZeroCellPolicy::Reject).unwrap();
    c.close("Hessian scale factor", f, 53096.0, 1.0);
    c
}

fn main() {
    println!("acceptance criteria");
    let results = [
        estimation().report(1, "estimation reproduction"),
        transition_probabilities().report(2, "transition probabilities"),
        sojourn().report(3, "sojourn statistics"),
        occupancy().report(4, "occupancy and cohort counts"),
        limiting().report(5, "limiting covariance"),
        absorption().report(6, "absorption"),
        goodness_of_fit().report(7, "goodness of fit"),
        property_suites().report(8, "property suites"),
        mle_machinery().report(9, "intermediate MLE machinery"),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria pass", results.len());
    if passed < results.len() && std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
