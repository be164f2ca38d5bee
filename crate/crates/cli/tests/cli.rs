use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_panel-ctmc"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn json_of(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn close(v: &Value, want: f64, tol: f64) {
    let got = v.as_f64().unwrap_or_else(|| panic!("{v} is not a number"));
    assert!((got - want).abs() <= tol, "{got} vs {want}");
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn estimate_writes_model_and_pooling() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit.json");
    let o = run(&["estimate", "--input", s(&fixture("reference_tables.txt")), "--output", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc = json_of(&out);
    assert_eq!(doc["command"], "estimate");
    let w = &doc["estimation"]["weights"];
    close(&w["1"], 0.8, 1e-12);
    close(&w["2"], 0.15, 1e-12);
    close(&w["3"], 0.05, 1e-12);
    let per = &doc["estimation"]["per_interval"];
    for name in ["lambda12", "lambda14", "mu21", "lambda23", "lambda24"] {
        let pooled: f64 = ["1", "2", "3"]
            .iter()
            .map(|dt| w[dt].as_f64().unwrap() * per[dt]["theta_hat"][name].as_f64().unwrap())
            .sum();
        close(&doc["model"]["theta"][name], pooled, 1e-12);
    }
    close(&doc["model"]["theta"]["lambda23"], 0.2076, 5e-4);
    let q = &doc["estimation"]["generator"];
    for i in 0..4 {
        let sum: f64 = q[i].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!(sum.abs() < 1e-12);
    }
    let text = stdout(&o);
    assert!(text.contains("pooled rates"));
    assert!(text.contains("generator Q"));
    assert!(text.contains("var(theta)"));
}

#[test]
fn estimate_single_interval() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("one.txt");
    std::fs::write(&input, "delta_t=1\n330,163,45,12\n5,185,45,15\n0,0,0,0\n0,0,0,0\n").unwrap();
    let out = dir.path().join("fit.json");
    let o = run(&["estimate", "--input", s(&input), "--output", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let w = json_of(&out)["estimation"]["weights"].clone();
    assert_eq!(w, serde_json::json!({ "1": 1.0 }));
}

#[test]
fn exit_code_contract() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    let o = run(&["estimate", "--input", s(&empty)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("empty"), "{}", stderr(&o));

    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "delta_t=1\n1,2,3,4\n1,2,x,4\n0,0,0,0\n0,0,0,0\n").unwrap();
    let o = run(&["estimate", "--input", s(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let o = run(&["estimate", "--input", s(&dir.path().join("missing.txt"))]);
    assert_eq!(code(&o), 1);

    let tables = fixture("reference_tables.txt");
    let o = run(&["estimate", "--input", s(&tables), "--tol", "1e-9", "--max-iter", "3"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("delta_t="), "{}", stderr(&o));

    let o = run(&["summarize", "--theta", "0,0,0,0,0"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("infinite sojourn"), "{}", stderr(&o));
    let o = run(&["absorb", "--theta", "0.5,0,0.5,0,0"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    let o = run(&["estimate", "--input", s(&tables), "--tol", "-1"]);
    assert_eq!(code(&o), 4);
    let o = run(&["summarize", "--theta", "0.3,0.02,0.02,0.2,0.07", "--pi0", "0.5,0.4,0,0"]);
    assert_eq!(code(&o), 4);
    let o = run(&["summarize", "--theta", "0.3,-0.02,0.02,0.2,0.07"]);
    assert_eq!(code(&o), 4);
    let o = run(&["estimate", "--bogus"]);
    assert_eq!(code(&o), 4);
    let o = run(&["summarize"]);
    assert_eq!(code(&o), 4);
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "tolerence = 1e-6\n").unwrap();
    let o = run(&["estimate", "--input", s(&tables), "--config", s(&cfg)]);
    assert_eq!(code(&o), 4);

    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
}

#[test]
fn summarize_cohort_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("summary.json");
    let o = run(&[
        "summarize",
        "--model",
        s(&fixture("reference_model.json")),
        "--config",
        s(&fixture("reference_config.toml")),
        "--output",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc = json_of(&out);
    let soj = &doc["summary"]["sojourn"];
    close(&soj["s1"], 3.19, 0.01);
    close(&soj["s2"], 3.29, 0.01);
    close(&soj["var_s1"], 8.898, 0.05);
    close(&soj["var_s2"], 10.129, 0.05);
    assert_eq!(soj["s1_years_months"], "3 years and 2 months");
    let occ = doc["summary"]["occupancy"].as_array().unwrap();
    assert_eq!(occ.len(), 3);
    for (k, want) in [1559.0, 1117.0, 214.0, 110.0].iter().enumerate() {
        close(&occ[0]["u"][k], *want, 5.0);
    }
    for (k, want) in [0.0048, 0.0151, 0.6951, 0.285].iter().enumerate() {
        close(&occ[1]["pi"][k], *want, 3e-3);
    }
    let lim = &doc["summary"]["limiting"];
    close(&lim["pi_inf"][0], 0.0, 0.0);
    close(&lim["q_transpose_pinv"][0][0], -2.48429, 5e-4);
    close(&lim["covariance"][0][0], 0.088589, 2e-3);
    let text = stdout(&o);
    assert!(text.contains("mean 3.18827 years (3 years and 2 months)"), "{text}");

    let strict = run(&["summarize", "--model", s(&fixture("reference_model.json")), "--strict-gradient"]);
    assert_eq!(code(&strict), 0);
    assert!(stdout(&strict).contains("gradient strict"));
}

#[test]
fn summarize_horizon_zero_echoes_start() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.json");
    let o = run(&[
        "summarize",
        "--theta",
        "0.2908,0.02285,0.02805,0.2076,0.068",
        "--horizons",
        "0",
        "--pi0",
        "0.7,0.3,0,0",
        "--u0",
        "2100,900,0,0",
        "--output",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let occ = &json_of(&out)["summary"]["occupancy"][0];
    assert_eq!(occ["pi"], serde_json::json!([0.7, 0.3, 0.0, 0.0]));
    assert_eq!(occ["u"], serde_json::json!([2100.0, 900.0, 0.0, 0.0]));
    assert!(stdout(&o).contains("no var(theta) supplied"));
}

#[test]
fn absorb_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a.json");
    let o = run(&["absorb", "--model", s(&fixture("reference_model.json")), "--output", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = &json_of(&out)["absorption"];
    let want = [[4.9142, 1.9121], [2.9164, 1.0074]];
    for i in 0..2 {
        for k in 0..2 {
            close(&a["etau"][i][k], want[i][k], 5e-3);
        }
        let row: f64 = a["absorption_probabilities"][i].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((row - 1.0).abs() <= 1e-9);
    }
    assert_eq!(a["notes"], serde_json::json!([]));

    let out = dir.path().join("a0.json");
    let o = run(&["absorb", "--theta", "0.3,0.02,0.03,0,0.07", "--output", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = &json_of(&out)["absorption"];
    assert_eq!(a["etau"][0][0], 0.0);
    assert_eq!(a["etau"][1][0], 0.0);
    assert!(a["notes"][0].as_str().unwrap().contains("lambda23 = 0"));
    assert!(stdout(&o).contains("note: lambda23 = 0"));
}

#[test]
fn gof_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.json");
    let o = run(&[
        "gof",
        "--model",
        s(&fixture("reference_model.json")),
        "--input",
        s(&fixture("reference_tables.txt")),
        "--output",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let g = &json_of(&out)["gof"];
    close(&g["per_interval"]["1"]["chi_sq"], 104.247, 0.5);
    close(&g["per_interval"]["2"]["chi_sq"], 8.022, 0.1);
    close(&g["per_interval"]["3"]["chi_sq"], 6.588, 0.1);
    close(&g["pooled_chi_sq"], 118.857, 0.6);
    assert_eq!(g["pooled_df"], 27);
    assert_eq!(g["reject_null"], true);
    close(&g["critical_value"], 40.113, 1e-3);
    assert!(!g["df_note"].as_str().unwrap().is_empty());
    assert!(stdout(&o).contains("reference interpretation: \""));
}

#[test]
fn gof_near_zero_on_rounded_expectations() {
    // counts proportional to P(1) rows, so rounding is the only misfit
    let dir = tempfile::tempdir().unwrap();
    let model = serde_json::json!({
        "theta": { "lambda12": 0.2908, "lambda14": 0.02285, "mu21": 0.02805, "lambda23": 0.2076, "lambda24": 0.068 }
    });
    let m = dir.path().join("m.json");
    std::fs::write(&m, model.to_string()).unwrap();
    let input = dir.path().join("t.txt");
    std::fs::write(&input, "delta_t=1\n73380,21392,2466,2762\n2062,74113,17925,5900\n0,0,0,0\n0,0,0,0\n").unwrap();
    let out = dir.path().join("g.json");
    let o = run(&["gof", "--model", s(&m), "--input", s(&input), "--output", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let chi = json_of(&out)["gof"]["pooled_chi_sq"].as_f64().unwrap();
    assert!(chi < 0.05, "{chi}");
}

#[test]
fn report_all_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &Path| {
        vec![
            "report-all".to_string(),
            "--input".into(),
            s(&fixture("reference_tables.txt")).into(),
            "--config".into(),
            s(&fixture("reference_config.toml")).into(),
            "--output".into(),
            s(out).into(),
        ]
    };
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let oa = bin().args(args(&a)).output().unwrap();
    let ob = bin().args(args(&b)).output().unwrap();
    assert_eq!(code(&oa), 0, "{}", stderr(&oa));
    assert_eq!(oa.stdout, ob.stdout);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let doc = json_of(&a);
    for key in ["estimation", "model", "summary", "absorption", "gof", "config"] {
        assert!(doc.get(key).is_some(), "missing {key}");
    }
    // the report's own model feeds back in
    let o = run(&["absorb", "--model", s(&a)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(code(&run(&["report-all", "--theta", "0.3,0.02,0.03,0.2,0.07"])), 4);
}

#[test]
fn simulate_is_reproducible_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    let c = dir.path().join("c.txt");
    let common = ["simulate", "--theta", "0.2908,0.02285,0.02805,0.2076,0.068", "--subjects", "400", "--years", "6"];
    let with = |extra: &[&str]| {
        let mut v: Vec<&str> = common.to_vec();
        v.extend_from_slice(extra);
        run(&v)
    };
    assert_eq!(code(&with(&["--seed", "9", "--skip-prob", "0.2", "--output", s(&a)])), 0);
    assert_eq!(code(&with(&["--seed", "9", "--skip-prob", "0.2", "--output", s(&b)])), 0);
    assert_eq!(code(&with(&["--seed", "9", "--skip-prob", "0.2", "--sequential", "--output", s(&c)])), 0);
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_eq!(bytes, std::fs::read(&c).unwrap());
    let text = String::from_utf8(bytes).unwrap();
    assert!(text.contains("delta_t=2"));
    let o = run(&["estimate", "--input", s(&a)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let r = dir.path().join("r.csv");
    assert_eq!(code(&with(&["--seed", "9", "--records", "--output", s(&r)])), 0);
    assert!(std::fs::read_to_string(&r).unwrap().starts_with("subject,time,state\n"));
    let o = run(&["estimate", "--input", s(&r)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let o = with(&["--seed", "10"]);
    assert_eq!(code(&o), 0);
    assert_ne!(stdout(&o), text);
}

#[test]
fn simulate_zero_rates() {
    let o = run(&["simulate", "--theta", "0,0,0,0,0", "--subjects", "25", "--years", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o), "delta_t=1\n100,0,0,0\n0,0,0,0\n0,0,0,0\n0,0,0,0\n");
    assert_eq!(code(&run(&["simulate"])), 4);
    assert_eq!(code(&run(&["simulate", "--theta", "0,0,0,0,0", "--skip-prob", "1"])), 4);
}
