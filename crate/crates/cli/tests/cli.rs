use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use l1gp_cli::output::read_trace;
use l1gp_core::scenario::TraceRow;

fn deck(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn l1gp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_l1gp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn l1gp_env(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_l1gp"))
        .args(args)
        .env("L1GP_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn zero_deck_produces_zero_signals() {
    let tmp = tempfile::tempdir().unwrap();
    let out = l1gp(&["simulate", s(&deck("zero.toml")), "-o", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(0));
    let rows = read_trace(&tmp.path().join("trace.csv")).unwrap();
    assert_eq!(rows.len(), 5000 / 10 + 1);
    let ef = TraceRow::COLUMNS.iter().position(|c| *c == "e_f_hat").unwrap();
    for row in rows {
        for (i, v) in row.to_values().iter().enumerate() {
            // time and the (positive) error bound are not loop signals
            if i != 0 && i != ef {
                assert_eq!(*v, 0.0);
            }
        }
    }
    for f in ["events.csv", "summary.json", "manifest.json"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
}

#[test]
fn step_deck_tracks_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let out = l1gp(&["simulate", s(&deck("step.toml")), "-o", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(0));
    let summary = json(&tmp.path().join("summary.json"));
    let e = summary["final_tracking_error_inf"].as_f64().unwrap();
    assert!(e <= 0.02, "{e}");
    assert_eq!(summary["stable"], Value::Bool(true));
}

#[test]
fn trace_header_and_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.toml",
        "duration = 1.0\n[reference]\nkind = \"sinusoid\"\namplitude = [1.0, 1.0, 1.0]\nfrequency = [0.5, 0.5, 0.5]\n[plant]\nJ = [0.011, 0.011, 0.021]\n",
    );
    let out_dir = tmp.path().join("out");
    assert_eq!(l1gp(&["simulate", s(&cfg), "-o", s(&out_dir)]).status.code(), Some(0));
    let text = fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, TraceRow::COLUMNS.join(","));
    // every field re-parses and prints back to the same text
    for line in text.lines().skip(1) {
        for field in line.split(',') {
            let v: f64 = field.parse().unwrap();
            assert_eq!(v.to_string(), field);
        }
    }
}

#[test]
fn missing_inertia_exits_2_and_names_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "duration = 1.0\n[plant]\nx0 = [0.0, 0.0, 0.0]\n");
    let out = l1gp(&["simulate", s(&cfg), "-o", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`J`"), "{err}");
}

#[test]
fn malformed_deck_reports_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "duration = 1.0\nstep = \"fast\"\n[plant]\nJ = [1.0, 1.0, 1.0]\n");
    let out = l1gp(&["simulate", s(&cfg), "-o", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn unstable_run_exits_3_with_parseable_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.toml",
        "duration = 10.0\n[controller]\nmode = \"l1\"\n[plant]\nJ = [0.011, 0.011, 0.021]\ninput_delay = 0.1\n",
    );
    let out_dir = tmp.path().join("o");
    let out = l1gp(&["simulate", s(&cfg), "-o", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(3));
    let rows = read_trace(&out_dir.join("trace.csv")).unwrap();
    assert!(rows.last().unwrap().t < 10.0);
    let events = fs::read_to_string(out_dir.join("events.csv")).unwrap();
    assert!(events.contains("unstable"));
    let summary = json(&out_dir.join("summary.json"));
    assert_eq!(summary["stable"], Value::Bool(false));
}

#[test]
fn manifest_echo_reproduces_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("a");
    assert_eq!(
        l1gp(&["simulate", s(&deck("step.toml")), "-o", s(&first)]).status.code(),
        Some(0)
    );
    let manifest = json(&first.join("manifest.json"));
    let config = &manifest["config"];
    // every default is materialized
    for key in ["duration", "step", "seed", "record_decimation", "bound_signal", "blowup"] {
        assert!(!config[key].is_null(), "{key}");
    }
    assert!(!config["controller"]["b_m"].is_null());
    assert!(!config["learner"]["bound"]["delta"].is_null());
    let echo = write(tmp.path(), "echo.json", &config.to_string());
    let second = tmp.path().join("b");
    assert_eq!(l1gp(&["simulate", s(&echo), "-o", s(&second)]).status.code(), Some(0));
    assert_eq!(
        fs::read(first.join("trace.csv")).unwrap(),
        fs::read(second.join("trace.csv")).unwrap()
    );
}

#[test]
fn thread_count_does_not_change_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = write(
        tmp.path(),
        "c.toml",
        "duration = 12.0\n[reference]\nkind = \"sinusoid\"\namplitude = [1.0, 1.0, 1.0]\nfrequency = [0.5, 0.5, 0.5]\n[plant]\nJ = [0.011, 0.011, 0.021]\n",
    );
    assert_eq!(l1gp_env(&["simulate", s(&cfg), "-o", s(&a)], "1").status.code(), Some(0));
    assert_eq!(l1gp_env(&["simulate", s(&cfg), "-o", s(&b)], "8").status.code(), Some(0));
    assert_eq!(fs::read(a.join("trace.csv")).unwrap(), fs::read(b.join("trace.csv")).unwrap());
}

fn margin_of(config: &Path, out: &Path, extra: &[&str]) -> Value {
    let mut args = vec!["margin", s(config), "-o", s(out)];
    args.extend_from_slice(extra);
    let o = l1gp(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    json(&out.join("margin.json"))
}

#[test]
fn margin_of_l1_deck() {
    let tmp = tempfile::tempdir().unwrap();
    let m = margin_of(&deck("sinusoid_l1.toml"), tmp.path(), &["--resolution", "0.001"]);
    let margin = m["margin_s"].as_f64().unwrap();
    assert!((0.010..=0.040).contains(&margin), "{margin}");
    assert!(m["bracket_width_s"].as_f64().unwrap() <= 0.001 + 1e-12);
    assert!(m["candidates"].as_array().unwrap().len() >= 2);
}

#[test]
fn zero_uncertainty_margin_not_smaller() {
    let tmp = tempfile::tempdir().unwrap();
    let baseline = margin_of(&deck("sinusoid_l1.toml"), &tmp.path().join("p"), &[]);
    let text = fs::read_to_string(deck("sinusoid_l1.toml"))
        .unwrap()
        .replace("kind = \"poly15\"", "kind = \"zero\"");
    let cfg = write(tmp.path(), "zero.toml", &text);
    let zero = margin_of(&cfg, &tmp.path().join("z"), &[]);
    assert!(zero["margin_s"].as_f64().unwrap() >= baseline["margin_s"].as_f64().unwrap());
}

#[test]
fn margin_precondition_failure_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    // the step response itself crosses this threshold
    let cfg = write(
        tmp.path(),
        "c.toml",
        "blowup = 0.5\n[controller]\nmode = \"l1\"\n[plant]\nJ = [0.011, 0.011, 0.021]\n",
    );
    let out = l1gp(&["margin", s(&cfg), "-o", s(&tmp.path().join("o")), "--horizon", "5"]);
    assert_eq!(out.status.code(), Some(4));
}

fn coverage(config: &Path, out: &Path, n_train: &str) -> Value {
    let o = l1gp(&["bound-check", s(config), "-o", s(out), "--n-train", n_train, "--n-probe", "500"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    json(&out.join("coverage.json"))
}

#[test]
fn bound_check_prior_and_trained() {
    let tmp = tempfile::tempdir().unwrap();
    let prior = coverage(&deck("bound.toml"), &tmp.path().join("p"), "0");
    assert_eq!(prior["violation_fraction"].as_f64().unwrap(), 0.0);
    // brute-force maximum of poly15 on the probe box is 0.5 < √β σ_f
    assert!(prior["max_abs_f"].as_f64().unwrap() <= 0.5);
    assert!((prior["sqrt_beta"].as_f64().unwrap() - 8.509).abs() < 1e-3);

    let trained = coverage(&deck("bound.toml"), &tmp.path().join("t"), "50");
    assert!(trained["violation_fraction"].as_f64().unwrap() <= 0.01);
}

#[test]
fn larger_delta_shrinks_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let strict = coverage(&deck("bound.toml"), &tmp.path().join("s"), "20");
    let text = fs::read_to_string(deck("bound.toml"))
        .unwrap()
        .replace("delta = 0.01", "delta = 0.5");
    let cfg = write(tmp.path(), "loose.toml", &text);
    let loose = coverage(&cfg, &tmp.path().join("l"), "20");
    assert!(loose["sqrt_beta"].as_f64().unwrap() < strict["sqrt_beta"].as_f64().unwrap());
    let pts = |v: &Value| -> Vec<f64> {
        v["points"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p["e_f"].as_f64().unwrap())
            .collect()
    };
    for (a, b) in pts(&loose).iter().zip(pts(&strict)) {
        assert!(*a < b);
    }
}

fn window(cmp: &Value, t0: f64, t1: f64) -> Value {
    cmp["windows"]
        .as_array()
        .unwrap()
        .iter()
        .find(|w| w["t0"].as_f64() == Some(t0) && w["t1"].as_f64() == Some(t1))
        .cloned()
        .unwrap()
}

#[test]
fn compare_identical_decks() {
    let tmp = tempfile::tempdir().unwrap();
    let o = l1gp(&["compare", s(&deck("step.toml")), s(&deck("step.toml")), "-o", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(0));
    let cmp = json(&tmp.path().join("compare.json"));
    for w in cmp["windows"].as_array().unwrap() {
        assert_eq!(w["ratio"].as_f64(), Some(1.0));
    }
}

#[test]
fn compare_l1_with_l1gp() {
    let tmp = tempfile::tempdir().unwrap();
    // at the default target noise the learned model is barely above the noise
    // floor of poly15 near the trajectory, so the gain is checked with cleaner
    // targets
    let quiet = |name: &str| {
        let text = fs::read_to_string(deck(name))
            .unwrap()
            .replace("n_update = 10", "n_update = 10\nnoise_std = 0.001");
        write(tmp.path(), name, &text)
    };
    let (a, b) = (quiet("sinusoid_l1.toml"), quiet("sinusoid.toml"));
    let o = l1gp(&["compare", s(&a), s(&b), "-o", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(0));
    let cmp = json(&tmp.path().join("o/compare.json"));
    let late = window(&cmp, 50.0, 60.0);
    assert!(
        late["mean_ideal_error_b"].as_f64().unwrap() < late["mean_ideal_error_a"].as_f64().unwrap(),
        "{late}"
    );
    let early = window(&cmp, 0.0, 5.0)["ratio"].as_f64().unwrap();
    assert!((0.8..=1.25).contains(&early), "{early}");
}

#[test]
fn compare_rejects_mismatched_durations() {
    let tmp = tempfile::tempdir().unwrap();
    let o = l1gp(&["compare", s(&deck("step.toml")), s(&deck("sinusoid.toml")), "-o", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
}
