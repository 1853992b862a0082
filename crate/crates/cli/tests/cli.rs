use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gpcsa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpcsa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const PAIRED: &str = r#"
[scenario]
name = "paired"
horizon = "120s"
seeds = [5, 6]
policies = ["generalized_predictive", "predictive_exponential"]

[mac]
t_pu_allow = "1s"

[[channel]]
off = "hed(0.9:10, 0.1:0.1)"
duty_cycle = 0.3

[[channel]]
off = "exp(1)"
duty_cycle = 0.3
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("scenario.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn run_writes_paired_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), PAIRED);
    let out = dir.path().join("out");
    let traces = dir.path().join("traces");
    let o = gpcsa(&[
        "run",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--trace-out",
        traces.to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let agg = fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert!(agg.lines().next().unwrap().contains("delta_switch_rate_pct"));
    assert_eq!(agg.lines().count(), 3);
    assert!(traces.join("g0_s5.csv").exists());
    assert!(out.join("runs/g0_s6_predictive_exponential.json").exists());

    let again = dir.path().join("again");
    let o = gpcsa(&["run", &cfg, "--out", again.to_str().unwrap(), "--jobs", "1"]);
    assert!(o.status.success());
    assert_eq!(fs::read(out.join("aggregate.csv")).unwrap(), fs::read(again.join("aggregate.csv")).unwrap());
}

#[test]
fn seed_override_replaces_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), PAIRED);
    let out = dir.path().join("out");
    let o = gpcsa(&["run", &cfg, "--out", out.to_str().unwrap(), "--seed-override", "11,12,13"]);
    assert!(o.status.success());
    let runs: Vec<_> = fs::read_dir(out.join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 6);
    assert!(out.join("runs/g0_s13_generalized_predictive.json").exists());
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[scenario]\nname = \"x\"\nhorizon = \"1s\"\n");
    let o = gpcsa(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));

    let o = gpcsa(&["run", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = gpcsa(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn probe_prints_table() {
    let o = gpcsa(&["probe", "exp(1) / exp(1)", "--dt-grid", "0,0.5"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "dt,p_off_off,p_on_off,p_on_on");
    let first: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(&first[..], &[0.0, 1.0, 0.0, 1.0]);
    let second: Vec<f64> = lines[2].split(',').map(|v| v.parse().unwrap()).collect();
    assert!((second[1] - (0.5 + 0.5 * (-1.0f64).exp())).abs() < 1e-12);

    let o = gpcsa(&["probe", "exp(1) / nope(3)"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_recovers_mixture() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("idle.txt");
    // Deterministic quantiles of hed(0.7:5, 0.3:0.2).
    let ccdf = |t: f64| 0.7 * (-5.0 * t).exp() + 0.3 * (-0.2 * t).exp();
    let mut text = String::new();
    let n = 4000;
    for k in 0..n {
        let u = (k as f64 + 0.5) / n as f64;
        let (mut lo, mut hi) = (0.0, 200.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if ccdf(mid) > u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        text += &format!("{}\n", 0.5 * (lo + hi));
    }
    fs::write(&samples, text).unwrap();
    let table = dir.path().join("ccdf.csv");
    let o = gpcsa(&[
        "fit",
        samples.to_str().unwrap(),
        "--phases",
        "2",
        "--ccdf",
        table.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let literal = stdout(&o);
    assert!(literal.trim().starts_with("hed("), "{literal}");
    let csv = fs::read_to_string(&table).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,empirical_ccdf,model_ccdf");
    for row in csv.lines().skip(1) {
        let v: Vec<f64> = row.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((v[1] - v[2]).abs() < 0.02, "{row}");
    }

    let o = gpcsa(&["fit", samples.to_str().unwrap(), "--phases", "9"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn injected_fault_is_reported() {
    let o = gpcsa(&["validate", "--quick", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("hed(0.7:5, 0.3:0.2)"), "{err}");
    let text = stdout(&o);
    assert!(text.starts_with("model_id,quantity,dt,closed_form,oracle,stderr,z_score"));
    assert!(text.contains("[FAIL] oracle m2"));
}
