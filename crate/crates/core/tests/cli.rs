use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const CONFIG: &str = r#"{
    "seed": 11,
    "gamma_time": 20.0,
    "drifts": [1.0, 1.0],
    "correlations": [{"model": "independent"}, {"model": "constant", "rho": 0.5}],
    "dt_time": 0.02,
    "fa_replications": 300,
    "delay_replications": 300,
    "gamma_list": [100.0, 1000.0, 10000.0, 100000.0],
    "fusion": {"replications": 200, "change_points_time": [null, 2.0]}
}"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path
}

fn ncusum(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncusum")).args(args).output().expect("binary runs")
}

fn run_in(dir: &TempDir, text: &str, cmd: &str, extra: &[&str]) -> (Output, std::path::PathBuf) {
    let cfg = write_config(dir.path(), text);
    let out = dir.path().join(format!("out-{cmd}-{}", extra.join("_").replace(['-', '/'], "")));
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    (ncusum(&args), out)
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn calibrate_reports_equal_case() {
    let tmp = TempDir::new().unwrap();
    let text = CONFIG.replace("\"gamma_time\": 20.0", "\"gamma_time\": 100.0");
    let (o, out) = run_in(&tmp, &text, "calibrate", &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("case      equal"));
    assert!(stdout.contains("4.6602285548"));
    let th = read(&out, "thresholds.csv");
    assert!(th.starts_with("channel,drift_lower,drift_upper,h\n1,"));
    assert!(th.contains("4.66022855484996"));
    assert!(out.join("effective_config.json").exists());
}

#[test]
fn calibrate_one_channel_has_zero_gap() {
    let tmp = TempDir::new().unwrap();
    let text = CONFIG.replace("[1.0, 1.0]", "[1.0]").replace(
        r#""correlations": [{"model": "independent"}, {"model": "constant", "rho": 0.5}],"#,
        "",
    ).replace("[null, 2.0]", "[2.0]");
    let (o, out) = run_in(&tmp, &text, "calibrate", &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let row: Vec<String> = read(&out, "calibration.csv").lines().nth(1).unwrap().split(',').map(String::from).collect();
    assert_eq!(row[3], row[4], "h1 equals nu_star");
    assert_eq!(row[7].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn collapsed_intervals_match_equal_case() {
    let tmp = TempDir::new().unwrap();
    let (a, out_a) = run_in(&tmp, CONFIG, "calibrate", &[]);
    let partial = CONFIG.replace("[1.0, 1.0]", r#"[1.0, {"lower": 1.0, "upper": 1.0}]"#);
    let (b, out_b) = run_in(&tmp, &partial, "calibrate", &["--seed", "11"]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(read(&out_a, "thresholds.csv"), read(&out_b, "thresholds.csv"));
}

#[test]
fn verify_passes_and_is_thread_count_invariant() {
    let tmp = TempDir::new().unwrap();
    let (one, out1) = run_in(&tmp, CONFIG, "verify", &["--parallel", "1"]);
    let (two, out2) = run_in(&tmp, CONFIG, "verify", &["--parallel", "3"]);
    assert_eq!(one.status.code(), Some(0), "{}", String::from_utf8_lossy(&one.stdout));
    assert_eq!(two.status.code(), Some(0));
    assert_eq!(read(&out1, "bounds_report.csv"), read(&out2, "bounds_report.csv"));
}

#[test]
fn echoed_config_reproduces_results() {
    let tmp = TempDir::new().unwrap();
    let (o, out) = run_in(&tmp, CONFIG, "verify", &["--seed", "99", "--reps", "150"]);
    assert_eq!(o.status.code(), Some(0));
    let echo = out.join("effective_config.json");
    let again = tmp.path().join("again");
    let o2 = ncusum(&["verify", "--config", echo.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(o2.status.code(), Some(0));
    assert_eq!(read(&out, "bounds_report.csv"), read(&again, "bounds_report.csv"));
    assert!(read(&out, "bounds_report.csv").contains(",150,"));
}

#[test]
fn half_threshold_fails_false_alarm_check() {
    let tmp = TempDir::new().unwrap();
    let h = 0.5 * ncusum::math::calibrate_equal(20.0, 1.0, 2).unwrap().h1();
    let text = CONFIG.replace("\"dt_time\"", &format!("\"thresholds_override\": [{h}, {h}],\n\"dt_time\""));
    let (o, out) = run_in(&tmp, &text, "verify", &[]);
    assert_eq!(o.status.code(), Some(1));
    let report = read(&out, "bounds_report.csv");
    assert!(report.lines().any(|l| l.starts_with("false_alarm_gamma:independent") && l.contains(",fail,")));
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let zero = CONFIG.replace("\"fa_replications\": 300", "\"fa_replications\": 0");
    assert_eq!(run_in(&tmp, &zero, "verify", &[]).0.status.code(), Some(2));
    let unknown = CONFIG.replace("\"seed\"", "\"colour\": 1, \"seed\"");
    assert_eq!(run_in(&tmp, &unknown, "calibrate", &[]).0.status.code(), Some(2));
    assert_eq!(run_in(&tmp, CONFIG, "verify", &["--reps", "0"]).0.status.code(), Some(2));
    assert_eq!(ncusum(&["calibrate", "--config", "/nonexistent.json"]).status.code(), Some(2));
}

#[test]
fn sweep_table() {
    let tmp = TempDir::new().unwrap();
    let (o, out) = run_in(&tmp, CONFIG, "sweep", &[]);
    assert!(o.status.success());
    let text = read(&out, "sweep.csv");
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    for w in rows.windows(2) {
        assert!(w[1][5] > w[0][5], "gap increasing");
        assert!(w[1][10] < w[0][10], "expansion error decreasing");
    }
    assert!(rows.iter().all(|r| r[5] <= 2.0 * 2f64.ln()));

    let single = CONFIG.replace("\"gamma_list\": [100.0, 1000.0, 10000.0, 100000.0],", "");
    let (o, out) = run_in(&tmp, &single, "sweep", &["--seed", "1"]);
    assert!(o.status.success());
    assert_eq!(read(&out, "sweep.csv").lines().count(), 2);
}

#[test]
fn fusion_reports_no_mismatches_and_identical_bytes() {
    let tmp = TempDir::new().unwrap();
    let (a, out_a) = run_in(&tmp, CONFIG, "fusion", &[]);
    let (b, out_b) = run_in(&tmp, CONFIG, "fusion", &["--parallel", "2"]);
    assert_eq!(a.status.code(), Some(0));
    assert!(String::from_utf8(a.stdout).unwrap().contains("0 mismatches"));
    assert_eq!(b.status.code(), Some(0));
    for f in ["fusion_equivalence.csv", "message_log.csv"] {
        assert_eq!(read(&out_a, f), read(&out_b, f));
    }
    let log = read(&out_a, "message_log.csv");
    assert!(log.starts_with("replication,sensor,alarm_time,statistic"));

    let delayed = CONFIG.replace("[null, 2.0]}", r#"[null, 2.0], "delay": {"kind": "fixed", "delay": 0.5}}"#);
    let (c, out_c) = run_in(&tmp, &delayed, "fusion", &["--seed", "11"]);
    assert_eq!(c.status.code(), Some(0));
    let added = read(&out_c, "delay_injection.csv");
    assert!(added.lines().skip(1).all(|l| (l.split(',').nth(1).unwrap().parse::<f64>().unwrap() - 0.5).abs() < 1e-9));
}

#[test]
fn simulate_dumps_path() {
    let tmp = TempDir::new().unwrap();
    let short = CONFIG.replace("\"dt_time\"", "\"horizon_time\": 1.0, \"dt_time\"");
    let (o, out) = run_in(&tmp, &short, "simulate", &[]);
    assert!(o.status.success());
    let path = read(&out, "path.csv");
    assert!(path.starts_with("t,xi_1,xi_2\n"));
    assert_eq!(path.lines().count(), 1 + 51);
}
