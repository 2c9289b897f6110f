use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cdcov(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdcov"))
        .args(args)
        .output()
        .expect("spawn cdcov")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_data(path: &Path) {
    // 4 variables, 12 observations.
    let rows: Vec<String> = (0..4)
        .map(|i| {
            (0..12)
                .map(|j| format!("{}", ((i * 7 + j * 5) % 11) as f64 - 5.0 + 0.1 * i as f64))
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    fs::write(path, rows.join("\n") + "\n").unwrap();
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    // Unknown flag: clap usage error.
    assert_eq!(cdcov(&["simulate", "--out", p(&out), "--bogus", "1"]).status.code(), Some(2));
    // Missing seed.
    let r = cdcov(&["oracle-check", "--out", p(&out), "--p", "5", "--k", "2"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("seed"));
    // Missing input file is a runtime failure.
    let r = cdcov(&["sure", "--out", p(&out), "--input", p(&dir.path().join("nope.csv"))]);
    assert_eq!(r.status.code(), Some(1));
    // Out-of-range parameter.
    let r = cdcov(&["oracle-check", "--out", p(&out), "--p", "5", "--k", "9", "--seed", "1"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn flags_override_config_and_defaults_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"p": 12, "k": 3, "samples": 40, "seed": 5}"#).unwrap();
    let out = dir.path().join("o");
    let r = cdcov(&["oracle-check", "--out", p(&out), "--config", p(&cfg), "--p", "9"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["p"], 9);
    assert_eq!(m["config"]["k"], 3);
    assert_eq!(m["config"]["plain"], false);
    assert_eq!(m["command"], "oracle-check");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("haar_report.json")).unwrap()).unwrap();
    assert_eq!(report["p"], 9);
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"pp": 12}"#).unwrap();
    let r = cdcov(&["oracle-check", "--out", p(&dir.path().join("o")), "--config", p(&cfg)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("pp"));
}

#[test]
fn manifest_for_another_command_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    assert!(cdcov(&["oracle-check", "--out", p(&first), "--p", "4", "--k", "2", "--samples", "10", "--seed", "1"]).status.success());
    let r = cdcov(&["sure", "--out", p(&dir.path().join("b")), "--config", p(&first.join("manifest.json"))]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn estimate_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("x.csv");
    write_data(&data);
    let out = dir.path().join("cd");
    assert!(cdcov(&["estimate", "--out", p(&out), "--method", "cd", "--input", p(&data), "--k", "2"]).status.success());
    let est = fs::read_to_string(out.join("estimate.csv")).unwrap();
    assert_eq!(est.lines().count(), 4);
    assert!(est.lines().all(|l| l.split(',').count() == 4));
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("estimate.json")).unwrap()).unwrap();
    assert_eq!(meta["k"], 2);
    assert_eq!(meta["k_source"], "given");
    // poet without a factor count is a usage error.
    let r = cdcov(&["estimate", "--out", p(&out), "--method", "poet", "--input", p(&data), "--seed", "1"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn sure_csv_covers_grid() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("x.csv");
    write_data(&data);
    let out = dir.path().join("s");
    assert!(cdcov(&["sure", "--out", p(&out), "--input", p(&data), "--grid-min", "1", "--grid-max", "4", "--grid-step", "1"]).status.success());
    let csv = fs::read_to_string(out.join("sure_curve.csv")).unwrap();
    let ks: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ks, ["1", "2", "3", "4"]);
}

#[test]
fn render_of_empty_records_gives_header_only_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("r.csv");
    fs::write(
        &records,
        "method,setting,n,p,ktr,s,replicates,used,op_err_mean,op_err_se,fro_err_mean,fro_err_se,k_hat_mode,k_opt\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    assert!(cdcov(&["render", "--out", p(&out), "--input", p(&records)]).status.success());
    assert_eq!(fs::read_to_string(out.join("plot_data.csv")).unwrap(), "s,method,norm,mean,se\n");
}
