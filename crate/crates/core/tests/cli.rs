use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BASE: &str = r#"
seed = 11

[grid]
dims = 1
points = 128
half_length = 4.0

[problem]
s = 0.7
order = 1

[domains]
omega = { kind = "ball", center = [0.0], radius = 1.5 }
w1 = { kind = "box", lo = [-3.9], hi = [-1.625] }
w2 = { kind = "box", lo = [1.625], hi = [3.8] }
"#;

const COEFFICIENTS: &str = r#"
[[coefficients]]
family = "gaussian"
alpha = [0]
center = [0.0]
width = 0.5
amplitude = 0.8

[[coefficients]]
family = "gaussian"
alpha = [1]
center = [0.2]
width = 0.5
amplitude = 0.5
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn fraccal(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fraccal"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let k = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().to_string()).collect()
}

#[test]
fn forward_writes_solution_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{BASE}{COEFFICIENTS}"));
    let out = dir.path().join("out");
    let o = fraccal(&cfg, &out, &["forward"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("solution.fcl").is_file());
    let report = std::fs::read_to_string(out.join("solve_report.csv")).unwrap();
    assert!(!report.contains('\r'));
}

#[test]
fn missing_config_is_a_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_fraccal")).arg("verify").output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn integer_order_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &BASE.replace("s = 0.7", "s = 1.0").replace("order = 1", "order = 2"));
    let o = fraccal(&cfg, &dir.path().join("out"), &["forward"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("integer"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_are_rejected_with_their_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &BASE.replace("half_length = 4.0", "half_length = 4.0\nspacing = 0.1"));
    let o = fraccal(&cfg, &dir.path().join("out"), &["verify"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("grid"), "{}", stderr(&o));
}

#[test]
fn verify_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{BASE}{COEFFICIENTS}"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&fraccal(&cfg, &a, &["verify"])), 0);
    assert_eq!(code(&fraccal(&cfg, &b, &["verify", "--threads", "1"])), 0);
    assert_eq!(std::fs::read(a.join("verify.csv")).unwrap(), std::fs::read(b.join("verify.csv")).unwrap());
}

#[test]
fn injected_adjoint_sign_error_is_caught() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{BASE}{COEFFICIENTS}\n[verify]\nsuites = [\"alessandrini\"]\ninject_adjoint_sign_error = true\n");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    assert_eq!(code(&fraccal(&cfg, &out, &["verify"])), 1);
    let report = std::fs::read_to_string(out.join("verify.csv")).unwrap();
    assert!(column(&report, "pass").iter().any(|p| p == "false"));
}

#[test]
fn empty_suite_selection_reports_no_checks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{BASE}\n[verify]\nsuites = []\n"));
    let out = dir.path().join("out");
    assert_eq!(code(&fraccal(&cfg, &out, &["verify"])), 0);
    assert!(std::fs::read_to_string(out.join("verify.csv")).unwrap().contains("no checks run"));
}

#[test]
fn identical_operators_recover_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let out = dir.path().join("out");
    let o = fraccal(&cfg, &out, &["recover"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let values = column(&std::fs::read_to_string(out.join("recovered.csv")).unwrap(), "value");
    assert!(!values.is_empty());
    assert!(values.iter().all(|v| v.parse::<f64>().unwrap().abs() <= 1e-6));
}

#[test]
fn disabling_the_peel_degrades_first_order_recovery() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{BASE}{COEFFICIENTS}\n[recover]\npeel = false\n"));
    let o = fraccal(&cfg, &dir.path().join("out"), &["recover"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("degraded"));
}

#[test]
fn recovery_improves_with_dictionary_size() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{BASE}{COEFFICIENTS}\n[recover]\ndictionary_sizes = [4, 8]\n");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let o = fraccal(&cfg, &out, &["recover"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = std::fs::read_to_string(out.join("recovery_summary.csv")).unwrap();
    let alphas = column(&summary, "alpha");
    let errors = column(&summary, "relative_error");
    for alpha in ["0", "1"] {
        let series: Vec<f64> =
            alphas.iter().zip(&errors).filter(|(a, _)| a.as_str() == alpha).map(|(_, e)| e.parse().unwrap()).collect();
        assert_eq!(series.len(), 3);
        assert!(series.windows(2).all(|w| w[1] <= w[0]), "alpha {alpha}: {series:?}");
    }
}

#[test]
fn every_subcommand_runs_on_the_sample_config() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/minimal.toml");
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["dn", "alessandrini", "runge"] {
        let o = fraccal(&cfg, &dir.path().join(cmd), &[cmd]);
        assert_eq!(code(&o), 0, "{cmd}: {}", stderr(&o));
    }
}
