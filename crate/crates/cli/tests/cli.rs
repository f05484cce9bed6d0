use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use isr_cli::sweep::read_csv;

fn isr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isr")).args(args).output().expect("binary runs")
}

const BS: &str = r#"
name = "flat"
[model]
preset = "black_scholes"
mu = 0.08
sigma = 0.25
[scenario]
maturity = 0.5
spot = 100.0
strike = 100.0
nu = 1.0
[sweep]
axis = "log_strike"
start = 4.4
end = 4.8
count = 5
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_writes_csv_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "flat.toml", BS);
    let out = dir.path().join("flat.csv");
    let res = isr(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = read_csv(fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| (r.lambda_total.unwrap() - 0.32).abs() < 1e-12));
}

#[test]
fn output_is_deterministic_across_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "h.toml", &BS.replace("black_scholes\"\nmu = 0.08\nsigma = 0.25", "heston\"").replace("spot = 100.0", "spot = 100.0\ny = 0.04"));
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert!(isr(&["run", &cfg, "--out", a.to_str().unwrap()]).status.success());
    assert!(isr(&["run", &cfg, "--out", b.to_str().unwrap()]).status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn json_mirror_goes_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "flat.toml", BS);
    let res = isr(&["run", &cfg, "--json"]);
    assert!(res.status.success());
    let v: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 5);
}

#[test]
fn per_point_errors_set_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = BS.replace("preset = \"black_scholes\"\nmu = 0.08\nsigma = 0.25", "preset = \"heston\"\nomega = 0.3")
        .replace("spot = 100.0", "spot = 100.0\ny = 0.04")
        + "[expansion]\nmethod = \"mmm_remark\"\n";
    let cfg = write(dir.path(), "bad.toml", &text);
    let out = dir.path().join("bad.csv");
    let res = isr(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    let rows = read_csv(fs::File::open(&out).unwrap()).unwrap();
    assert!(rows.iter().all(|r| r.error.is_some()));
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "x.toml", &BS.replace("count = 5", "count = 0"));
    let res = isr(&["run", &cfg]);
    assert_eq!(res.status.code(), Some(2));
    assert!(isr(&["run", "/nonexistent.toml"]).status.code() == Some(2));
}

#[test]
fn presets_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let res = isr(&["presets", "--dir", dir.path().to_str().unwrap()]);
    assert!(res.status.success());
    let mut names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 6);
    let one = isr(&["presets", "heston_strike"]);
    assert!(String::from_utf8_lossy(&one.stdout).contains("axis = \"log_strike\""));
    assert_eq!(isr(&["presets", "nope"]).status.code(), Some(2));
}

#[test]
fn compare_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    let text = BS.replace("axis = \"log_strike\"\nstart = 4.4\nend = 4.8\ncount = 5", "axis = \"gamma\"\nstart = 1.0\nend = 1.0\ncount = 1")
        + "[oracle]\nmc = true\n[oracle.monte_carlo]\npaths = 20000\nsteps = 20\n";
    let cfg = write(dir.path(), "cmp.toml", &text);
    let out = dir.path().join("cmp.json");
    let res = isr(&["compare", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    let s = &v["scenarios"][0];
    assert!(s["mc_vs_series_se"].as_f64().unwrap().abs() < 4.0);
    assert_eq!(s["closed_forms"].as_array().unwrap().len(), 5);
    // a config without oracles cannot be compared
    let plain = write(dir.path(), "plain.toml", BS);
    assert_eq!(isr(&["compare", &plain]).status.code(), Some(2));
}
