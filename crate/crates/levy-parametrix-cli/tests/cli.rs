use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use levy_parametrix::stable_kernels::build_profile;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_levy-parametrix"))
}

fn run(args: &[&str], config: &Path) -> Output {
    bin().args(args).arg("--config").arg(config).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    let out = dir.join("out");
    fs::write(&path, format!("out = {:?}\n{body}", out.to_str().unwrap())).unwrap();
    path
}

const FLAT_SMALL: &str = r#"
horizon = 0.5

[model]
a = "1"
b = "0"
alpha = 1.5
regime = "A"

[lattice]
lo = -6.0
hi = 6.0
nodes = 49

[time]
required = [0.25]

[profile]
resolution = 1024

[density]
times = [0.25, 0.5]
x = [0.0, 1.0]
"#;

#[test]
fn malformed_expression_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model]\na = \"1 + * x\"\nb = \"0\"\nalpha = 1.5\nregime = \"A\"\n");
    let out = run(&["density"], &cfg);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn degenerate_diffusion_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model]\na = \"0.5 + sin(x)\"\nb = \"0\"\nalpha = 0.8\nregime = \"B\"\n");
    let out = run(&["simulate"], &cfg);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("positive"));
}

#[test]
fn inadmissible_regime_and_unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model]\na = \"1\"\nb = \"0\"\nalpha = 0.8\nregime = \"A\"\n");
    assert_eq!(run(&["profile-build"], &cfg).status.code(), Some(2));
    let cfg = write_config(dir.path(), "bogus = 1\n");
    assert_eq!(run(&["density"], &cfg).status.code(), Some(2));
}

#[test]
fn too_few_paths_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[model]\na = \"1\"\nb = \"0\"\nalpha = 1.5\nregime = \"A\"\n[simulation]\nn_paths = 500\nn_steps = 10\n",
    );
    let out = run(&["simulate"], &cfg);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_is_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let body = "[model]\na = \"1 + 0.3*sin(x)\"\nb = \"0.5*cos(x)\"\nalpha = 1.5\nregime = \"A\"\n\
                [simulation]\nn_paths = 2000\nn_steps = 20\nseed = 11\n";
    let cfg = write_config(dir.path(), body);
    let read = |name: &str| fs::read(dir.path().join("out").join(name)).unwrap();
    assert!(run(&["simulate"], &cfg).status.success());
    let (ens, emp) = (read("ensemble.csv"), read("empirical_density.csv"));
    assert!(run(&["simulate", "--threads", "1"], &cfg).status.success());
    assert_eq!(ens, read("ensemble.csv"));
    assert_eq!(emp, read("empirical_density.csv"));
    assert!(run(&["simulate", "--seed", "12"], &cfg).status.success());
    assert_ne!(ens, read("ensemble.csv"));
    assert_eq!(String::from_utf8(ens).unwrap().lines().count(), 2001);
}

#[test]
fn flat_density_matches_the_stable_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), FLAT_SMALL);
    let out = run(&["density"], &cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let profile = build_profile(1.5, 1, 1024, levy_parametrix::stable_kernels::default_radius_max(1.5)).unwrap();
    let text = fs::read_to_string(dir.path().join("out/density.csv")).unwrap();
    let mut rows = 0;
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        let want = profile.density_at(v[0], v[2] - v[1]);
        assert!((v[3] - want).abs() <= 1e-10 * want.max(1e-8), "{line}: {want}");
        rows += 1;
    }
    assert_eq!(rows, 2 * 2 * 49);
    let cert: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/certificate.json")).unwrap()).unwrap();
    assert!(cert["k_max"].is_u64());
}

#[test]
fn verify_passes_on_the_flat_model() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("suites = [\"mass\", \"positivity\"]\n{FLAT_SMALL}[verify]\nmass_times = [0.25, 0.5]\n");
    let cfg = write_config(dir.path(), &body);
    let out = run(&["verify"], &cfg);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("PASS mass/mass_t0.5"));
    let report = fs::read_to_string(dir.path().join("out/report.jsonl")).unwrap();
    for line in report.lines() {
        let r: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(r["pass"], true, "{line}");
    }
}

#[test]
fn profile_build_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model]\na = \"1\"\nb = \"0\"\nalpha = 1.0\nregime = \"B\"\n[profile]\nresolution = 512\n");
    let out = run(&["profile-build"], &cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("out/profile_alpha1.csv")).unwrap();
    assert!(text.lines().count() > 512);
}
