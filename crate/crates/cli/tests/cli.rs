use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_manifold-sgd"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn body(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

fn summary_value(path: &Path, key: &str) -> String {
    body(path)
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")).map(str::to_string))
        .unwrap_or_else(|| panic!("{key} missing from {}", path.display()))
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let args = ["sgd-vs-limit", "--override", "seeds=16", "--override", "etas=0.05,0.02", "--seed", "3"];
    assert_eq!(code(&run(&args, a.path())), 0);
    assert_eq!(code(&run(&args, b.path())), 0);
    let names = files(a.path());
    assert!(names.contains(&"sweep.csv".to_string()));
    assert_eq!(names, files(b.path()));
    for name in names {
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap(), "{name}");
    }
}

#[test]
fn every_file_has_the_provenance_header() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(&["olm-flow", "--override", "n=4", "--override", "d=8", "--override", "kappa=1"], dir.path())), 0);
    for name in files(dir.path()) {
        let text = fs::read_to_string(dir.path().join(&name)).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# manifold-sgd "), "{name}");
        assert!(lines.next().unwrap().starts_with("# command: olm-flow"), "{name}");
        let hash = lines.next().unwrap().strip_prefix("# config_sha256: ").unwrap().to_string();
        assert_eq!(hash.len(), 64);
        assert_eq!(lines.next().unwrap(), "# seeds: 0", "{name}");
    }
    assert!(files(dir.path()).iter().any(|n| n.ends_with(".gp")));
}

#[test]
fn seed_flag_changes_header_and_hash() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    run(&["kernel-baseline", "--override", "trials=5"], a.path());
    run(&["kernel-baseline", "--override", "trials=5", "--seed", "9"], b.path());
    let ha = fs::read_to_string(a.path().join("kernel_baseline.csv")).unwrap();
    let hb = fs::read_to_string(b.path().join("kernel_baseline.csv")).unwrap();
    assert!(hb.contains("# seeds: 9\n"));
    assert_ne!(ha.lines().nth(2), hb.lines().nth(2));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "# motor settings\ndim = 5\nspeed = 3\n").unwrap();
    let o = run(&["motor", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("speed"));
    assert_eq!(code(&run(&["motor", "--override", "nokey"], dir.path())), 2);
    assert_eq!(code(&run(&["motor", "--override", "dim=3"], dir.path())), 2);
    assert_eq!(code(&run(&["no-such-command"], dir.path())), 2);
}

#[test]
fn config_file_values_apply() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("k.cfg");
    fs::write(&cfg, "trials = 7\nn = 20\n").unwrap();
    assert_eq!(code(&run(&["kernel-baseline", "--config", cfg.to_str().unwrap()], dir.path())), 0);
    let summary = dir.path().join("kernel_summary.txt");
    assert_eq!(summary_value(&summary, "trials"), "7");
    assert_eq!(summary_value(&summary, "n"), "20");
}

#[test]
fn verify_derivatives_passes_by_default() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(&["verify-derivatives"], dir.path())), 0);
    let table = body(&dir.path().join("derivatives.csv"));
    assert_eq!(table.lines().count(), 1 + 2 * 2 * 5);
    assert!(table.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn zero_tolerance_fails_the_named_check() {
    let dir = TempDir::new().unwrap();
    let o = run(&["verify-derivatives", "--override", "tol_first=0"], dir.path());
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("order-1 derivative"), "{err}");
}

#[test]
fn divergence_is_a_numerical_failure() {
    let dir = TempDir::new().unwrap();
    let o = run(&["sgd-vs-limit", "--override", "etas=3", "--override", "t_end=90", "--override", "seeds=4"], dir.path());
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn undersampled_recovery_is_reported_not_fatal() {
    let dir = TempDir::new().unwrap();
    let o = run(&["olm-recover", "--override", "n=2", "--override", "d=40", "--override", "kappa=3"], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(summary_value(&dir.path().join("olm_recover_summary.txt"), "recovered"), "0");
}

#[test]
fn recovery_succeeds_with_enough_samples() {
    let dir = TempDir::new().unwrap();
    let o = run(&["olm-recover", "--override", "n=30", "--override", "trials=2"], dir.path());
    assert_eq!(code(&o), 0);
    let summary = dir.path().join("olm_recover_summary.txt");
    assert_eq!(summary_value(&summary, "recovered"), "2");
    assert_eq!(summary_value(&summary, "dual_certificate_ok"), "2");
}

#[test]
fn kernel_baseline_sits_near_one_minus_n_over_d() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(&["kernel-baseline"], dir.path())), 0);
    let ratio: f64 = summary_value(&dir.path().join("kernel_summary.txt"), "mean_ratio").parse().unwrap();
    assert!((0.70..=0.80).contains(&ratio), "{ratio}");
}

#[test]
fn motor_speed_matches_reference_band() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(&["motor"], dir.path())), 0);
    let speed: f64 = summary_value(&dir.path().join("motor_summary.txt"), "measured_angular_speed").parse().unwrap();
    assert!((1.425..=1.575).contains(&speed), "measured angular speed {speed}");
}
