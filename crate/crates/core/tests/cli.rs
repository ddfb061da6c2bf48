use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use mfg_exec::cli::{compare_modes, load_config, parse_config, run, sweep_n, verify, Scenario, Summary};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn scenario(name: &str, out: &Path, grid_n: usize) -> Scenario {
    let mut c = load_config(&config(name)).unwrap();
    c.output.dir = out.to_path_buf();
    c.grid.n = grid_n;
    Scenario::new(c).unwrap()
}

#[test]
fn solve_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(&scenario("fig1.cfg", a.path(), 801)).unwrap();
    run(&scenario("fig1.cfg", b.path(), 801)).unwrap();
    for f in ["mu_trading_constraint.csv", "kernels.csv", "paths.csv", "summary.txt"] {
        let x = fs::read(a.path().join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let s = Summary::load(&a.path().join("summary.txt")).unwrap();
    assert_eq!(s.get("mode"), Some("trading_constraint"));
    let mu = fs::read_to_string(a.path().join("mu_trading_constraint.csv")).unwrap();
    assert_eq!(mu.lines().next(), Some("t,mu,eta_mu"));
    assert_eq!(mu.lines().count(), 802);
}

#[test]
fn stale_summary_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    run(&scenario("fig1.cfg", dir.path(), 801)).unwrap();
    let path = dir.path().join("summary.txt");
    let text = fs::read_to_string(&path).unwrap();
    let line = text.lines().find(|l| l.starts_with("mass = ")).unwrap();
    fs::write(&path, text.replace(line, "mass = 1.2")).unwrap();
    assert!(Summary::load(&path).is_err());
}

#[test]
fn empty_market_writes_zero_rate() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(&scenario("empty_market.cfg", dir.path(), 401)).unwrap();
    assert!(r.solution.trivial);
    let s = Summary::load(&dir.path().join("summary.txt")).unwrap();
    assert_eq!(s.get("trivial"), Some("true"));
    assert!(s.get("warning").is_some());
    let mu = fs::read_to_string(dir.path().join("mu_trading_constraint.csv")).unwrap();
    for line in mu.lines().skip(1) {
        let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(v, 0.0);
    }
}

#[test]
fn verify_passes_on_bundled_configs() {
    for name in ["fig1.cfg", "fig2.cfg"] {
        let dir = tempfile::tempdir().unwrap();
        let r = verify(&scenario(name, dir.path(), 2001)).unwrap();
        let rep = r.verification.unwrap();
        for c in &rep.checks {
            assert!(c.passed, "{name}: {c:?}");
        }
        let text = fs::read_to_string(dir.path().join("verification.txt")).unwrap();
        assert!(text.contains("overall = pass"));
    }
}

#[test]
fn compare_reports_equal_masses_and_a_crossing() {
    let dir = tempfile::tempdir().unwrap();
    let r = compare_modes(&scenario("fig1.cfg", dir.path(), 2001)).unwrap();
    let c = r.comparison.unwrap();
    assert!(c.max_mass_spread < 1e-3);
    assert!(c.slower_start);
    assert!(c.crossing.is_some());
    assert!(dir.path().join("compare.csv").exists());
}

#[test]
fn sweep_gap_shrinks_with_players() {
    let dir = tempfile::tempdir().unwrap();
    let r = sweep_n(&scenario("fig2.cfg", dir.path(), 1001), &[7, 15, 100]).unwrap();
    assert!(r.sweep.unwrap().decreasing());
    let csv = fs::read_to_string(dir.path().join("nplayer_convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let mu = fs::read_to_string(dir.path().join("nplayer_mu.csv")).unwrap();
    assert_eq!(mu.lines().next(), Some("t,mfg,n7,n15,n100"));
}

#[test]
fn binary_reports_config_lines() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    let text = fs::read_to_string(config("fig1.cfg")).unwrap().replace("lambda = 5.0", "lambda = -5.0");
    fs::write(&bad, &text).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mfg-exec")).arg("solve").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().position(|l| l.starts_with("lambda")).unwrap() + 1;
    assert!(err.contains(&format!("line {line}")), "{err}");
}

#[test]
fn binary_solves_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mfg-exec"))
        .args(["solve", config("fig1.cfg").to_str().unwrap(), "--grid-n", "401", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = Summary::load(&dir.path().join("summary.txt")).unwrap();
    assert_eq!(s.get("grid_n"), Some("401"));
}

#[test]
fn unknown_keys_are_rejected() {
    let text = fs::read_to_string(config("fig1.cfg")).unwrap().replace("[grid]", "[grid]\nnodes = 5");
    assert!(parse_config(&text).unwrap_err().to_string().contains("nodes"));
}
