use std::fs;
use std::process::Command;

fn bench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bench"))
}

#[test]
fn list_small_suite() {
    let out = bench().args(["list", "--suite", "small"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 10);
    assert!(text.contains("chained_rosenbrock_2\t2"));
}

#[test]
fn run_then_profile() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "# looser tolerance\neps=1e-5\ngamma3=20\n").unwrap();
    let out = dir.path().join("run");
    let status = bench()
        .args(["run", "--suite", "small", "--solvers", "an2cls-e,an2cls-k,soan2cls", "--max-iter", "500"])
        .args(["--eps2", "1e-3", "--cost", "evaluations", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    for f in ["rows.csv", "profiles.csv", "profile.svg", "summary.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let rows = fs::read_to_string(out.join("rows.csv")).unwrap();
    let n_problems = String::from_utf8(bench().args(["list"]).output().unwrap().stdout).unwrap().lines().count();
    assert_eq!(rows.lines().count(), 1 + 3 * n_problems);
    assert!(rows.starts_with("solver,problem,dimension,status,iterations,successful_iterations,"));

    let again = dir.path().join("again");
    let status =
        bench().args(["profile", "--rows"]).arg(out.join("rows.csv")).arg("--out").arg(&again).status().unwrap();
    assert!(status.success());
    assert_eq!(fs::read_to_string(again.join("rows.csv")).unwrap(), rows);
}

#[test]
fn solve_prints_trace() {
    let out = bench().args(["solve", "chained_rosenbrock_2", "--solver", "an2cls-k"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 28);
    assert!(String::from_utf8(out.stderr).unwrap().contains("converged"));
}

#[test]
fn harness_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = bench().args(["run", "--solvers", "newton", "--out"]).arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"kappa_x": 1}"#).unwrap();
    let out = bench().args(["solve", "wood_4", "--config"]).arg(&bad).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("kappa_x"));
}
