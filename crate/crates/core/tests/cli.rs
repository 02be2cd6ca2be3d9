use std::path::Path;
use std::process::{Command, Output};

use gbsde::cli_reporting::{EXIT_CHECK, EXIT_CONFIG, EXIT_OK, EXIT_SOLVER};

const CONSTANT: &str = "\
[experiment]
seed = 5
paths = 300

[grid]
horizon = 1
steps = 10

[problem]
terminal = 0
generator = constant_driver
";

fn gbsde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gbsde")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn solve_writes_hashed_csv_and_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.cfg", CONSTANT);
    let out = tmp.path().join("out");
    let o = gbsde(&["solve", "--config", &cfg, "--out", out.to_str().unwrap(), "--check"]);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read(&out, "solve_summary.csv");
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert!((row[1].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
    assert!(summary.trim_end().lines().last().unwrap().starts_with("# config-hash = "));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("PASS orthogonality")));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.cfg", &CONSTANT.replace("constant_driver", "linear(-0.5, 0.3, 0)"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = gbsde(&["solve", "--config", &cfg, "--out", dir.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(EXIT_OK));
    }
    for name in ["solution.csv", "solve_summary.csv"] {
        assert_eq!(read(&a, name), read(&b, name), "{name}");
    }
}

#[test]
fn seed_override_changes_output_and_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.cfg", &CONSTANT.replace("terminal = 0", "terminal = w(0)"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gbsde(&["solve", "--config", &cfg, "--out", a.to_str().unwrap()]);
    gbsde(&["solve", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "6", "--paths", "200"]);
    let (sa, sb) = (read(&a, "solve_summary.csv"), read(&b, "solve_summary.csv"));
    assert_ne!(sa.lines().last(), sb.lines().last());
    assert!(sb.contains("# seed = 6") && sb.contains("# paths = 200"));
}

#[test]
fn config_errors_exit_with_line_numbers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.cfg", &format!("{CONSTANT}[noise]\natom = 1.0 @ -2\n"));
    let o = gbsde(&["solve", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 13") && err.contains("intensity must be positive"), "{err}");

    let missing = tmp.path().join("nope.cfg");
    let o = gbsde(&["solve", "--config", missing.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(EXIT_OK));

    let o = gbsde(&["plot", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solver_errors_carry_step_context() {
    let tmp = tempfile::tempdir().unwrap();
    let text = CONSTANT
        .replace("terminal = 0", "terminal = 5")
        .replace("constant_driver", "monotone_cubic")
        .replace("steps = 10", "steps = 1");
    let cfg = write(tmp.path(), "c.cfg", &text);
    let o = gbsde(&["solve", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_SOLVER));
    assert!(String::from_utf8_lossy(&o.stderr).contains("at step 0"));
}

#[test]
fn failed_checks_only_fail_the_process_under_check() {
    let tmp = tempfile::tempdir().unwrap();
    // Second terminal below the first: the declared order is false.
    let text = format!(
        "{}\n[noise]\natom = 1 @ 1\n[compare]\nterminal = w(0) - 1\ngenerator = jump_kernel(0)\n",
        CONSTANT.replace("terminal = 0", "terminal = w(0)").replace("constant_driver", "jump_kernel(0)")
    );
    let cfg = write(tmp.path(), "c.cfg", &text);
    let out = tmp.path().to_str().unwrap();
    assert_eq!(gbsde(&["compare", "--config", &cfg, "--out", out]).status.code(), Some(EXIT_OK));
    let o = gbsde(&["compare", "--config", &cfg, "--out", out, "--check"]);
    assert_eq!(o.status.code(), Some(EXIT_CHECK));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL order"));
}
