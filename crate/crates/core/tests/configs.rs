use std::path::PathBuf;

use gbsde::cli_reporting::{parse_config, Atom, ExperimentConfig};
use gbsde::{Diagnostic, Error};
use proptest::prelude::*;

fn shipped() -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "cfg"))
        .collect();
    v.sort();
    v
}

#[test]
fn every_shipped_config_round_trips() {
    let files = shipped();
    assert!(files.len() >= 5);
    for f in files {
        let text = std::fs::read_to_string(&f).unwrap();
        let cfg = parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", f.display()));
        let printed = cfg.to_string();
        let again = parse_config(&printed).unwrap();
        assert_eq!(again, cfg, "{}", f.display());
        assert_eq!(again.to_string(), printed);
    }
}

fn diags(text: &str) -> Vec<Diagnostic> {
    match parse_config(text) {
        Err(Error::Config(d)) => d,
        other => panic!("expected diagnostics, got {other:?}"),
    }
}

#[test]
fn empty_file_names_every_required_key() {
    let d = diags("");
    assert_eq!(d.len(), 6);
    assert!(d.iter().all(|d| d.line == 0 && d.message.starts_with("missing required key")));
}

#[test]
fn comments_and_blank_lines_are_ignored() {
    let text = "# header\n\n[experiment] # trailing\nseed = 1 # one\npaths = 4\n[grid]\nhorizon = 2\nsteps = 4\n[problem]\nterminal = w(0)\ngenerator = zero\n";
    let cfg = parse_config(text).unwrap();
    assert_eq!((cfg.seed, cfg.paths, cfg.horizon), (1, 4, 2.0));
}

fn base(seed: u64, paths: usize, horizon: f64, steps: usize, atoms: &[Atom], terminal: &str, generator: &str) -> String {
    let mut s = format!("[experiment]\nseed = {seed}\npaths = {paths}\n[grid]\nhorizon = {horizon}\nsteps = {steps}\n[noise]\n");
    for a in atoms {
        let m: Vec<String> = a.mark.iter().map(|x| x.to_string()).collect();
        s.push_str(&format!("atom = {} @ {}\n", m.join(" "), a.intensity));
    }
    s.push_str(&format!("[problem]\nterminal = {terminal}\ngenerator = {generator}\n"));
    s
}

fn atom() -> impl Strategy<Value = Atom> {
    (-3.0f64..3.0, 0.01f64..5.0).prop_map(|(m, l)| Atom { mark: vec![m], intensity: l })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_configs_round_trip(
        seed in any::<u64>(),
        paths in 2usize..100_000,
        horizon in 0.01f64..10.0,
        steps in 1usize..500,
        atoms in prop::collection::vec(atom(), 1..3),
        alpha in -2.0f64..2.0,
        damping in 0.01f64..1.0,
        terminal in prop::sample::select(vec!["w(0)", "sin(w(0)) + n(0)", "exp(-t)", "abs(w(0)) * 0.5", "1"]),
    ) {
        prop_assume!(atoms.len() < 2 || atoms[0].mark != atoms[1].mark);
        let gen = format!("linear({alpha}, 0.3, 0.2)");
        let text = format!("{}[solver]\ndamping = {damping}\ntruncation = 4.5\n", base(seed, paths, horizon, steps, &atoms, terminal, &gen));
        let cfg: ExperimentConfig = parse_config(&text).unwrap();
        let again = parse_config(&cfg.to_string()).unwrap();
        prop_assert_eq!(&again, &cfg);
        prop_assert_eq!(again.to_string(), cfg.to_string());
    }

    #[test]
    fn garbage_lines_are_reported_not_fatal(junk in "[a-z]{1,8}", line in 1usize..10) {
        let good = base(1, 10, 1.0, 5, &[], "w(0)", "zero");
        let mut lines: Vec<String> = good.lines().map(String::from).collect();
        let at = line.min(lines.len());
        lines.insert(at, junk.clone());
        let d = diags(&lines.join("\n"));
        prop_assert!(d.iter().any(|d| d.line == at + 1), "{:?}", d);
    }
}
