//! Experiment runner behind the `gbsde` binary.
//!
//! [`parse_config`] reads a config, [`run`] executes one verb and returns
//! its CSV files plus the outcome of the built-in checks, and
//! [`exit_code`] maps the outcome onto the process status.

mod config;
mod csv;
mod run;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub use config::{
    parse_config, Atom, CompareSection, EstimateSection, ExperimentConfig, NoiseSection, OracleSection, ProblemSection,
    StoppingSection,
};
pub use csv::config_hash;
pub use run::run;

use crate::error::{invalid, Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_CHECK: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    Simulate,
    Solve,
    Oracle,
    Compare,
    Estimate,
    RandomHorizon,
    Convergence,
}

impl Verb {
    pub const ALL: [Verb; 7] = [
        Verb::Simulate,
        Verb::Solve,
        Verb::Oracle,
        Verb::Compare,
        Verb::Estimate,
        Verb::RandomHorizon,
        Verb::Convergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Verb::Simulate => "simulate",
            Verb::Solve => "solve",
            Verb::Oracle => "oracle",
            Verb::Compare => "compare",
            Verb::Estimate => "estimate",
            Verb::RandomHorizon => "random-horizon",
            Verb::Convergence => "convergence",
        }
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Verb {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Verb::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| invalid("verb", format!("unknown verb `{s}`")))
    }
}

/// One built-in assertion evaluated by a verb.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

/// Files produced by a verb, each already terminated by its hash line.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub verb: Verb,
    pub files: Vec<(String, String)>,
    pub checks: Vec<Check>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, s)| s.as_str())
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, body) in &self.files {
            std::fs::write(dir.join(name), body)?;
        }
        Ok(())
    }
}

/// Process status for a finished run; check failures only count with `check`.
pub fn exit_code(outcome: &Result<RunReport>, check: bool) -> i32 {
    match outcome {
        Ok(r) if check && !r.passed() => EXIT_CHECK,
        Ok(_) => EXIT_OK,
        Err(e) => error_code(e),
    }
}

pub fn error_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_SOLVER,
    }
}

/// Reads and parses a config file, then applies the overrides.
pub fn load_config(path: &Path, seed: Option<u64>, paths: Option<usize>, out: Option<String>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg = parse_config(&text)?.with_overrides(seed, paths, out);
    Ok(parse_config(&cfg.to_string())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verbs_round_trip_through_names() {
        for v in Verb::ALL {
            assert_eq!(v.name().parse::<Verb>().unwrap(), v);
        }
        assert!("plot".parse::<Verb>().is_err());
    }

    #[test]
    fn exit_codes_are_distinct() {
        let io: Result<RunReport> = Err(Error::Io(std::io::Error::other("x")));
        let cfg: Result<RunReport> = Err(Error::Config(vec![]));
        let solver: Result<RunReport> = Err(Error::MissingKernel);
        let failing = Ok(RunReport {
            verb: Verb::Solve,
            files: vec![],
            checks: vec![Check {
                name: "c".into(),
                pass: false,
                detail: String::new(),
            }],
        });
        let codes = [
            exit_code(&io, true),
            exit_code(&cfg, true),
            exit_code(&solver, true),
            exit_code(&failing, true),
        ];
        assert_eq!(codes, [EXIT_IO, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK]);
        assert_eq!(exit_code(&failing, false), EXIT_OK);
    }
}
