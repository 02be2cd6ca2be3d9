use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use gbsde::cli_reporting::{error_code, exit_code, load_config, run, Verb, EXIT_CHECK};

/// Runs one experiment verb on a config and writes its CSV reports.
#[derive(Debug, Parser)]
#[command(name = "gbsde", version)]
struct Args {
    /// simulate, solve, oracle, compare, estimate, random-horizon or convergence
    #[arg(value_parser = parse_verb)]
    verb: Verb,
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config path count.
    #[arg(long)]
    paths: Option<usize>,
    /// Report directory (default: the config's `out`, else `out`).
    #[arg(long)]
    out: Option<String>,
    /// Exit nonzero when a built-in check fails.
    #[arg(long)]
    check: bool,
}

fn parse_verb(s: &str) -> Result<Verb, String> {
    s.parse().map_err(|e: gbsde::Error| e.to_string())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match load_config(&args.config, args.seed, args.paths, args.out.clone()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("gbsde: {}: {e}", args.config.display());
            return ExitCode::from(error_code(&e) as u8);
        }
    };
    let outcome = run(args.verb, &cfg);
    let dir = PathBuf::from(cfg.out.as_deref().unwrap_or("out"));
    match &outcome {
        Ok(report) => {
            if let Err(e) = report.write_to(&dir) {
                eprintln!("gbsde: writing {}: {e}", dir.display());
                return ExitCode::from(error_code(&e) as u8);
            }
            for (name, _) in &report.files {
                println!("wrote {}", dir.join(name).display());
            }
            for c in &report.checks {
                println!("{c}");
            }
        }
        Err(e) => eprintln!("gbsde {}: {e}", args.verb),
    }
    let code = exit_code(&outcome, args.check);
    if code == EXIT_CHECK {
        eprintln!("gbsde {}: checks failed", args.verb);
    }
    ExitCode::from(code as u8)
}
