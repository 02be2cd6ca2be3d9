//! Verb implementations.

use super::csv::{field, num, Table};
use super::{Check, ExperimentConfig, RunReport, Verb};
use crate::backward_solver::{orthogonality_report, solve, DiscreteSolution};
use crate::comparison_harness::run_comparison;
use crate::error::{invalid, Result};
use crate::generator_model::integrability_report;
use crate::linear_oracle::{linear_y0, linear_y0_on, LinearCoefficients};
use crate::norms_estimates::apriori_ratio;
use crate::path_engine::{simulate, PathBundle, TimeGrid};
use crate::random_horizon::{horizon_extension, solve_random_horizon};
use crate::stats::MeanSe;

/// Standard errors allowed between an estimate and its reference.
const CHECK_SE: f64 = 3.0;

struct Out<'a> {
    cfg: &'a ExperimentConfig,
    files: Vec<(String, String)>,
    checks: Vec<Check>,
}

impl Out<'_> {
    fn file(&mut self, name: &str, table: Table) {
        self.files.push((name.to_string(), table.finish(self.cfg)));
    }

    fn summary(&mut self, name: &str, table: Table) {
        self.files.push((name.to_string(), table.finish_with_echo(self.cfg)));
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        self.checks.push(Check {
            name: name.to_string(),
            pass,
            detail,
        });
    }
}

/// Executes `verb`; errors carry the failing module's context.
pub fn run(verb: Verb, cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut out = Out {
        cfg,
        files: Vec::new(),
        checks: Vec::new(),
    };
    match verb {
        Verb::Simulate => run_simulate(&mut out)?,
        Verb::Solve => run_solve(&mut out)?,
        Verb::Oracle => run_oracle(&mut out)?,
        Verb::Compare => run_compare(&mut out)?,
        Verb::Estimate => run_estimate(&mut out)?,
        Verb::RandomHorizon => run_random_horizon(&mut out)?,
        Verb::Convergence => run_convergence(&mut out)?,
    }
    Ok(RunReport {
        verb,
        files: out.files,
        checks: out.checks,
    })
}

fn bundle(cfg: &ExperimentConfig, grid: TimeGrid) -> Result<PathBundle> {
    simulate(grid, &cfg.model()?, cfg.seed, cfg.paths)
}

fn run_simulate(out: &mut Out) -> Result<()> {
    let cfg = out.cfg;
    let b = bundle(cfg, cfg.grid()?)?;
    let (n, last, t) = (b.n_paths(), b.steps(), b.grid().horizon());
    out.files.push(("paths.csv".into(), Table::from_body(b.to_csv()).finish(cfg)));
    let mut table = Table::new(&["quantity", "mean", "se", "expected"]);
    let mut moments = Vec::new();
    for l in 0..b.brownian_dim() {
        let xs: Vec<f64> = (0..n).map(|p| b.brownian_at(p, last)[l]).collect();
        moments.push((format!("w{l}_T"), MeanSe::from_samples(&xs), Some(0.0)));
    }
    for (j, lam) in b.marks().intensities().iter().enumerate() {
        let xs: Vec<f64> = (0..n).map(|p| b.jump_counts_at(p, last)[j]).collect();
        moments.push((format!("n{j}_T"), MeanSe::from_samples(&xs), Some(lam * t)));
    }
    for l in 0..b.extra_dim() {
        let xs: Vec<f64> = (0..n).map(|p| b.extra_at(p, last)[l]).collect();
        moments.push((format!("b{l}_T"), MeanSe::from_samples(&xs), Some(0.0)));
    }
    let r: Vec<f64> = (0..n).map(|p| (0..last).map(|i| b.dr(p, i)).sum()).collect();
    moments.push(("r_T".into(), MeanSe::from_samples(&r), None));
    for (name, m, expected) in moments {
        table.row(&[name.clone(), num(m.mean), num(m.se), expected.map_or_else(String::new, num)]);
        if let Some(e) = expected {
            // Poisson counts with tiny λT can have zero sample variance.
            let ok = (m.mean - e).abs() <= 4.0 * m.se + 1e-12 || (m.se == 0.0 && (m.mean - e).abs() < 5.0 / (n as f64).sqrt());
            out.check(&format!("{name} moment"), ok, format!("mean {:.4e} vs {e} (se {:.2e})", m.mean, m.se));
        }
    }
    out.summary("simulate_summary.csv", table);
    Ok(())
}

fn warnings(sol: &DiscreteSolution) -> String {
    sol.warnings.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("; ")
}

fn solve_table(sol: &DiscreteSolution) -> Table {
    let mut t = Table::new(&["component", "y0", "se", "paths", "steps", "warnings"]);
    for (c, y) in sol.y0().iter().enumerate() {
        t.row(&[
            c.to_string(),
            num(y.mean),
            num(y.se),
            sol.n_paths().to_string(),
            sol.steps().to_string(),
            field(&warnings(sol)),
        ]);
    }
    t
}

fn run_solve(out: &mut Out) -> Result<()> {
    let cfg = out.cfg;
    let prob = cfg.problem()?;
    let b = bundle(cfg, cfg.grid()?)?;
    let integ = integrability_report(&prob, &b);
    out.check(
        "data integrability",
        integ.finite(),
        format!("E|xi|^p {:.3e}, E|f0|^p {:.3e}, E|R|^p {:.3e}", integ.xi.mean, integ.f0.mean, integ.r.mean),
    );
    let sol = solve(&prob, &b, &cfg.solver)?;
    out.files.push(("solution.csv".into(), Table::from_body(sol.to_csv()).finish(cfg)));
    out.summary("solve_summary.csv", solve_table(&sol));
    out.check("y0 finite", sol.y0().iter().all(MeanSe::is_finite), format!("{:?}", sol.y0().iter().map(|m| m.mean).collect::<Vec<_>>()));
    let orth = orthogonality_report(&sol, &b);
    out.check(
        "orthogonality",
        orth.covariations_within(CHECK_SE),
        format!("worst |cov|/se = {:.3}", orth.worst_z_score()),
    );
    Ok(())
}

fn oracle_grid(cfg: &ExperimentConfig) -> Result<TimeGrid> {
    let steps = cfg.oracle.as_ref().and_then(|o| o.steps).unwrap_or(cfg.steps);
    TimeGrid::new(cfg.horizon, steps)
}

fn oracle_estimate(cfg: &ExperimentConfig, c: &LinearCoefficients) -> Result<MeanSe> {
    let o = cfg.oracle.as_ref().ok_or_else(|| invalid("oracle", "the config has no [oracle] section"))?;
    linear_y0(c, oracle_grid(cfg)?, &cfg.model()?, o.paths, o.seed)
}

fn run_oracle(out: &mut Out) -> Result<()> {
    let cfg = out.cfg;
    let c = cfg.linear_coefficients()?;
    let est = oracle_estimate(cfg, &c)?;
    let o = cfg.oracle.as_ref().expect("checked by oracle_estimate");
    let mut t = Table::new(&["y0", "se", "paths", "steps", "alpha", "beta", "gamma", "forcing", "terminal", "r"]);
    let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    let forcing = match &c.forcing {
        crate::path_engine::RateFn::Constant(f) => f.to_string(),
        _ => "custom".into(),
    };
    t.row(&[
        num(est.mean),
        num(est.se),
        o.paths.to_string(),
        oracle_grid(cfg)?.steps().to_string(),
        c.alpha.to_string(),
        list(&c.beta),
        list(&c.gamma),
        forcing,
        field(&c.terminal.to_string()),
        field(&c.r_spec.to_string()),
    ]);
    out.summary("oracle.csv", t);

    let prob = cfg.problem()?;
    let sol = solve(&prob, &bundle(cfg, cfg.grid()?)?, &cfg.solver)?;
    let s = sol.y0()[0];
    let tol = CHECK_SE * (s.se * s.se + est.se * est.se).sqrt();
    let diff = (s.mean - est.mean).abs();
    let mut t = Table::new(&["solver_y0", "solver_se", "oracle_y0", "oracle_se", "abs_diff", "tol"]);
    t.row(&[num(s.mean), num(s.se), num(est.mean), num(est.se), num(diff), num(tol)]);
    out.file("oracle_vs_solver.csv", t);
    out.check("solver vs oracle", diff <= tol, format!("|diff| {diff:.3e} vs tol {tol:.3e}"));
    Ok(())
}

fn run_compare(out: &mut Out) -> Result<()> {
    let cfg = out.cfg;
    let b = bundle(cfg, cfg.grid()?)?;
    let mut summary = Table::new(&["case", "gap0", "se", "tol", "max_positive_part", "structural_fraction", "passed"]);
    for case in cfg.comparison_cases()? {
        let rep = run_comparison(&case, &b, &cfg.solver)?;
        out.file(&format!("compare_{}.csv", case.label), Table::from_body(rep.to_csv()));
        summary.row(&[
            field(&case.label),
            num(rep.gap0.mean),
            num(rep.gap0.se),
            num(rep.tol),
            num(rep.max_positive),
            num(rep.structural_fraction()),
            rep.passed().to_string(),
        ]);
        out.check(
            &format!("order {}", case.label),
            rep.passed(),
            format!("{} structural of {} points, max positive part {:.3e}", rep.structural, rep.points, rep.max_positive),
        );
    }
    out.summary("compare_summary.csv", summary);
    Ok(())
}

fn run_estimate(out: &mut Out) -> Result<()> {
    let cfg = out.cfg;
    let prob = cfg.problem()?;
    let b = bundle(cfg, cfg.grid()?)?;
    let sol = solve(&prob, &b, &cfg.solver)?;
    let (p, a) = cfg.estimate_params(&prob);
    let (report, ratio) = apriori_ratio(&sol, &prob, &b, p, a)?;
    out.file("estimate.csv", Table::from_body(report.to_csv()));
    let mut t = Table::new(&["p", "a", "lhs", "lhs_se", "rhs", "rhs_se", "ratio", "violation"]);
    t.row(&[
        p.to_string(),
        a.to_string(),
        num(ratio.lhs.mean),
        num(ratio.lhs.se),
        num(ratio.rhs.mean),
        num(ratio.rhs.se),
        num(ratio.ratio),
        ratio.violation.to_string(),
    ]);
    out.summary("estimate_ratio.csv", t);
    out.check("norms finite", report.is_finite(), format!("p = {p}, a = {a}"));
    out.check(
        "a-priori ratio",
        ratio.ratio.is_finite() && !ratio.violation,
        format!("ratio {:.4e}", ratio.ratio),
    );
    Ok(())
}

fn run_random_horizon(out: &mut Out) -> Result<()> {
    let cfg = out.cfg;
    let prob = cfg.problem()?;
    let spec = cfg
        .stopping_spec(&prob)?
        .ok_or_else(|| invalid("stopping", "the config has no [stopping] section"))?;
    let caps = cfg.stopping.as_ref().map(|s| s.caps.clone()).unwrap_or_default();
    let b = bundle(cfg, cfg.grid()?)?;
    let hsol = solve_random_horizon(&prob, &spec, &b, &cfg.solver)?;
    let ext = horizon_extension(&prob, &spec, &b, &cfg.solver, &caps)?;
    out.file("horizon.csv", Table::from_body(ext.to_csv()));
    let (y, tau) = (hsol.solution.y0()[0], hsol.mean_tau());
    let mut t = Table::new(&["cap", "y0", "se", "mean_tau", "tau_se", "frozen"]);
    t.row(&[
        spec.cap.to_string(),
        num(y.mean),
        num(y.se),
        num(tau.mean),
        num(tau.se),
        hsol.frozen_exactly().to_string(),
    ]);
    out.summary("horizon_summary.csv", t);
    out.check("freeze after tau", hsol.frozen_exactly(), format!("mean tau {:.4}", tau.mean));
    out.check(
        "cap decrements nonincreasing",
        ext.nonincreasing(),
        format!("{:?}", ext.decrements.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>()),
    );
    Ok(())
}

fn run_convergence(out: &mut Out) -> Result<()> {
    let cfg = out.cfg;
    let list = cfg
        .convergence
        .clone()
        .ok_or_else(|| invalid("convergence", "the config has no [convergence] section"))?;
    let c = cfg.linear_coefficients()?;
    let prob = cfg.problem()?;
    // Every grid sees the same paths, so the error column is not masked by
    // independent Monte-Carlo noise between rows.
    let finest = list.iter().copied().max().unwrap_or(cfg.steps);
    let model = cfg.model()?.with_r(prob.r_spec.clone());
    let fine = simulate(TimeGrid::new(cfg.horizon, finest)?, &model, cfg.seed, cfg.paths)?;
    let oracle = linear_y0_on(&c, &fine)?;
    let mut t = Table::new(&["steps", "y0", "se", "abs_error"]);
    let mut errs = Vec::with_capacity(list.len());
    for &n in &list {
        let sol = solve(&prob, &fine.coarsen(finest / n)?, &cfg.solver)?;
        let y = sol.y0()[0];
        let err = (y.mean - oracle.mean).abs();
        errs.push(((n as f64).ln(), err));
        t.row(&[n.to_string(), num(y.mean), num(y.se), num(err)]);
    }
    t.row(&["oracle".into(), num(oracle.mean), num(oracle.se), String::new()]);
    out.summary("convergence.csv", t);
    let slope = log_slope(&errs);
    out.check("error trend", slope < 0.0, format!("log-log slope {slope:.3}"));
    Ok(())
}

/// Least-squares slope of `ln err` against `ln N`.
fn log_slope(pts: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = pts.iter().map(|&(x, e)| (x, e.max(1e-300).ln())).collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
