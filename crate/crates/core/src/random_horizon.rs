//! Random terminal times: exit of a state coordinate from an interval,
//! capped at a finite horizon, with the solution frozen from `τ` on.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::backward_solver::{solve_stopped, DiscreteSolution, SolverConfig};
use crate::error::invalid;
use crate::generator_model::GbsdeProblem;
use crate::norms_estimates::{alpha_p, finite_ratio, solution_norms, NormReport, Ratio};
use crate::par;
use crate::path_engine::{mix_seed, path_rng, PathBundle, TimeGrid};
use crate::stats::MeanSe;
use crate::{Error, Result};

const BRIDGE_TAG: u64 = 0x6272_6964_6765;

/// Region the state must stay in; `τ` is the first exit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    Whole,
    Empty,
    /// Open interval `(lo, hi)` on one coordinate of the full state vector.
    Interval { coord: usize, lo: f64, hi: f64 },
}

impl Domain {
    fn contains(&self, state: &[f64]) -> bool {
        match *self {
            Domain::Whole => true,
            Domain::Empty => false,
            Domain::Interval { coord, lo, hi } => {
                let x = state[coord];
                x > lo && x < hi
            }
        }
    }

    /// Is `other` a superset of `self`?
    pub fn within(&self, other: &Domain) -> bool {
        match (self, other) {
            (Domain::Empty, _) | (_, Domain::Whole) => true,
            (Domain::Interval { coord: a, lo: l1, hi: h1 }, Domain::Interval { coord: b, lo: l2, hi: h2 }) => a == b && l2 <= l1 && h1 <= h2,
            _ => false,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Whole => write!(f, "whole"),
            Domain::Empty => write!(f, "empty"),
            Domain::Interval { coord, lo, hi } => write!(f, "interval({coord}, {lo}, {hi})"),
        }
    }
}

fn call_args<'a>(s: &'a str, name: &str) -> Option<Vec<&'a str>> {
    let rest = s.strip_prefix(name)?.trim_start();
    let inner = rest.strip_prefix('(')?.strip_suffix(')')?;
    Some(inner.split(',').map(str::trim).collect())
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "whole" => return Ok(Domain::Whole),
            "empty" => return Ok(Domain::Empty),
            _ => {}
        }
        let bad = || invalid("domain", format!("expected whole, empty or interval(coord, lo, hi), got `{s}`"));
        let args = call_args(s, "interval").ok_or_else(bad)?;
        if args.len() != 3 {
            return Err(bad());
        }
        let coord = args[0].parse().map_err(|_| bad())?;
        let lo: f64 = args[1].parse().map_err(|_| bad())?;
        let hi: f64 = args[2].parse().map_err(|_| bad())?;
        if !(lo < hi) {
            return Err(invalid("domain", "interval needs lo < hi"));
        }
        Ok(Domain::Interval { coord, lo, hi })
    }
}

/// How exits between grid nodes are detected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Monitoring {
    /// Only the node values are checked.
    Discrete,
    /// Also flags an exit between two interior nodes with the Brownian
    /// bridge crossing probability for a coordinate of volatility `vol`.
    BridgeCorrected { vol: f64 },
}

impl fmt::Display for Monitoring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Monitoring::Discrete => write!(f, "discrete"),
            Monitoring::BridgeCorrected { vol } => write!(f, "bridge({vol})"),
        }
    }
}

impl FromStr for Monitoring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "discrete" {
            return Ok(Monitoring::Discrete);
        }
        let bad = || invalid("monitoring", format!("expected discrete or bridge(vol), got `{s}`"));
        let args = call_args(s, "bridge").ok_or_else(bad)?;
        let vol: f64 = match args.as_slice() {
            [v] => v.parse().map_err(|_| bad())?,
            _ => return Err(bad()),
        };
        if !(vol > 0.0 && vol.is_finite()) {
            return Err(invalid("monitoring", "bridge volatility must be positive"));
        }
        Ok(Monitoring::BridgeCorrected { vol })
    }
}

/// `ν = µ + 2 p L² / α_p`.
pub fn nu(prob: &GbsdeProblem) -> Result<f64> {
    let g = &prob.generator;
    Ok(g.mu + 2.0 * prob.p * g.lipschitz().powi(2) / alpha_p(prob.p)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoppingSpec {
    pub domain: Domain,
    pub cap: f64,
    pub rho: f64,
    pub monitoring: Monitoring,
}

impl StoppingSpec {
    /// Rejects a non-finite cap and `ρ ≤ ν` for `prob`.
    pub fn new(domain: Domain, cap: f64, rho: f64, monitoring: Monitoring, prob: &GbsdeProblem) -> Result<Self> {
        if !(cap > 0.0 && cap.is_finite()) {
            return Err(invalid("cap", "the horizon cap must be finite and positive"));
        }
        let s = StoppingSpec {
            domain,
            cap,
            rho,
            monitoring,
        };
        s.check_weight(prob)?;
        Ok(s)
    }

    pub fn check_weight(&self, prob: &GbsdeProblem) -> Result<()> {
        let nu = nu(prob)?;
        if !(self.rho > nu) {
            return Err(invalid("rho", format!("need rho > nu = {nu}, got {}", self.rho)));
        }
        Ok(())
    }

    pub fn with_cap(&self, cap: f64) -> Self {
        StoppingSpec { cap, ..self.clone() }
    }

    /// Grid node of the cap; the grid must reach it.
    pub fn cap_index(&self, grid: &TimeGrid) -> Result<usize> {
        let idx = (self.cap / grid.h()).round() as usize;
        if idx > grid.steps() || ((idx as f64) * grid.h() - self.cap).abs() > 1e-9 * self.cap.max(1.0) {
            return Err(invalid(
                "cap",
                format!("cap {} is not a node of a grid with horizon {} and step {}", self.cap, grid.horizon(), grid.h()),
            ));
        }
        Ok(idx)
    }
}

fn crossing_probability(domain: &Domain, x0: f64, x1: f64, var: f64) -> f64 {
    match *domain {
        Domain::Interval { lo, hi, .. } => {
            let up = (-2.0 * (hi - x0) * (hi - x1) / var).exp();
            let down = (-2.0 * (x0 - lo) * (x1 - lo) / var).exp();
            1.0 - (1.0 - up) * (1.0 - down)
        }
        _ => 0.0,
    }
}

/// First node outside the domain, else the cap node.
pub fn detect_tau(bundle: &PathBundle, spec: &StoppingSpec) -> Result<Vec<usize>> {
    let grid = bundle.grid();
    let cap = spec.cap_index(grid)?;
    if let Domain::Interval { coord, .. } = spec.domain {
        if coord >= bundle.model().state_dim() {
            return Err(invalid("domain", format!("coordinate {coord} outside a state of size {}", bundle.model().state_dim())));
        }
    }
    let h = grid.h();
    let seed = mix_seed(bundle.seed(), BRIDGE_TAG);
    Ok(par::map_indices(bundle.n_paths(), |p| {
        let mut rng = path_rng(seed, p);
        for i in 0..cap {
            let x = bundle.state(p, i);
            if !spec.domain.contains(x) {
                return i;
            }
            if let (Monitoring::BridgeCorrected { vol }, Domain::Interval { coord, .. }) = (spec.monitoring, spec.domain) {
                // one uniform per step, drawn unconditionally, keeps τ monotone in the domain
                let u: f64 = rng.random();
                let next = bundle.state(p, i + 1);
                if spec.domain.contains(next) && u < crossing_probability(&spec.domain, x[coord], next[coord], vol * vol * h) {
                    return i + 1;
                }
            }
        }
        cap
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSolution {
    pub solution: DiscreteSolution,
    pub tau: Vec<usize>,
    pub cap_index: usize,
}

impl HorizonSolution {
    /// `Y = ξ` and `Z = V = ΔM = 0` bit-exact on and after `τ`.
    pub fn frozen_exactly(&self) -> bool {
        let s = &self.solution;
        (0..s.n_paths()).all(|p| {
            let t = self.tau[p];
            (t..=s.steps()).all(|i| s.y(p, i) == s.xi(p))
                && (t..s.steps()).all(|i| s.z(p, i).iter().chain(s.v(p, i)).chain(s.dm(p, i)).all(|x| *x == 0.0))
        })
    }

    pub fn mean_tau(&self) -> MeanSe {
        let h = self.solution.grid().h();
        let xs: Vec<f64> = self.tau.iter().map(|&i| i as f64 * h).collect();
        MeanSe::from_samples(&xs)
    }
}

/// Solves with `ξ` taken at the stopped state and `f`, `dR` switched off after `τ`.
pub fn solve_random_horizon(prob: &GbsdeProblem, spec: &StoppingSpec, bundle: &PathBundle, cfg: &SolverConfig) -> Result<HorizonSolution> {
    spec.check_weight(prob)?;
    let tau = detect_tau(bundle, spec)?;
    let solution = solve_stopped(prob, bundle, cfg, Some(&tau))?;
    Ok(HorizonSolution {
        solution,
        tau,
        cap_index: spec.cap_index(bundle.grid())?,
    })
}

/// Conditional expectation of `ξ` along the paths: the same stopped solve
/// with the driver and forcing removed.
pub fn xi_proxy(prob: &GbsdeProblem, spec: &StoppingSpec, bundle: &PathBundle, cfg: &SolverConfig) -> Result<HorizonSolution> {
    let bare = GbsdeProblem::new(
        prob.terminal.clone(),
        crate::generator_model::zero(prob.dim()),
        crate::path_engine::RSpec::Zero,
    )?
    .with_p(prob.p)?;
    let tau = detect_tau(bundle, spec)?;
    let solution = solve_stopped(&bare, bundle, cfg, Some(&tau))?;
    Ok(HorizonSolution {
        solution,
        tau,
        cap_index: spec.cap_index(bundle.grid())?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtensionReport {
    pub caps: Vec<f64>,
    pub y0: Vec<MeanSe>,
    /// `‖Y^{(c_{j+1})} − Y^{(c_j)}‖` on the common paths.
    pub decrements: Vec<f64>,
}

impl ExtensionReport {
    pub fn nonincreasing(&self) -> bool {
        self.decrements.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("cap,y0,se,decrement\n");
        for (j, (c, y)) in self.caps.iter().zip(&self.y0).enumerate() {
            let d = if j == 0 { String::new() } else { format!("{:e}", self.decrements[j - 1]) };
            s.push_str(&format!("{c},{:e},{:e},{d}\n", y.mean, y.se));
        }
        s
    }
}

/// `[c, 2c, 4c]`.
pub fn doubling_caps(base: f64) -> Vec<f64> {
    vec![base, 2.0 * base, 4.0 * base]
}

/// Re-solves with each cap on one bundle (whose grid must reach the
/// largest cap) and reports the decrements between consecutive caps.
pub fn horizon_extension(prob: &GbsdeProblem, spec: &StoppingSpec, bundle: &PathBundle, cfg: &SolverConfig, caps: &[f64]) -> Result<ExtensionReport> {
    if caps.is_empty() || caps.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("caps", "need an increasing, nonempty list of caps"));
    }
    let sols = caps
        .iter()
        .map(|&c| solve_random_horizon(prob, &spec.with_cap(c), bundle, cfg))
        .collect::<Result<Vec<_>>>()?;
    let decrements = sols.windows(2).map(|w| w[1].solution.s2_distance(&w[0].solution)).collect();
    Ok(ExtensionReport {
        caps: caps.to_vec(),
        y0: sols.iter().map(|s| s.solution.y0()[0]).collect(),
        decrements,
    })
}

/// Norm functionals with weight `e^{ρ(s∧τ)}`; rejects `ρ ≤ ν`.
pub fn weighted_norm_report(hsol: &HorizonSolution, prob: &GbsdeProblem, bundle: &PathBundle, p: f64, rho: f64) -> Result<(NormReport, Ratio)> {
    let nu = nu(&prob.clone().with_p(p)?)?;
    if !(rho > nu) {
        return Err(invalid("rho", format!("need rho > nu = {nu}, got {rho}")));
    }
    finite_ratio(solution_norms(&hsol.solution, prob, bundle, p, rho, false)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backward_solver::solve;
    use crate::generator_model::{linear, zero, Terminal};
    use crate::mark_space::MarkSpace;
    use crate::norms_estimates::compute_norms;
    use crate::path_engine::{simulate, NoiseModel, RSpec, RateFn};
    use rand_distr::StandardNormal;

    fn interval() -> Domain {
        Domain::Interval { coord: 0, lo: -1.0, hi: 1.0 }
    }

    fn prob(xi: &str) -> GbsdeProblem {
        GbsdeProblem::new(Terminal::parse(xi).unwrap(), zero(1), RSpec::Zero).unwrap()
    }

    fn spec(domain: Domain, cap: f64, mon: Monitoring) -> StoppingSpec {
        StoppingSpec::new(domain, cap, 0.5, mon, &prob("1")).unwrap()
    }

    fn bm(horizon: f64, steps: usize, n: usize, seed: u64) -> PathBundle {
        simulate(TimeGrid::new(horizon, steps).unwrap(), &NoiseModel::brownian(1), seed, n).unwrap()
    }

    // fine-grid exit of a standard Brownian motion from (−1, 1), bridge-corrected
    fn fine_exit_oracle(cap: f64, h: f64, n: usize, seed: u64) -> (MeanSe, MeanSe) {
        let steps = (cap / h).round() as usize;
        let mut taus = Vec::with_capacity(n);
        for p in 0..n {
            let mut rng = path_rng(seed, p);
            let mut x = 0.0f64;
            let mut tau = cap;
            for i in 0..steps {
                let z: f64 = rng.sample(StandardNormal);
                let u: f64 = rng.random();
                let nx = x + h.sqrt() * z;
                let hit_node = nx.abs() >= 1.0;
                let p_up = (-2.0 * (1.0 - x) * (1.0 - nx) / h).exp();
                let p_dn = (-2.0 * (x + 1.0) * (nx + 1.0) / h).exp();
                if hit_node || u < 1.0 - (1.0 - p_up) * (1.0 - p_dn) {
                    tau = (i + 1) as f64 * h;
                    break;
                }
                x = nx;
            }
            taus.push(tau);
        }
        let e: Vec<f64> = taus.iter().map(|t| (-t).exp()).collect();
        (MeanSe::from_samples(&taus), MeanSe::from_samples(&e))
    }

    #[test]
    fn parse_roundtrip() {
        for d in [Domain::Whole, Domain::Empty, interval()] {
            assert_eq!(d.to_string().parse::<Domain>().unwrap(), d);
        }
        assert!("interval(0, 1, -1)".parse::<Domain>().is_err());
        assert!("box".parse::<Domain>().is_err());
        for m in [Monitoring::Discrete, Monitoring::BridgeCorrected { vol: 1.5 }] {
            assert_eq!(m.to_string().parse::<Monitoring>().unwrap(), m);
        }
        assert!("bridge(-1)".parse::<Monitoring>().is_err());
    }

    #[test]
    fn degenerate_domains() {
        let b = bm(2.0, 20, 50, 1);
        let whole = detect_tau(&b, &spec(Domain::Whole, 1.0, Monitoring::Discrete)).unwrap();
        assert!(whole.iter().all(|&t| t == 10));
        let empty = detect_tau(&b, &spec(Domain::Empty, 1.0, Monitoring::Discrete)).unwrap();
        assert!(empty.iter().all(|&t| t == 0));
        assert!(detect_tau(&b, &spec(Domain::Whole, 3.0, Monitoring::Discrete)).is_err());
        assert!(detect_tau(&b, &spec(Domain::Whole, 1.05, Monitoring::Discrete)).is_err());
    }

    #[test]
    fn tau_monotone_in_domain() {
        let b = bm(4.0, 200, 500, 2);
        for mon in [Monitoring::Discrete, Monitoring::BridgeCorrected { vol: 1.0 }] {
            let small = detect_tau(&b, &spec(interval(), 4.0, mon)).unwrap();
            let big = detect_tau(&b, &spec(Domain::Interval { coord: 0, lo: -1.5, hi: 1.2 }, 4.0, mon)).unwrap();
            assert!(small.iter().zip(&big).all(|(a, c)| a <= c));
        }
        assert!(interval().within(&Domain::Interval { coord: 0, lo: -1.5, hi: 1.2 }));
        assert!(Domain::Empty.within(&interval()) && interval().within(&Domain::Whole));
    }

    #[test]
    fn exit_time_against_fine_grid() {
        let (oracle_tau, _) = fine_exit_oracle(4.0, 1e-3, 20_000, 0x0ac1e);
        let b = bm(4.0, 400, 20_000, 3);
        let tau = detect_tau(&b, &spec(interval(), 4.0, Monitoring::BridgeCorrected { vol: 1.0 })).unwrap();
        let xs: Vec<f64> = tau.iter().map(|&i| i as f64 * 0.01).collect();
        let est = MeanSe::from_samples(&xs);
        let se = (est.se.powi(2) + oracle_tau.se.powi(2)).sqrt();
        assert!((est.mean - oracle_tau.mean).abs() <= 3.0 * se, "{est:?} vs {oracle_tau:?}");
    }

    #[test]
    fn laplace_transform_of_exit() {
        let b = bm(4.0, 400, 20_000, 4);
        let p = prob("exp(-t)");
        let s = spec(interval(), 4.0, Monitoring::BridgeCorrected { vol: 1.0 });
        let h = solve_random_horizon(&p, &s, &b, &SolverConfig::default()).unwrap();
        assert!(h.frozen_exactly());
        // E e^{−τ} = 1 / cosh(√2) for the exit of (−1, 1) from 0; the cap at 4 moves it by < 3e-4
        let want = 1.0 / 2f64.sqrt().cosh();
        let y0 = h.solution.y0()[0];
        assert!((y0.mean - want).abs() <= 3.0 * y0.se + 3e-4, "{y0:?} vs {want}");
    }

    #[test]
    fn constant_terminal_stays_constant() {
        let b = bm(2.0, 40, 300, 5);
        let s = spec(interval(), 2.0, Monitoring::Discrete);
        let h = solve_random_horizon(&prob("1"), &s, &b, &SolverConfig::default()).unwrap();
        for p in 0..300 {
            for i in 0..=40 {
                assert!((h.solution.y(p, i)[0] - 1.0).abs() < 1e-12);
            }
        }
        assert!(h.frozen_exactly());
    }

    #[test]
    fn whole_domain_matches_fixed_horizon() {
        let ms = MarkSpace::single(1.0, 1.0).unwrap();
        let m = NoiseModel::brownian(1).with_marks(ms.clone());
        let b = simulate(TimeGrid::new(1.0, 10).unwrap(), &m, 6, 500).unwrap();
        let g = linear(-0.5, vec![0.3], vec![0.2], &ms, RateFn::Constant(1.0)).unwrap();
        let p = GbsdeProblem::new(Terminal::parse("sin(w(0)) + n(0)").unwrap(), g, RSpec::Zero).unwrap();
        let s = StoppingSpec::new(Domain::Whole, 1.0, 2.0, Monitoring::Discrete, &p).unwrap();
        let h = solve_random_horizon(&p, &s, &b, &SolverConfig::default()).unwrap();
        let fixed = solve(&p, &b, &SolverConfig::default()).unwrap();
        assert_eq!(h.solution, fixed);
        let (wr, _) = weighted_norm_report(&h, &p, &b, 2.0, 2.0).unwrap();
        let cr = compute_norms(&fixed, &p, &b, 2.0, 2.0).unwrap();
        assert_eq!(wr.entries().map(|e| e.1.moment), cr.entries().map(|e| e.1.moment));
    }

    #[test]
    fn weight_below_nu_rejected() {
        let ms = MarkSpace::single(1.0, 1.0).unwrap();
        let g = linear(0.5, vec![1.0], vec![0.0], &ms, RateFn::Constant(0.0)).unwrap();
        let p = GbsdeProblem::new(Terminal::parse("1").unwrap(), g, RSpec::Zero).unwrap();
        // ν = 0.5 + 2·2·1/(2/3) = 6.5
        assert!((nu(&p).unwrap() - 6.5).abs() < 1e-12);
        assert!(StoppingSpec::new(Domain::Whole, 1.0, 6.5, Monitoring::Discrete, &p).is_err());
        assert!(StoppingSpec::new(Domain::Whole, 1.0, 6.6, Monitoring::Discrete, &p).is_ok());
        assert!(StoppingSpec::new(Domain::Whole, f64::INFINITY, 7.0, Monitoring::Discrete, &p).is_err());
    }

    #[test]
    fn zero_data_norms_vanish() {
        let b = bm(1.0, 10, 100, 7);
        let p = prob("0");
        let s = spec(interval(), 1.0, Monitoring::Discrete);
        let h = solve_random_horizon(&p, &s, &b, &SolverConfig::default()).unwrap();
        let (rep, r) = weighted_norm_report(&h, &p, &b, 2.0, 0.5).unwrap();
        assert!(rep.entries().iter().all(|(_, f)| f.moment.mean == 0.0));
        assert_eq!(r.ratio, 0.0);
    }

    #[test]
    fn cauchy_decrements_shrink() {
        let b = bm(4.0, 200, 4000, 8);
        let p = prob("exp(-t)");
        let s = spec(interval(), 1.0, Monitoring::BridgeCorrected { vol: 1.0 });
        let rep = horizon_extension(&p, &s, &b, &SolverConfig::default(), &doubling_caps(1.0)).unwrap();
        assert_eq!(rep.decrements.len(), 2);
        assert!(rep.nonincreasing(), "{rep:?}");
        assert!(horizon_extension(&p, &s, &b, &SolverConfig::default(), &[2.0, 1.0]).is_err());
        assert_eq!(rep.to_csv().lines().count(), 4);
    }

    #[test]
    fn xi_proxy_ignores_driver() {
        let b = bm(1.0, 20, 200, 9);
        let ms = MarkSpace::empty();
        let g = linear(-1.0, vec![0.5], vec![], &ms, RateFn::Constant(2.0)).unwrap();
        let p = GbsdeProblem::new(Terminal::parse("exp(-t)").unwrap(), g, RSpec::Zero).unwrap();
        let s = StoppingSpec::new(interval(), 1.0, 1.0, Monitoring::Discrete, &p).unwrap();
        let a = xi_proxy(&p, &s, &b, &SolverConfig::default()).unwrap();
        let c = solve_random_horizon(&prob("exp(-t)"), &s, &b, &SolverConfig::default()).unwrap();
        assert_eq!(a.solution.y0(), c.solution.y0());
    }
}
