//! Scalar comparison experiments on common random numbers.
//!
//! Two problems are solved on one bundle and the pathwise order of the
//! solutions is checked against the declared order of the data.

use crate::backward_solver::{solve, DiscreteSolution, SolverConfig};
use crate::error::check_len;
use crate::generator_model::{
    audit_kernel, constant_driver, evaluate, jump_kernel, linear, monotone_cubic, AuditReport, AuditSampler, GbsdeProblem, StateLayout,
    Terminal, TerminalView,
};
use crate::mark_space::MarkSpace;
use crate::par;
use crate::path_engine::{NoiseModel, PathBundle, RSpec, RateFn};
use crate::stats::MeanSe;
use crate::{Error, Result};

/// Which data components are declared ordered (`first ≤ second`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ordering {
    pub xi: bool,
    pub f: bool,
    pub r: bool,
}

impl Ordering {
    pub const ALL: Ordering = Ordering { xi: true, f: true, r: true };
}

#[derive(Debug, Clone)]
pub struct ComparisonCase {
    pub label: String,
    pub first: GbsdeProblem,
    pub second: GbsdeProblem,
    pub declared: Ordering,
}

impl ComparisonCase {
    /// Both problems scalar; the second generator must carry a kernel.
    pub fn new(label: impl Into<String>, first: GbsdeProblem, second: GbsdeProblem) -> Result<Self> {
        check_len("comparison first problem", 1, first.dim())?;
        check_len("comparison second problem", 1, second.dim())?;
        if second.generator.kernel.is_none() {
            return Err(Error::MissingKernel);
        }
        Ok(ComparisonCase {
            label: label.into(),
            first,
            second,
            declared: Ordering::ALL,
        })
    }
}

/// Smallest slack `second − first` over the checked points.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderCheck {
    pub min_slack: f64,
    pub checked: usize,
    pub violations: usize,
    /// `(path, node)` of the smallest slack when it is a violation.
    pub witness: Option<(usize, usize)>,
}

impl OrderCheck {
    fn new() -> Self {
        OrderCheck {
            min_slack: f64::INFINITY,
            checked: 0,
            violations: 0,
            witness: None,
        }
    }

    fn push(&mut self, slack: f64, scale: f64, at: (usize, usize)) {
        self.checked += 1;
        let bad = !(slack >= -1e-12 * (1.0 + scale));
        if bad {
            self.violations += 1;
        }
        if slack < self.min_slack || slack.is_nan() {
            self.min_slack = slack;
            self.witness = bad.then_some(at);
        }
    }

    pub fn pass(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderReport {
    pub xi: OrderCheck,
    pub f: OrderCheck,
    pub r: OrderCheck,
}

impl OrderReport {
    pub fn passed(&self) -> bool {
        self.xi.pass() && self.f.pass() && self.r.pass()
    }
}

/// Pathwise `ξ¹ ≤ ξ²`, `f₁ ≤ f₂` along `(Y¹, Z¹, V¹)` and `ΔR¹ ≤ ΔR²`.
pub fn audit_order(case: &ComparisonCase, sol1: &DiscreteSolution, bundle: &PathBundle) -> Result<OrderReport> {
    let layout = StateLayout::of(bundle.model());
    let grid = *bundle.grid();
    let n = bundle.n_paths();
    let rows = par::try_map_indices(n, |p| -> Result<(Vec<f64>, Vec<f64>, f64, f64)> {
        let st = sol1.stop(p);
        let mut xi2 = [0.0];
        case.second
            .terminal
            .eval(&TerminalView::new(grid.t(st), bundle.state(p, st), layout), &mut xi2);
        let xs = xi2[0] - sol1.xi(p)[0];
        let mut fs = Vec::with_capacity(st);
        let mut rs = Vec::with_capacity(st);
        let (r1, _) = bundle.r_increments(&case.first.r_spec, p);
        let (r2, _) = bundle.r_increments(&case.second.r_spec, p);
        for i in 0..st {
            let (t, state) = (grid.t(i), bundle.state(p, i));
            let (y, z, v) = (sol1.y(p, i), sol1.z(p, i), sol1.v(p, i));
            let f1 = evaluate(&case.first.generator, t, state, y, z, v)?[0];
            let f2 = evaluate(&case.second.generator, t, state, y, z, v)?[0];
            fs.push(f2 - f1);
            fs.push(f1.abs() + f2.abs());
            rs.push(r2[i] - r1[i]);
        }
        Ok((fs, rs, xs, xi2[0].abs()))
    })?;
    let mut rep = OrderReport {
        xi: OrderCheck::new(),
        f: OrderCheck::new(),
        r: OrderCheck::new(),
    };
    for (p, (fs, rs, xs, xscale)) in rows.into_iter().enumerate() {
        rep.xi.push(xs, xscale, (p, sol1.stop(p)));
        for (i, pair) in fs.chunks(2).enumerate() {
            rep.f.push(pair[0], pair[1], (p, i));
        }
        for (i, r) in rs.into_iter().enumerate() {
            rep.r.push(r, 0.0, (p, i));
        }
    }
    Ok(rep)
}

/// Kernel conditions on the second generator.
pub fn audit_case_kernel(case: &ComparisonCase, model: &NoiseModel, sampler: &AuditSampler) -> Result<AuditReport> {
    audit_kernel(&case.second.generator, model, sampler)
}

/// Per-node summary row.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRow {
    pub node: usize,
    /// `min_p (Y² − Y¹)`
    pub min_gap: f64,
    /// `max_p (Y¹ − Y²)_+`
    pub max_positive: f64,
    /// Fraction of paths with `Y¹ − Y² > tol`.
    pub violation_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub label: String,
    pub rows: Vec<NodeRow>,
    /// `E[Y²₀ − Y¹₀]` from the paired per-path estimators.
    pub gap0: MeanSe,
    pub tol: f64,
    pub max_positive: f64,
    /// Positive parts within `tol`.
    pub within_noise: usize,
    /// Positive parts beyond `tol`.
    pub structural: usize,
    pub points: usize,
    pub order: OrderReport,
    pub first: DiscreteSolution,
    pub second: DiscreteSolution,
}

impl ComparisonReport {
    pub fn structural_fraction(&self) -> f64 {
        self.structural as f64 / self.points.max(1) as f64
    }

    pub fn passed(&self) -> bool {
        self.structural == 0
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("node,min_gap,max_positive_part,violation_fraction\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:e},{:e},{:e}\n", r.node, r.min_gap, r.max_positive, r.violation_fraction));
        }
        s
    }
}

/// Tolerance multiplier on the standard error of the paired gap estimator.
pub const TOL_SE: f64 = 5.0;

/// Solves both problems on `bundle` and compares them node by node.
pub fn run_comparison(case: &ComparisonCase, bundle: &PathBundle, cfg: &SolverConfig) -> Result<ComparisonReport> {
    let (a, b) = par::join(|| solve(&case.first, bundle, cfg), || solve(&case.second, bundle, cfg));
    let (s1, s2) = (a?, b?);
    let order = audit_order(case, &s1, bundle)?;
    let (n, steps, h) = (bundle.n_paths(), bundle.steps(), bundle.grid().h());
    let paired: Vec<f64> = (0..n)
        .map(|p| {
            let d = |s: &DiscreteSolution| {
                let mut acc = s.xi(p)[0];
                for i in 0..s.stop(p) {
                    acc += h * s.f(p, i)[0] + s.dr(p, i);
                }
                acc
            };
            d(&s2) - d(&s1)
        })
        .collect();
    let gap0 = MeanSe::from_samples(&paired);
    let tol = TOL_SE * gap0.se;
    let mut rows = Vec::with_capacity(steps + 1);
    let (mut within, mut structural, mut max_pos) = (0, 0, 0.0f64);
    for i in 0..=steps {
        let (mut min_gap, mut mp, mut bad) = (f64::INFINITY, 0.0f64, 0usize);
        for p in 0..n {
            let (y1, y2) = (s1.y(p, i)[0], s2.y(p, i)[0]);
            let gap = y2 - y1;
            min_gap = min_gap.min(gap);
            let pos = (-gap).max(0.0);
            mp = mp.max(pos);
            let floor = 1e-12 * (1.0 + y1.abs() + y2.abs());
            if pos > tol + floor {
                bad += 1;
            } else if pos > floor {
                within += 1;
            }
        }
        structural += bad;
        max_pos = max_pos.max(mp);
        rows.push(NodeRow {
            node: i,
            min_gap,
            max_positive: mp,
            violation_fraction: bad as f64 / n as f64,
        });
    }
    Ok(ComparisonReport {
        label: case.label.clone(),
        rows,
        gap0,
        tol,
        max_positive: max_pos,
        within_noise: within,
        structural,
        points: n * (steps + 1),
        order,
        first: s1,
        second: s2,
    })
}

fn prob(xi: &str, g: crate::generator_model::GeneratorSpec, r: RSpec) -> Result<GbsdeProblem> {
    GbsdeProblem::new(Terminal::parse(xi)?, g, r)
}

/// Ordered cases for a model with one Brownian motion and at least one atom.
pub fn standard_battery(marks: &MarkSpace) -> Result<Vec<ComparisonCase>> {
    if marks.atoms() == 0 {
        return Err(crate::error::invalid("marks", "the battery needs at least one atom"));
    }
    let m = marks.atoms();
    let lin = |forcing: f64| linear(-0.5, vec![0.3], vec![0.2; m], marks, RateFn::Constant(forcing));
    let none = || RSpec::Zero;
    let cases = vec![
        ComparisonCase::new("identical", prob("sin(w(0)) + n(0)", lin(0.0)?, none())?, prob("sin(w(0)) + n(0)", lin(0.0)?, none())?)?,
        ComparisonCase::new("constant_gap", prob("w(0)", constant_driver(0.0), none())?, prob("w(0)", constant_driver(1.0), none())?)?,
        ComparisonCase::new("terminal_abs_w", prob("w(0)", constant_driver(0.0), none())?, prob("w(0) + abs(w(0))", constant_driver(0.0), none())?)?,
        // Bounded-growth data: with unbounded ξ the cubic term drives both gaps to 0 in the
        // tails of W, where a degree-3 fit of the gap overshoots below 0.
        ComparisonCase::new(
            "terminal_kink_cubic",
            prob("sin(w(0))", monotone_cubic(0.5, 1), none())?,
            prob("sin(w(0)) + 0.5 * abs(w(0))", monotone_cubic(0.5, 1), none())?,
        )?,
        ComparisonCase::new("linear_kernel", prob("n(0)", lin(0.0)?, none())?, prob("n(0) + 0.1", lin(0.5)?, none())?)?,
        ComparisonCase::new(
            "jump_kernel",
            prob("sin(n(0))", jump_kernel(0.8, marks)?, none())?,
            prob("sin(n(0)) + 0.5 * abs(w(0))", jump_kernel(0.8, marks)?, none())?,
        )?,
        ComparisonCase::new(
            "r_ordered",
            prob("cos(w(0))", lin(0.0)?, none())?,
            prob("cos(w(0))", lin(0.0)?, RSpec::Rate(RateFn::Constant(1.0)))?,
        )?,
    ];
    Ok(cases)
}
