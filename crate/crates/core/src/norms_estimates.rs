//! Weighted moment functionals of a discrete solution and its data.
//!
//! Every functional is a path sample whose mean is reported with its
//! standard error. `moment` holds the p-th power; `norm` its p-th root.

use crate::backward_solver::DiscreteSolution;
use crate::error::{check_len, invalid};
use crate::generator_model::{evaluate, GbsdeProblem};
use crate::par;
use crate::path_engine::PathBundle;
use crate::stats::MeanSe;
use crate::{Error, Result};

/// `min(p/2, p(p−1) 3^{1−p})`.
pub fn alpha_p(p: f64) -> Result<f64> {
    if !(p >= 2.0) || !p.is_finite() {
        return Err(invalid("p", "alpha_p needs p >= 2"));
    }
    // 3^{p−1} is exact for integer p, so the quotient is correctly rounded.
    let pow3 = if p.fract() == 0.0 && p < 600.0 { 3f64.powi(p as i32 - 1) } else { 3f64.powf(p - 1.0) };
    Ok((p / 2.0).min(p * (p - 1.0) / pow3))
}

/// Bisection for a point in `[lo, hi]` where the two branches of
/// [`alpha_p`] meet. `None` when they do not cross on a uniform scan.
pub fn alpha_crossover(lo: f64, hi: f64, tol: f64) -> Option<f64> {
    let g = |p: f64| p / 2.0 - p * (p - 1.0) * 3f64.powf(1.0 - p);
    let scan = 1000;
    let step = (hi - lo) / scan as f64;
    let (mut a, mut b) = (None, None);
    for s in 0..scan {
        let (x0, x1) = (lo + s as f64 * step, lo + (s + 1) as f64 * step);
        if g(x0) == 0.0 {
            return Some(x0);
        }
        if g(x0).signum() != g(x1).signum() {
            a = Some(x0);
            b = Some(x1);
            break;
        }
    }
    let (mut a, mut b) = (a?, b?);
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if g(a).signum() == g(mid).signum() {
            a = mid;
        } else {
            b = mid;
        }
    }
    Some(0.5 * (a + b))
}

/// One functional: the mean of a path sample, and its `1/p` root.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Functional {
    pub moment: MeanSe,
    pub norm: f64,
}

impl Functional {
    fn new(samples: &[f64], p: f64) -> Self {
        let moment = MeanSe::from_samples(samples);
        Functional {
            moment,
            norm: moment.mean.max(0.0).powf(1.0 / p),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.moment.is_finite() && self.norm.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormReport {
    pub p: f64,
    pub a: f64,
    /// `E sup_i e^{a p t_i} |Y_i|^p`
    pub sp: Functional,
    /// `E (Σ e^{2 a t_i} |Z_i|² h)^{p/2}`
    pub mp: Functional,
    /// `E (Σ e^{2 a t_i} Σ_j λ_j |V_ij|² h)^{p/2}`
    pub lp: Functional,
    /// `E e^{a p T} (Σ |ΔM_i|²)^{p/2}`
    pub m_bracket: Functional,
    /// `E e^{a p T} |ξ|^p`
    pub xi: Functional,
    /// `E (Σ e^{a t_i} |f_i| h)^p`
    pub f: Functional,
    /// `E (Σ e^{a t_i} |ΔR|_i)^p`
    pub r: Functional,
    /// Set when `a < µ + 2L²`, where the estimate is not asserted.
    pub weight_below_threshold: bool,
}

/// Left and right sides of an estimate and their quotient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio {
    pub lhs: MeanSe,
    pub rhs: MeanSe,
    pub ratio: f64,
    /// Zero data side with a solution side clearly above zero.
    pub violation: bool,
}

impl NormReport {
    pub fn entries(&self) -> [(&'static str, &Functional); 7] {
        [
            ("sp_norm", &self.sp),
            ("mp_norm", &self.mp),
            ("lp_norm", &self.lp),
            ("m_bracket", &self.m_bracket),
            ("xi_data", &self.xi),
            ("f_data", &self.f),
            ("r_data", &self.r),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.entries().iter().all(|(_, f)| f.is_finite())
    }

    fn ratio(&self, lhs: &[f64], rhs: &[f64]) -> Ratio {
        let (l, r) = (MeanSe::from_samples(lhs), MeanSe::from_samples(rhs));
        let ratio = if r.mean > 0.0 {
            l.mean / r.mean
        } else if l.mean == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        Ratio {
            lhs: l,
            rhs: r,
            ratio,
            violation: r.mean == 0.0 && l.mean > 3.0 * l.se + 1e-12,
        }
    }

    /// CSV with one row per functional.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("functional,moment,se,norm\n");
        for (name, f) in self.entries() {
            s.push_str(&format!("{name},{:e},{:e},{:e}\n", f.moment.mean, f.moment.se, f.norm));
        }
        s
    }
}

// Per-path samples in the order sp, mp, lp, m, xi, f, r.
struct Samples {
    cols: [Vec<f64>; 7],
}

impl Samples {
    fn collect(rows: Vec<[f64; 7]>) -> Self {
        let mut cols: [Vec<f64>; 7] = Default::default();
        for r in rows {
            for (c, x) in cols.iter_mut().zip(r) {
                c.push(x);
            }
        }
        Samples { cols }
    }

    fn report(&self, p: f64, a: f64, below: bool) -> (NormReport, Vec<f64>, Vec<f64>) {
        let f = |c: usize| Functional::new(&self.cols[c], p);
        let n = self.cols[0].len();
        let lhs = (0..n).map(|q| (0..4).map(|c| self.cols[c][q]).sum()).collect();
        let rhs = (0..n).map(|q| (4..7).map(|c| self.cols[c][q]).sum()).collect();
        let rep = NormReport {
            p,
            a,
            sp: f(0),
            mp: f(1),
            lp: f(2),
            m_bracket: f(3),
            xi: f(4),
            f: f(5),
            r: f(6),
            weight_below_threshold: below,
        };
        (rep, lhs, rhs)
    }
}

fn check(prob: &GbsdeProblem, p: f64, a: f64) -> Result<bool> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(invalid("p", "need a finite p >= 1"));
    }
    if !a.is_finite() {
        return Err(invalid("a", "weight must be finite"));
    }
    let g = &prob.generator;
    Ok(a < g.mu + 2.0 * g.lipschitz().powi(2))
}

fn aligned(sol: &DiscreteSolution, bundle: &PathBundle) -> Result<()> {
    check_len("solution paths vs bundle", bundle.n_paths(), sol.n_paths())?;
    check_len("solution steps vs bundle", bundle.steps(), sol.steps())
}

fn sq(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum()
}

fn sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn v_energy(v: impl Fn(usize, usize) -> f64, lam: &[f64], k: usize) -> f64 {
    let mut e = 0.0;
    for (j, l) in lam.iter().enumerate() {
        for c in 0..k {
            e += l * v(j, c).powi(2);
        }
    }
    e
}

fn finite(rep: NormReport) -> Result<NormReport> {
    if rep.is_finite() {
        Ok(rep)
    } else {
        let bad: Vec<&str> = rep.entries().iter().filter(|(_, f)| !f.is_finite()).map(|(n, _)| *n).collect();
        Err(Error::NonFinite {
            context: format!("moments {}", bad.join(", ")),
        })
    }
}

// Weights run on `t ∧ t_stop`, so a stopped solution gets `e^{a(s∧τ)}`.
pub(crate) fn solution_norms(
    sol: &DiscreteSolution,
    prob: &GbsdeProblem,
    bundle: &PathBundle,
    p: f64,
    a: f64,
    below: bool,
) -> Result<(NormReport, Vec<f64>, Vec<f64>)> {
    aligned(sol, bundle)?;
    let grid = sol.grid();
    let (h, k) = (grid.h(), sol.dim());
    let (d, m) = (sol.brownian_dim(), sol.atoms());
    let lam = sol.intensities();
    let g = &prob.generator;
    let rows = par::map_indices(sol.n_paths(), |q| {
        let stop = sol.stop(q);
        let mut sup: f64 = 0.0;
        for i in 0..=grid.steps() {
            sup = sup.max((a * grid.t(i.min(stop))).exp() * sq(sol.y(q, i)).sqrt());
        }
        let (mut zs, mut vs, mut ms, mut fs, mut rs) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..stop {
            let t = grid.t(i);
            let w2 = (2.0 * a * t).exp();
            zs += w2 * sq(sol.z(q, i)) * h;
            let v = sol.v(q, i);
            vs += w2 * v_energy(|j, c| v[j * k + c], lam, k) * h;
            ms += sq(sol.dm(q, i));
            fs += (a * t).exp() * g.f0_abs(t, bundle.state(q, i), d, m) * h;
            rs += (a * t).exp() * sol.dr_abs(q, i);
        }
        let wt = (a * p * grid.t(stop)).exp();
        [
            sup.powf(p),
            zs.powf(p / 2.0),
            vs.powf(p / 2.0),
            wt * ms.powf(p / 2.0),
            wt * sq(sol.xi(q)).sqrt().powf(p),
            fs.powf(p),
            rs.powf(p),
        ]
    });
    Ok(Samples::collect(rows).report(p, a, below))
}

/// Functionals of `(Y, Z, V, M)` and of the data `(ξ, f(·, 0, 0, 0), R)`.
pub fn compute_norms(sol: &DiscreteSolution, prob: &GbsdeProblem, bundle: &PathBundle, p: f64, a: f64) -> Result<NormReport> {
    let below = check(prob, p, a)?;
    finite(solution_norms(sol, prob, bundle, p, a, below)?.0)
}

/// Sum of the four solution moments over the sum of the three data moments.
pub fn apriori_ratio(sol: &DiscreteSolution, prob: &GbsdeProblem, bundle: &PathBundle, p: f64, a: f64) -> Result<(NormReport, Ratio)> {
    let below = check(prob, p, a)?;
    finite_ratio(solution_norms(sol, prob, bundle, p, a, below)?)
}

pub(crate) fn finite_ratio(parts: (NormReport, Vec<f64>, Vec<f64>)) -> Result<(NormReport, Ratio)> {
    let (rep, lhs, rhs) = parts;
    let rep = finite(rep)?;
    let r = rep.ratio(&lhs, &rhs);
    Ok((rep, r))
}

/// Functionals of the differences of two solutions on one bundle. The
/// generator term is `f_A − f_B` evaluated along solution B.
pub fn variation_ratio(
    sol_a: &DiscreteSolution,
    sol_b: &DiscreteSolution,
    prob_a: &GbsdeProblem,
    prob_b: &GbsdeProblem,
    bundle: &PathBundle,
    p: f64,
    a: f64,
) -> Result<(NormReport, Ratio)> {
    let below = check(prob_a, p, a)? || check(prob_b, p, a)?;
    aligned(sol_a, bundle)?;
    aligned(sol_b, bundle)?;
    check_len("solution dimension", sol_a.dim(), sol_b.dim())?;
    let grid = sol_a.grid();
    let (h, k) = (grid.h(), sol_a.dim());
    let lam = sol_a.intensities();
    let rows = par::try_map_indices(sol_a.n_paths(), |q| -> Result<[f64; 7]> {
        let stop = sol_a.stop(q).max(sol_b.stop(q));
        let mut sup: f64 = 0.0;
        for i in 0..=grid.steps() {
            sup = sup.max((a * grid.t(i.min(stop))).exp() * sq_diff(sol_a.y(q, i), sol_b.y(q, i)).sqrt());
        }
        let (mut zs, mut vs, mut ms, mut fs, mut rs) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..stop {
            let t = grid.t(i);
            let w2 = (2.0 * a * t).exp();
            zs += w2 * sq_diff(sol_a.z(q, i), sol_b.z(q, i)) * h;
            let (va, vb) = (sol_a.v(q, i), sol_b.v(q, i));
            vs += w2 * v_energy(|j, c| va[j * k + c] - vb[j * k + c], lam, k) * h;
            ms += sq_diff(sol_a.dm(q, i), sol_b.dm(q, i));
            let (y, z, v) = (sol_b.y(q, i), sol_b.z(q, i), sol_b.v(q, i));
            let state = bundle.state(q, i);
            let fa = evaluate(&prob_a.generator, t, state, y, z, v)?;
            let fb = evaluate(&prob_b.generator, t, state, y, z, v)?;
            fs += (a * t).exp() * sq_diff(&fa, &fb).sqrt() * h;
            rs += (a * t).exp() * (sol_a.dr(q, i) - sol_b.dr(q, i)).abs();
        }
        let wt = (a * p * grid.t(stop)).exp();
        Ok([
            sup.powf(p),
            zs.powf(p / 2.0),
            vs.powf(p / 2.0),
            wt * ms.powf(p / 2.0),
            wt * sq_diff(sol_a.xi(q), sol_b.xi(q)).sqrt().powf(p),
            fs.powf(p),
            rs.powf(p),
        ])
    })?;
    finite_ratio(Samples::collect(rows).report(p, a, below))
}
