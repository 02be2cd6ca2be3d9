//! Backward Euler solver, implicit in `y` and explicit in `(z, v)`.
//!
//! At node `i`, with `c_i = E[Y_{i+1} | F_i]`,
//!
//! ```text
//! Z_i = E[(Y_{i+1} − c_i) ΔW_i | F_i] / h
//! V_ij = E[(Y_{i+1} − c_i) Δπ̂_ij | F_i] / (λ_j h)
//! Y_i = c_i + ΔR_i + h f(t_i, T_p(Y_i), Z_i, V_i)
//! ΔM_i = Y_{i+1} − c_i − Z_i ΔW_i − Σ_j V_ij Δπ̂_ij
//! ```
//!
//! The implicit equation is solved by damped fixed-point iteration.
//! Conditional expectations come either from least squares on a polynomial
//! basis in the Markov state or from a branching tree of fresh sub-paths.

mod nested;
pub mod orthogonality;
pub mod regression;

pub use orthogonality::{orthogonality_report, OrthogonalityReport};

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::generator_model::{norm, truncate_in_place, DriverArgs, GbsdeProblem, StateLayout, TerminalView};
use crate::par;
use crate::path_engine::{PathBundle, TimeGrid};
use crate::stats::MeanSe;
use regression::{Basis, Projector};

/// Conditional-expectation estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CeScheme {
    /// Least squares on total-degree monomials of the regression state.
    Regression { degree: u32 },
    /// Branching tree with `inner` fresh one-step branches per node.
    NestedMc { inner: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub scheme: CeScheme,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    /// Radius of `T_p` in the `y`-argument; `None` picks an a-priori radius
    /// from the data, `Some(∞)` disables the truncation.
    pub truncation: Option<f64>,
    pub damping: f64,
    /// Seed of the nested tree streams (mixed with the bundle seed).
    pub nested_seed: u64,
    /// Upper bound on tree leaves per solve.
    pub nested_budget: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            scheme: CeScheme::Regression { degree: 3 },
            picard_tol: 1e-10,
            picard_max_iter: 100,
            truncation: None,
            damping: 1.0,
            nested_seed: 0,
            nested_budget: 50_000_000,
        }
    }
}

impl SolverConfig {
    pub fn regression(degree: u32) -> Self {
        SolverConfig {
            scheme: CeScheme::Regression { degree },
            ..Default::default()
        }
    }

    pub fn nested(inner: usize) -> Self {
        SolverConfig {
            scheme: CeScheme::NestedMc { inner },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.picard_tol > 0.0 && self.picard_tol.is_finite()) {
            return Err(invalid("picard_tol", "must be positive"));
        }
        if self.picard_max_iter == 0 {
            return Err(invalid("picard_max_iter", "must be at least 1"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(invalid("damping", "must lie in (0, 1]"));
        }
        if let Some(t) = self.truncation {
            if !(t > 0.0) {
                return Err(invalid("truncation", "level must be positive"));
            }
        }
        if let CeScheme::NestedMc { inner } = self.scheme {
            if inner < 2 {
                return Err(invalid("inner", "nested estimator needs at least 2 branches"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolverWarning {
    /// Some final iterate did not lie strictly inside the truncation radius.
    TruncationActive {
        step: usize,
        path: usize,
        count: usize,
        level: f64,
    },
    /// The basis degree was lowered because few paths were active.
    DegreeReduced { step: usize, from: u32, to: u32 },
    /// Collinear basis columns on the active paths were left out.
    ColumnsDropped { step: usize, kept: usize, columns: usize },
}

impl fmt::Display for SolverWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverWarning::TruncationActive {
                step,
                path,
                count,
                level,
            } => write!(
                f,
                "truncation active at {count} node(s), first at step {step} path {path} (level {level:.6e})"
            ),
            SolverWarning::DegreeReduced { step, from, to } => {
                write!(f, "basis degree reduced from {from} to {to} at step {step}")
            }
            SolverWarning::ColumnsDropped { step, kept, columns } => {
                write!(f, "kept {kept} of {columns} collinear basis columns at step {step}")
            }
        }
    }
}

/// `(Y, Z, V, ΔM)` on every path and node, plus the generator values and
/// `R` increments that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSolution {
    grid: TimeGrid,
    n_paths: usize,
    k: usize,
    d: usize,
    m: usize,
    intensities: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    v: Vec<f64>,
    dm: Vec<f64>,
    f: Vec<f64>,
    dr: Vec<f64>,
    dr_abs: Vec<f64>,
    stop: Vec<usize>,
    xi: Vec<f64>,
    y0: Vec<MeanSe>,
    truncation_level: f64,
    pub warnings: Vec<SolverWarning>,
    pub label: String,
}

impl DiscreteSolution {
    fn empty(grid: TimeGrid, n: usize, k: usize, d: usize, m: usize, intensities: Vec<f64>) -> Self {
        let steps = grid.steps();
        DiscreteSolution {
            grid,
            n_paths: n,
            k,
            d,
            m,
            intensities,
            y: vec![0.0; (steps + 1) * n * k],
            z: vec![0.0; steps * n * k * d],
            v: vec![0.0; steps * n * k * m],
            dm: vec![0.0; steps * n * k],
            f: vec![0.0; steps * n * k],
            dr: vec![0.0; n * steps],
            dr_abs: vec![0.0; n * steps],
            stop: vec![steps; n],
            xi: vec![0.0; n * k],
            y0: Vec::new(),
            truncation_level: f64::INFINITY,
            warnings: Vec::new(),
            label: String::new(),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn brownian_dim(&self) -> usize {
        self.d
    }

    pub fn atoms(&self) -> usize {
        self.m
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn y(&self, p: usize, i: usize) -> &[f64] {
        let o = (i * self.n_paths + p) * self.k;
        &self.y[o..o + self.k]
    }

    /// `k × d` row-major.
    pub fn z(&self, p: usize, i: usize) -> &[f64] {
        let w = self.k * self.d;
        let o = (i * self.n_paths + p) * w;
        &self.z[o..o + w]
    }

    /// Atom-major, block `k`.
    pub fn v(&self, p: usize, i: usize) -> &[f64] {
        let w = self.k * self.m;
        let o = (i * self.n_paths + p) * w;
        &self.v[o..o + w]
    }

    pub fn dm(&self, p: usize, i: usize) -> &[f64] {
        let o = (i * self.n_paths + p) * self.k;
        &self.dm[o..o + self.k]
    }

    /// `f(t_i, Y_i, Z_i, V_i)` actually used on step `i` (zero after the stop).
    pub fn f(&self, p: usize, i: usize) -> &[f64] {
        let o = (i * self.n_paths + p) * self.k;
        &self.f[o..o + self.k]
    }

    /// `ΔR_i` used on step `i` (zero after the stop).
    pub fn dr(&self, p: usize, i: usize) -> f64 {
        self.dr[p * self.steps() + i]
    }

    pub fn dr_abs(&self, p: usize, i: usize) -> f64 {
        self.dr_abs[p * self.steps() + i]
    }

    /// Stop node of path `p` (the last node for fixed horizons).
    pub fn stop(&self, p: usize) -> usize {
        self.stop[p]
    }

    pub fn xi(&self, p: usize) -> &[f64] {
        &self.xi[p * self.k..(p + 1) * self.k]
    }

    /// `Y_0` estimate per component.
    pub fn y0(&self) -> &[MeanSe] {
        &self.y0
    }

    pub fn truncation_level(&self) -> f64 {
        self.truncation_level
    }

    fn y_mut(&mut self, p: usize, i: usize) -> &mut [f64] {
        let o = (i * self.n_paths + p) * self.k;
        &mut self.y[o..o + self.k]
    }

    /// `sqrt(mean_p max_i |Y_{p,i} − Y'_{p,i}|²)`.
    pub fn s2_distance(&self, other: &DiscreteSolution) -> f64 {
        s2_distance_raw(&self.y, &other.y, self.n_paths, self.steps() + 1, self.k)
    }

    /// One row per `(path, node)`; `Z`, `V`, `ΔM` are zero on the last node.
    pub fn to_csv(&self) -> String {
        let (k, d, m) = (self.k, self.d, self.m);
        let mut head = vec!["path".to_string(), "node".to_string()];
        head.extend((0..k).map(|c| format!("y{c}")));
        for c in 0..k {
            head.extend((0..d).map(|l| format!("z{c}_{l}")));
        }
        for j in 0..m {
            head.extend((0..k).map(|c| format!("v{j}_{c}")));
        }
        head.extend((0..k).map(|c| format!("dm{c}")));
        let mut out = head.join(",");
        out.push('\n');
        let zeros = vec![0.0; k * d.max(m).max(1)];
        for p in 0..self.n_paths {
            for i in 0..=self.steps() {
                let mut row = vec![p.to_string(), i.to_string()];
                let last = i == self.steps();
                row.extend(self.y(p, i).iter().map(|x| x.to_string()));
                let z = if last { &zeros[..k * d] } else { self.z(p, i) };
                let v = if last { &zeros[..k * m] } else { self.v(p, i) };
                let dm = if last { &zeros[..k] } else { self.dm(p, i) };
                row.extend(z.iter().chain(v).chain(dm).map(|x| x.to_string()));
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        out
    }
}

fn s2_distance_raw(a: &[f64], b: &[f64], n: usize, nodes: usize, k: usize) -> f64 {
    let per_path: Vec<f64> = (0..n)
        .map(|p| {
            (0..nodes)
                .map(|i| {
                    let o = (i * n + p) * k;
                    (0..k).map(|c| (a[o + c] - b[o + c]).powi(2)).sum::<f64>()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    crate::stats::mean(&per_path).sqrt()
}

/// Shared per-solve data.
pub(crate) struct Ctx<'a> {
    pub prob: &'a GbsdeProblem,
    pub bundle: &'a PathBundle,
    pub cfg: &'a SolverConfig,
    pub layout: StateLayout,
    pub stop: Vec<usize>,
    pub level: f64,
}

struct StepOut {
    y: Vec<f64>,
    z: Vec<f64>,
    v: Vec<f64>,
    dm: Vec<f64>,
    f: Vec<f64>,
    trunc_hit: bool,
}

impl<'a> Ctx<'a> {
    fn new(prob: &'a GbsdeProblem, bundle: &'a PathBundle, cfg: &'a SolverConfig, stop: Option<&[usize]>) -> Result<Self> {
        cfg.validate()?;
        let layout = StateLayout::of(bundle.model());
        prob.terminal.validate(&layout)?;
        let n = bundle.n_paths();
        let steps = bundle.steps();
        let stop = match stop {
            Some(s) => {
                if s.len() != n {
                    return Err(Error::DimensionMismatch {
                        context: "stop indices",
                        expected: n,
                        got: s.len(),
                    });
                }
                if s.iter().any(|&t| t > steps) {
                    return Err(invalid("stop", "stop index beyond the grid"));
                }
                s.to_vec()
            }
            None => vec![steps; n],
        };
        Ok(Ctx {
            prob,
            bundle,
            cfg,
            layout,
            stop,
            level: f64::INFINITY,
        })
    }

    fn h(&self) -> f64 {
        self.bundle.grid().h()
    }

    /// Allocates the solution with terminal values, `R` increments and frozen tails.
    fn init(&mut self) -> Result<DiscreteSolution> {
        let b = self.bundle;
        let (n, steps, k) = (b.n_paths(), b.steps(), self.prob.dim());
        let grid = *b.grid();
        let mut s = DiscreteSolution::empty(grid, n, k, b.brownian_dim(), b.atoms(), b.marks().intensities().to_vec());
        s.stop = self.stop.clone();
        s.label = self.prob.generator.label.clone();
        let rows = par::map_indices(n, |p| {
            let st = self.stop[p];
            let mut xi = vec![0.0; k];
            self.prob
                .terminal
                .eval(&TerminalView::new(grid.t(st), b.state(p, st), self.layout), &mut xi);
            let (mut dr, mut abs) = b.r_increments(&self.prob.r_spec, p);
            for i in st..steps {
                dr[i] = 0.0;
                abs[i] = 0.0;
            }
            (xi, dr, abs)
        });
        for (p, (xi, dr, abs)) in rows.into_iter().enumerate() {
            if xi.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("terminal condition on path {p}"),
                });
            }
            s.xi[p * k..(p + 1) * k].copy_from_slice(&xi);
            s.dr[p * steps..(p + 1) * steps].copy_from_slice(&dr);
            s.dr_abs[p * steps..(p + 1) * steps].copy_from_slice(&abs);
            for i in self.stop[p]..=steps {
                s.y_mut(p, i).copy_from_slice(&xi);
            }
        }
        self.level = match self.cfg.truncation {
            Some(l) => l,
            None => self.auto_level(&s),
        };
        s.truncation_level = self.level;
        Ok(s)
    }

    /// `2 e^{(µ⁺ + L_z + L_v) T} max_p (|ξ| + Σ h |f(t,0,0,0)| + Σ |ΔR|) + 1`.
    fn auto_level(&self, s: &DiscreteSolution) -> f64 {
        let b = self.bundle;
        let g = &self.prob.generator;
        let grid = b.grid();
        let h = grid.h();
        let (d, m) = (b.brownian_dim(), b.atoms());
        let bounds = par::map_indices(b.n_paths(), |p| {
            let mut acc = norm(s.xi(p));
            for i in 0..self.stop[p] {
                acc += h * g.f0_abs(grid.t(i), b.state(p, i), d, m) + s.dr_abs(p, i);
            }
            acc
        });
        let worst = bounds.iter().cloned().fold(0.0, f64::max);
        let rate = g.mu.max(0.0) + g.lz + g.lv;
        2.0 * (rate * grid.horizon()).exp() * worst + 1.0
    }

    /// Damped fixed point of `y = base + h f(t, T_p(y), z, v)`; returns `(y, f, hit)`.
    pub(crate) fn picard(
        &self,
        step: usize,
        path: usize,
        state: &[f64],
        base: &[f64],
        z: &[f64],
        v: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, bool)> {
        let k = base.len();
        let h = self.h();
        let t = self.bundle.grid().t(step);
        let theta = self.cfg.damping;
        let driver = &self.prob.generator.driver;
        let mut y = base.to_vec();
        let mut ty = vec![0.0; k];
        let mut fv = vec![0.0; k];
        let mut prev = f64::INFINITY;
        let mut ratio = f64::NAN;
        for _ in 0..self.cfg.picard_max_iter {
            ty.copy_from_slice(&y);
            truncate_in_place(&mut ty, self.level);
            driver(&DriverArgs { t, state, y: &ty, z, v }, &mut fv);
            let mut diff = 0.0;
            let mut size = 0.0;
            for c in 0..k {
                let g = base[c] + h * fv[c];
                let next = (1.0 - theta) * y[c] + theta * g;
                diff += (next - y[c]) * (next - y[c]);
                size += next * next;
                y[c] = next;
            }
            let (diff, size) = (diff.sqrt(), size.sqrt());
            if !diff.is_finite() {
                break;
            }
            if prev.is_finite() && prev > 0.0 {
                // largest observed ratio; NaN until the second iterate
                ratio = ratio.max(diff / prev);
            }
            if diff <= self.cfg.picard_tol * (1.0 + size) {
                ty.copy_from_slice(&y);
                truncate_in_place(&mut ty, self.level);
                driver(&DriverArgs { t, state, y: &ty, z, v }, &mut fv);
                if fv.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        context: format!("generator at step {step}, path {path}"),
                    });
                }
                let hit = norm(&y) >= self.level;
                return Ok((y, fv, hit));
            }
            prev = diff;
        }
        Err(Error::PicardDiverged {
            step,
            path,
            iterations: self.cfg.picard_max_iter,
            contraction: if ratio.is_nan() { f64::INFINITY } else { ratio },
        })
    }

    fn regression_pass(&mut self, degree: u32, frozen: Option<(&[f64], &[f64])>) -> Result<DiscreteSolution> {
        let mut s = self.init()?;
        let b = self.bundle;
        let (n, steps, k, d, m) = (b.n_paths(), b.steps(), s.k, s.d, s.m);
        let h = self.h();
        let lam = b.marks().intensities().to_vec();
        let mut trunc: Option<(usize, usize, usize)> = None;
        for i in (0..steps).rev() {
            let active: Vec<usize> = (0..n).filter(|&p| self.stop[p] > i).collect();
            if active.is_empty() {
                continue;
            }
            let na = active.len();
            let rows: Vec<&[f64]> = active.iter().map(|&p| b.regression_vars(p, i)).collect();
            let (basis, used) = Basis::build(&rows, degree, (na / (2 * (1 + d + m))).max(1));
            if used < degree {
                s.warnings.push(SolverWarning::DegreeReduced {
                    step: i,
                    from: degree,
                    to: used,
                });
            }
            let phi = basis.design(&rows);
            let (proj, kept) = Projector::pruned(&phi, i)?;
            if kept.len() < phi.ncols() {
                s.warnings.push(SolverWarning::ColumnsDropped {
                    step: i,
                    kept: kept.len(),
                    columns: phi.ncols(),
                });
            }
            let ynext = |a: usize, c: usize| s.y[((i + 1) * n + active[a]) * k + c];
            let cfit = proj.project(&DMatrix::from_fn(na, k, ynext));
            let (wz, wv) = (k * d, k * m);
            let zv = if d + m > 0 {
                // joint least squares of Y_{i+1} − c on φ·ΔW/√h and φ·Δπ̂/√(λh):
                // the residual is then empirically orthogonal to every increment
                let kb = phi.ncols();
                let scaled: Vec<Vec<f64>> = active
                    .iter()
                    .map(|&p| {
                        let mut inc: Vec<f64> = b.dw(p, i).iter().map(|x| x / h.sqrt()).collect();
                        for j in 0..m {
                            inc.push((b.counts(p, i)[j] as f64 - lam[j] * h) / (lam[j] * h).sqrt());
                        }
                        inc
                    })
                    .collect();
                let g = DMatrix::from_fn(na, kb * (d + m), |a, col| phi[(a, col % kb)] * scaled[a][col / kb]);
                let rhs = DMatrix::from_fn(na, k, |a, c| ynext(a, c) - cfit[(a, c)]);
                let coef = min_norm_lstsq(g, &rhs);
                let per = phi * DMatrix::from_fn(kb, (d + m) * k, |q, col| coef[((col / k) * kb + q, col % k)]);
                DMatrix::from_fn(na, wz + wv, |a, col| {
                    if col < wz {
                        let (c, l) = (col / d, col % d);
                        per[(a, l * k + c)] / h.sqrt()
                    } else {
                        let q = col - wz;
                        let (j, c) = (q / k, q % k);
                        per[(a, (d + j) * k + c)] / (lam[j] * h).sqrt()
                    }
                })
            } else {
                DMatrix::zeros(na, 0)
            };
            let sref = &s;
            let this = &*self;
            let outs = par::try_map_indices(na, |a| -> Result<StepOut> {
                let p = active[a];
                let z: Vec<f64> = (0..wz).map(|c| zv[(a, c)]).collect();
                let v: Vec<f64> = (0..wv).map(|c| zv[(a, wz + c)]).collect();
                let c: Vec<f64> = (0..k).map(|c| cfit[(a, c)]).collect();
                let dr = sref.dr(p, i);
                let base: Vec<f64> = c.iter().map(|x| x + dr).collect();
                let (fz, fvv) = match frozen {
                    Some((zf, vf)) => {
                        let oz = (i * n + p) * wz;
                        let ov = (i * n + p) * wv;
                        (&zf[oz..oz + wz], &vf[ov..ov + wv])
                    }
                    None => (&z[..], &v[..]),
                };
                let (y, f, hit) = this.picard(i, p, b.state(p, i), &base, fz, fvv)?;
                let dm = residual(sref.y(p, i + 1), &c, &z, &v, b, p, i, k, d, m, h);
                Ok(StepOut {
                    y,
                    z,
                    v,
                    dm,
                    f,
                    trunc_hit: hit,
                })
            })?;
            for (a, o) in outs.into_iter().enumerate() {
                let p = active[a];
                s.scatter(p, i, &o);
                if o.trunc_hit {
                    let e = trunc.get_or_insert((i, p, 0));
                    *e = (i, p, e.2 + 1);
                }
            }
        }
        self.finish(&mut s, trunc, true);
        Ok(s)
    }

    fn finish(&self, s: &mut DiscreteSolution, trunc: Option<(usize, usize, usize)>, telescoped: bool) {
        if let Some((step, path, count)) = trunc {
            s.warnings.push(SolverWarning::TruncationActive {
                step,
                path,
                count,
                level: self.level,
            });
        }
        let (n, k, h) = (s.n_paths, s.k, self.h());
        s.y0 = (0..k)
            .map(|c| {
                let xs: Vec<f64> = if telescoped {
                    // ξ + Σ (h f + ΔR) telescopes to the intercept-only Y_0
                    (0..n)
                        .map(|p| {
                            let mut acc = s.xi(p)[c];
                            for i in 0..s.stop[p] {
                                acc += h * s.f(p, i)[c] + s.dr(p, i);
                            }
                            acc
                        })
                        .collect()
                } else {
                    (0..n).map(|p| s.y(p, 0)[c]).collect()
                };
                MeanSe::from_samples(&xs)
            })
            .collect();
    }
}

impl DiscreteSolution {
    fn scatter(&mut self, p: usize, i: usize, o: &StepOut) {
        let (n, k, wz, wv) = (self.n_paths, self.k, self.k * self.d, self.k * self.m);
        self.y_mut(p, i).copy_from_slice(&o.y);
        let oz = (i * n + p) * wz;
        self.z[oz..oz + wz].copy_from_slice(&o.z);
        let ov = (i * n + p) * wv;
        self.v[ov..ov + wv].copy_from_slice(&o.v);
        let ok = (i * n + p) * k;
        self.dm[ok..ok + k].copy_from_slice(&o.dm);
        self.f[ok..ok + k].copy_from_slice(&o.f);
    }
}

// Sparse jump counts can make the increment design rank deficient; the
// minimum-norm solution still projects onto its column space.
fn min_norm_lstsq(g: DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = g.svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if !(smax > 0.0) {
        return DMatrix::zeros(svd.v_t.as_ref().map_or(0, |v| v.ncols()), rhs.ncols());
    }
    svd.solve(rhs, 1e-10 * smax).expect("u and v computed")
}

#[allow(clippy::too_many_arguments)]
fn residual(
    ynext: &[f64],
    c: &[f64],
    z: &[f64],
    v: &[f64],
    b: &PathBundle,
    p: usize,
    i: usize,
    k: usize,
    d: usize,
    m: usize,
    h: f64,
) -> Vec<f64> {
    let dw = b.dw(p, i);
    let counts = b.counts(p, i);
    let lam = b.marks().intensities();
    (0..k)
        .map(|cc| {
            let mut r = ynext[cc] - c[cc];
            for l in 0..d {
                r -= z[cc * d + l] * dw[l];
            }
            for j in 0..m {
                r -= v[j * k + cc] * (counts[j] as f64 - lam[j] * h);
            }
            r
        })
        .collect()
}

/// Solves on the full grid.
pub fn solve(prob: &GbsdeProblem, bundle: &PathBundle, cfg: &SolverConfig) -> Result<DiscreteSolution> {
    solve_stopped(prob, bundle, cfg, None)
}

/// Solves with per-path stop nodes: on and after `stop[p]` the solution is
/// frozen to `ξ` evaluated at the stopped state, and `f`, `dR` are switched off.
pub fn solve_stopped(prob: &GbsdeProblem, bundle: &PathBundle, cfg: &SolverConfig, stop: Option<&[usize]>) -> Result<DiscreteSolution> {
    let mut ctx = Ctx::new(prob, bundle, cfg, stop)?;
    match cfg.scheme {
        CeScheme::Regression { degree } => ctx.regression_pass(degree, None),
        CeScheme::NestedMc { inner } => {
            if ctx.stop.iter().any(|&s| s != bundle.steps()) {
                return Err(invalid("scheme", "nested_mc supports fixed horizons only"));
            }
            nested::nested_pass(&mut ctx, inner)
        }
    }
}

/// Outer Picard iteration freezing the `(z, v)` arguments of `f` to the
/// previous iterate, from the zero start. Returns the last iterate and the
/// distances `d_n = ‖Y^{n+1} − Y^n‖` (empirical `S²`), `d_0` included.
pub fn global_picard(
    prob: &GbsdeProblem,
    bundle: &PathBundle,
    cfg: &SolverConfig,
    outer_iters: usize,
) -> Result<(DiscreteSolution, Vec<f64>)> {
    let degree = match cfg.scheme {
        CeScheme::Regression { degree } => degree,
        CeScheme::NestedMc { .. } => {
            return Err(invalid("scheme", "global Picard runs on the regression scheme"));
        }
    };
    if outer_iters == 0 {
        return Err(invalid("outer_iters", "need at least one iteration"));
    }
    let mut ctx = Ctx::new(prob, bundle, cfg, None)?;
    let (n, steps, k) = (bundle.n_paths(), bundle.steps(), prob.dim());
    let zeros_z = vec![0.0; steps * n * k * bundle.brownian_dim()];
    let zeros_v = vec![0.0; steps * n * k * bundle.atoms()];
    let zero_y = vec![0.0; (steps + 1) * n * k];
    let mut dists = Vec::with_capacity(outer_iters);
    let mut cur: Option<DiscreteSolution> = None;
    for _ in 0..outer_iters {
        let next = match &cur {
            None => ctx.regression_pass(degree, Some((&zeros_z, &zeros_v)))?,
            Some(s) => ctx.regression_pass(degree, Some((&s.z, &s.v)))?,
        };
        let prev_y = cur.as_ref().map_or(&zero_y[..], |s| &s.y[..]);
        dists.push(s2_distance_raw(&next.y, prev_y, n, steps + 1, k));
        cur = Some(next);
    }
    Ok((cur.unwrap(), dists))
}
