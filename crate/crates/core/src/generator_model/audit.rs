//! Sampled audits of the generator hypotheses and data integrability.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::terminal::{StateLayout, TerminalView};
use super::{norm, DriverArgs, GbsdeProblem, GeneratorSpec, KernelArgs};
use crate::error::{Error, Result};
use crate::mark_space::{integrate_kernel_raw, l2_lambda_norm_raw};
use crate::par;
use crate::path_engine::{NoiseModel, PathBundle};
use crate::stats::MeanSe;

/// Box the audit samples are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditSampler {
    pub samples: usize,
    pub seed: u64,
    pub horizon: f64,
    pub y_range: f64,
    pub z_range: f64,
    pub v_range: f64,
    pub state_range: f64,
}

impl Default for AuditSampler {
    fn default() -> Self {
        AuditSampler {
            samples: 2000,
            seed: 0,
            horizon: 1.0,
            y_range: 3.0,
            z_range: 3.0,
            v_range: 3.0,
            state_range: 3.0,
        }
    }
}

/// Sample point where an entry was worst.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub t: f64,
    pub state: Vec<f64>,
    pub y: Vec<f64>,
    pub y2: Vec<f64>,
    pub z: Vec<f64>,
    pub z2: Vec<f64>,
    pub v: Vec<f64>,
    pub v2: Vec<f64>,
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={} y={:?} y'={:?} z={:?} z'={:?} v={:?} v'={:?}",
            self.t, self.y, self.y2, self.z, self.z2, self.v, self.v2
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub name: &'static str,
    pub declared: f64,
    /// Worst empirical value of the audited quantity.
    pub observed: f64,
    pub pass: bool,
    /// Present on FAIL.
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AuditReport {
    pub entries: Vec<AuditEntry>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn entry(&self, name: &str) -> Option<&AuditEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            write!(
                f,
                "{:<20} declared {:>12.6e} observed {:>12.6e} {}",
                e.name,
                e.declared,
                e.observed,
                if e.pass { "PASS" } else { "FAIL" }
            )?;
            if let Some(w) = &e.witness {
                write!(f, " at {w}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn tol(declared: f64) -> f64 {
    1e-9 * (1.0 + declared.abs())
}

struct Sample {
    w: Witness,
}

fn draw(rng: &mut ChaCha8Rng, s: &AuditSampler, k: usize, d: usize, m: usize, sd: usize) -> Sample {
    let mut u = |r: f64, n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-r..=r)).collect() };
    let state = u(s.state_range, sd);
    let y = u(s.y_range, k);
    let y2 = u(s.y_range, k);
    let z = u(s.z_range, k * d);
    let z2 = u(s.z_range, k * d);
    let v = u(s.v_range, k * m);
    let v2 = u(s.v_range, k * m);
    let t = rng.random_range(0.0..=s.horizon);
    Sample {
        w: Witness {
            t,
            state,
            y,
            y2,
            z,
            z2,
            v,
            v2,
        },
    }
}

fn eval(g: &GeneratorSpec, t: f64, state: &[f64], y: &[f64], z: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.dim];
    (g.driver)(&DriverArgs { t, state, y, z, v }, &mut out);
    out
}

struct Worst {
    name: &'static str,
    declared: f64,
    value: f64,
    at: Option<Witness>,
    cmp: fn(f64, f64, f64) -> bool,
}

impl Worst {
    fn new(name: &'static str, declared: f64, cmp: fn(f64, f64, f64) -> bool) -> Self {
        Worst {
            name,
            declared,
            value: f64::NEG_INFINITY,
            at: None,
            cmp,
        }
    }

    fn push(&mut self, v: f64, w: &Witness) {
        if v > self.value || v.is_nan() {
            self.value = v;
            self.at = Some(w.clone());
        }
    }

    fn finish(self) -> AuditEntry {
        let observed = if self.value == f64::NEG_INFINITY { 0.0 } else { self.value };
        let pass = observed.is_finite() && (self.cmp)(observed, self.declared, tol(self.declared));
        AuditEntry {
            name: self.name,
            declared: self.declared,
            observed,
            pass,
            witness: if pass { None } else { self.at },
        }
    }
}

fn at_most(obs: f64, decl: f64, tol: f64) -> bool {
    obs <= decl + tol
}

fn finite_only(obs: f64, _: f64, _: f64) -> bool {
    obs.is_finite()
}

/// Worst-case sampled ratios against the declared `µ`, `L_z`, `L_v`.
///
/// Entries: `monotonicity` (sup of `⟨f(y) − f(y'), y − y'⟩ / |y − y'|²`),
/// `lipschitz_z`, `lipschitz_v`, the growth `sup |f(t,y,0,0) − f(t,0,0,0)|`
/// over the sampled `y` and a continuity modulus in `y`; the last two only
/// check finiteness.
pub fn audit_hypotheses(g: &GeneratorSpec, model: &NoiseModel, s: &AuditSampler) -> AuditReport {
    let (k, d, m, sd) = (g.dim, model.brownian_dim, model.atoms(), model.state_dim());
    let lam = model.marks.intensities();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut mono = Worst::new("monotonicity", g.mu, at_most);
    let mut lz = Worst::new("lipschitz_z", g.lz, at_most);
    let mut lv = Worst::new("lipschitz_v", g.lv, at_most);
    let mut growth = Worst::new("growth_y", f64::INFINITY, finite_only);
    let mut cont = Worst::new("continuity_y", f64::INFINITY, finite_only);
    for _ in 0..s.samples {
        let Sample { w } = draw(&mut rng, s, k, d, m, sd);
        let (t, st) = (w.t, &w.state);
        let f1 = eval(g, t, st, &w.y, &w.z, &w.v);
        let f2 = eval(g, t, st, &w.y2, &w.z, &w.v);
        let dy: Vec<f64> = w.y.iter().zip(&w.y2).map(|(a, b)| a - b).collect();
        let dy2: f64 = dy.iter().map(|x| x * x).sum();
        if dy2 > 0.0 {
            let inner: f64 = f1.iter().zip(&f2).zip(&dy).map(|((a, b), c)| (a - b) * c).sum();
            mono.push(inner / dy2, &w);
        }
        if k * d > 0 {
            let f3 = eval(g, t, st, &w.y, &w.z2, &w.v);
            let dz = norm(&w.z.iter().zip(&w.z2).map(|(a, b)| a - b).collect::<Vec<_>>());
            if dz > 0.0 {
                let df = norm(&f1.iter().zip(&f3).map(|(a, b)| a - b).collect::<Vec<_>>());
                lz.push(df / dz, &w);
            }
        }
        if k * m > 0 {
            let f4 = eval(g, t, st, &w.y, &w.z, &w.v2);
            let dvv: Vec<f64> = w.v.iter().zip(&w.v2).map(|(a, b)| a - b).collect();
            let dv = l2_lambda_norm_raw(&dvv, k, lam);
            if dv > 0.0 {
                let df = norm(&f1.iter().zip(&f4).map(|(a, b)| a - b).collect::<Vec<_>>());
                lv.push(df / dv, &w);
            }
        }
        let zz = vec![0.0; k * d];
        let vv = vec![0.0; k * m];
        let g0 = eval(g, t, st, &vec![0.0; k], &zz, &vv);
        let gy = eval(g, t, st, &w.y, &zz, &vv);
        growth.push(norm(&gy.iter().zip(&g0).map(|(a, b)| a - b).collect::<Vec<_>>()), &w);
        let yh: Vec<f64> = w.y.iter().map(|y| y + 1e-7).collect();
        let gh = eval(g, t, st, &yh, &w.z, &w.v);
        cont.push(norm(&gh.iter().zip(&f1).map(|(a, b)| a - b).collect::<Vec<_>>()), &w);
    }
    AuditReport {
        entries: vec![mono.finish(), lz.finish(), lv.finish(), growth.finish(), cont.finish()],
    }
}

/// Checks the three kernel conditions on sampled `(y, z, v, v')`:
/// `κ ≥ −1`, `|κ| ≤ ϑ`, and `f(v) − f(v') ≤ ∫ (v − v') κ dλ`.
pub fn audit_kernel(g: &GeneratorSpec, model: &NoiseModel, s: &AuditSampler) -> Result<AuditReport> {
    let ker = g.kernel.as_ref().ok_or(Error::MissingKernel)?;
    if g.dim != 1 {
        return Err(Error::DimensionMismatch {
            context: "kernel audit (scalar generators only)",
            expected: 1,
            got: g.dim,
        });
    }
    let (d, m, sd) = (model.brownian_dim, model.atoms(), model.state_dim());
    let lam = model.marks.intensities();
    let theta: Vec<f64> = if ker.theta.is_empty() {
        vec![0.0; m]
    } else {
        ker.theta.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed ^ 0x6b65726e);
    let mut lower = Worst::new("kernel_lower", -1.0, |obs, decl, tol| -obs <= -decl + tol);
    let mut bound = Worst::new("kernel_bound", 0.0, at_most);
    let mut dom = Worst::new("kernel_domination", 0.0, at_most);
    let mut kap = vec![0.0; m];
    for _ in 0..s.samples {
        let Sample { w } = draw(&mut rng, s, 1, d, m, sd);
        (ker.kappa)(
            &KernelArgs {
                t: w.t,
                state: &w.state,
                y: &w.y,
                z: &w.z,
                v: &w.v,
                v2: &w.v2,
            },
            &mut kap,
        );
        // track the negated minimum so that `push` keeps the most negative kernel value
        for (j, &kj) in kap.iter().enumerate() {
            lower.push(-kj, &w);
            bound.push(kj.abs() - theta.get(j).copied().unwrap_or(0.0), &w);
        }
        let f1 = eval(g, w.t, &w.state, &w.y, &w.z, &w.v)[0];
        let f2 = eval(g, w.t, &w.state, &w.y, &w.z, &w.v2)[0];
        let dv: Vec<f64> = w.v.iter().zip(&w.v2).map(|(a, b)| a - b).collect();
        let rhs = integrate_kernel_raw(&dv, &kap, lam);
        let scale = 1.0 + f1.abs() + f2.abs() + rhs.abs();
        dom.push((f1 - f2 - rhs) / scale, &w);
    }
    let mut lower = lower.finish();
    // report the minimum itself
    lower.observed = -lower.observed;
    lower.pass = lower.observed.is_finite() && lower.observed >= -1.0 - tol(1.0);
    if lower.pass {
        lower.witness = None;
    }
    Ok(AuditReport {
        entries: vec![lower, bound.finish(), dom.finish()],
    })
}

/// Monte-Carlo `E|ξ|^p`, `E(∫|f(t,0,0,0)|dt)^p` and `E|R|_T^p` on a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrabilityReport {
    pub p: f64,
    pub xi: MeanSe,
    pub f0: MeanSe,
    pub r: MeanSe,
}

impl IntegrabilityReport {
    pub fn finite(&self) -> bool {
        self.xi.is_finite() && self.f0.is_finite() && self.r.is_finite()
    }
}

pub fn integrability_report(prob: &GbsdeProblem, bundle: &PathBundle) -> IntegrabilityReport {
    let grid = *bundle.grid();
    let n = grid.steps();
    let (h, p) = (grid.h(), prob.p);
    let layout = StateLayout::of(bundle.model());
    let (d, m) = (bundle.brownian_dim(), bundle.atoms());
    let rows = par::map_indices(bundle.n_paths(), |path| {
        let mut xi = vec![0.0; prob.dim()];
        prob.terminal
            .eval(&TerminalView::new(grid.horizon(), bundle.state(path, n), layout), &mut xi);
        let f0: f64 = (0..n)
            .map(|i| prob.generator.f0_abs(grid.t(i), bundle.state(path, i), d, m) * h)
            .sum();
        let r: f64 = bundle.r_increments(&prob.r_spec, path).1.iter().sum();
        (norm(&xi).powf(p), f0.powf(p), r.powf(p))
    });
    let col = |f: fn(&(f64, f64, f64)) -> f64| MeanSe::from_samples(&rows.iter().map(f).collect::<Vec<_>>());
    IntegrabilityReport {
        p,
        xi: col(|r| r.0),
        f0: col(|r| r.1),
        r: col(|r| r.2),
    }
}
