//! Problem data `(ξ, f, R)` and sampled audits of the generator hypotheses.
//!
//! Shapes used throughout: `y ∈ R^k`, `z` is `k × d` row-major
//! (`z[c * d + l]`), and `v` is atom-major with block `k` (`v[j * k + c]`).

mod audit;
pub mod library;
pub mod terminal;

pub use audit::{
    audit_hypotheses, audit_kernel, integrability_report, AuditEntry, AuditReport, AuditSampler,
    IntegrabilityReport, Witness,
};
pub use library::{constant_driver, jump_kernel, linear, monotone_cubic, zero, LibraryGenerator};
pub use terminal::{Expr, StateLayout, Terminal, TerminalView};

use std::fmt;
use std::sync::Arc;

use crate::error::{check_len, invalid, Error, Result};
use crate::path_engine::RSpec;

/// Arguments of one generator evaluation.
#[derive(Debug, Clone, Copy)]
pub struct DriverArgs<'a> {
    pub t: f64,
    /// Full forward state `[W, N, B, X?]` at `t`.
    pub state: &'a [f64],
    pub y: &'a [f64],
    pub z: &'a [f64],
    pub v: &'a [f64],
}

/// Arguments of the comparison kernel `κ(t, y, z, v, v')`.
#[derive(Debug, Clone, Copy)]
pub struct KernelArgs<'a> {
    pub t: f64,
    pub state: &'a [f64],
    pub y: &'a [f64],
    pub z: &'a [f64],
    pub v: &'a [f64],
    pub v2: &'a [f64],
}

pub type DriverFn = Arc<dyn Fn(&DriverArgs, &mut [f64]) + Send + Sync>;
pub type KernelFn = Arc<dyn Fn(&KernelArgs, &mut [f64]) + Send + Sync>;
pub type BoundFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Kernel `κ` with pointwise bound `ϑ` for one-dimensional comparison.
#[derive(Clone)]
pub struct Kernel {
    pub kappa: KernelFn,
    pub theta: Vec<f64>,
}

/// A generator with its declared constants.
#[derive(Clone)]
pub struct GeneratorSpec {
    pub label: String,
    pub dim: usize,
    pub driver: DriverFn,
    /// Monotonicity constant in `y`.
    pub mu: f64,
    /// Lipschitz constant in `z`.
    pub lz: f64,
    /// Lipschitz constant in `v` for `‖·‖_λ`.
    pub lv: f64,
    /// `t ↦ |f(t, 0, 0, 0)|`; evaluated from the driver when absent.
    pub f0_bound: Option<BoundFn>,
    pub kernel: Option<Kernel>,
}

impl fmt::Debug for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneratorSpec")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("mu", &self.mu)
            .field("lz", &self.lz)
            .field("lv", &self.lv)
            .field("kernel", &self.kernel.as_ref().map(|k| &k.theta))
            .finish()
    }
}

impl GeneratorSpec {
    pub fn new(label: impl Into<String>, dim: usize, driver: DriverFn, mu: f64, lz: f64, lv: f64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension", "must be at least 1"));
        }
        for (name, c) in [("mu", mu), ("lz", lz), ("lv", lv)] {
            if !c.is_finite() {
                return Err(invalid(name, "constant must be finite"));
            }
        }
        if lz < 0.0 || lv < 0.0 {
            return Err(invalid("lipschitz", "constants must be nonnegative"));
        }
        Ok(GeneratorSpec {
            label: label.into(),
            dim,
            driver,
            mu,
            lz,
            lv,
            f0_bound: None,
            kernel: None,
        })
    }

    pub fn with_f0_bound(mut self, b: BoundFn) -> Self {
        self.f0_bound = Some(b);
        self
    }

    /// Attaches a comparison kernel; `ϑ` must be finite and nonnegative.
    pub fn with_kernel(mut self, kappa: KernelFn, theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(invalid("theta", "kernel bound must be finite and nonnegative"));
        }
        self.kernel = Some(Kernel { kappa, theta });
        Ok(self)
    }

    /// Lipschitz constant used by the weights `a ≥ µ + 2L²`.
    pub fn lipschitz(&self) -> f64 {
        self.lz.max(self.lv)
    }

    /// `|f(t, 0, 0, 0)|` at `(t, state)`.
    pub fn f0_abs(&self, t: f64, state: &[f64], d: usize, atoms: usize) -> f64 {
        if let Some(b) = &self.f0_bound {
            return b(t, state);
        }
        let k = self.dim;
        let zeros = vec![0.0; k * d.max(atoms).max(1)];
        let mut out = vec![0.0; k];
        (self.driver)(
            &DriverArgs {
                t,
                state,
                y: &zeros[..k],
                z: &zeros[..k * d],
                v: &zeros[..k * atoms],
            },
            &mut out,
        );
        norm(&out)
    }
}

/// Evaluates `f` once, checking shapes and finiteness.
pub fn evaluate(g: &GeneratorSpec, t: f64, state: &[f64], y: &[f64], z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let k = g.dim;
    check_len("generator y", k, y.len())?;
    if z.len() % k != 0 {
        return Err(Error::DimensionMismatch {
            context: "generator z",
            expected: k * (z.len() / k + 1),
            got: z.len(),
        });
    }
    if v.len() % k != 0 {
        return Err(Error::DimensionMismatch {
            context: "generator v",
            expected: k * (v.len() / k + 1),
            got: v.len(),
        });
    }
    let mut out = vec![0.0; k];
    (g.driver)(&DriverArgs { t, state, y, z, v }, &mut out);
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("generator `{}` at t = {t}", g.label),
        });
    }
    Ok(out)
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// `T_n(x) = x n / max(|x|, n)`.
pub fn truncate(x: &[f64], n: f64) -> Vec<f64> {
    let mut out = x.to_vec();
    truncate_in_place(&mut out, n);
    out
}

pub fn truncate_in_place(x: &mut [f64], n: f64) {
    if n == f64::INFINITY {
        return;
    }
    let r = norm(x);
    if r > n {
        let s = n / r;
        for a in x.iter_mut() {
            *a *= s;
        }
    }
}

/// The data triple with its dimension and integrability order.
#[derive(Debug, Clone)]
pub struct GbsdeProblem {
    pub terminal: Terminal,
    pub generator: GeneratorSpec,
    pub r_spec: RSpec,
    pub p: f64,
}

impl GbsdeProblem {
    pub fn new(terminal: Terminal, generator: GeneratorSpec, r_spec: RSpec) -> Result<Self> {
        if terminal.dim() != generator.dim {
            return Err(Error::DimensionMismatch {
                context: "terminal vs generator",
                expected: generator.dim,
                got: terminal.dim(),
            });
        }
        Ok(GbsdeProblem {
            terminal,
            generator,
            r_spec,
            p: 2.0,
        })
    }

    pub fn with_p(mut self, p: f64) -> Result<Self> {
        if !(p >= 2.0 && p.is_finite()) {
            return Err(invalid("p", "integrability order must be finite and at least 2"));
        }
        self.p = p;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.generator.dim
    }
}

/// Truncated data `(T_n(ξ), f − f(·,0,0,0) + T_n(f(·,0,0,0)), ∫1{|R|_{s-} ≤ n} dR)`.
///
/// `n = ∞` returns the input unchanged, and whenever nothing exceeds `n` the
/// truncated data evaluate bit-identically to the original.
pub fn truncate_problem(prob: &GbsdeProblem, n: f64) -> Result<GbsdeProblem> {
    if !(n > 0.0) {
        return Err(invalid("truncation level", "must be positive"));
    }
    if n == f64::INFINITY {
        return Ok(prob.clone());
    }
    let g = &prob.generator;
    let k = g.dim;
    let inner = g.driver.clone();
    let driver: DriverFn = Arc::new(move |a: &DriverArgs, out: &mut [f64]| {
        inner(a, out);
        let y0 = vec![0.0; a.y.len()];
        let z0 = vec![0.0; a.z.len()];
        let v0 = vec![0.0; a.v.len()];
        let mut f0 = vec![0.0; k];
        inner(
            &DriverArgs {
                t: a.t,
                state: a.state,
                y: &y0,
                z: &z0,
                v: &v0,
            },
            &mut f0,
        );
        let r = norm(&f0);
        if r > n {
            let s = n / r;
            for (o, f) in out.iter_mut().zip(&f0) {
                *o += f * s - f;
            }
        }
    });
    let generator = GeneratorSpec {
        label: format!("{}|trunc({n})", g.label),
        driver,
        f0_bound: g.f0_bound.clone().map(|b| -> BoundFn { Arc::new(move |t, s| b(t, s).min(n)) }),
        ..g.clone()
    };
    Ok(GbsdeProblem {
        terminal: prob.terminal.truncated(n),
        generator,
        r_spec: prob.r_spec.truncated(n),
        p: prob.p,
    })
}
