//! Built-in generators addressable by name from a config.

use std::fmt;
use std::sync::Arc;

use super::{DriverArgs, DriverFn, GeneratorSpec, KernelArgs, KernelFn};
use crate::error::{invalid, Result};
use crate::mark_space::{l2_lambda_norm_raw, MarkSpace};
use crate::path_engine::{NoiseModel, RateFn};

/// `f ≡ 0` in dimension `k`.
pub fn zero(k: usize) -> GeneratorSpec {
    let f: DriverFn = Arc::new(|_: &DriverArgs, out: &mut [f64]| out.fill(0.0));
    let g = GeneratorSpec::new("zero", k.max(1), f, 0.0, 0.0, 0.0).unwrap();
    let kappa: KernelFn = Arc::new(|_: &KernelArgs, out: &mut [f64]| out.fill(0.0));
    g.with_f0_bound(Arc::new(|_, _| 0.0))
        .with_kernel(kappa, Vec::new())
        .unwrap()
}

/// `f ≡ c`.
pub fn constant_driver(c: f64) -> GeneratorSpec {
    let f: DriverFn = Arc::new(move |_: &DriverArgs, out: &mut [f64]| out[0] = c);
    let kappa: KernelFn = Arc::new(|_: &KernelArgs, out: &mut [f64]| out.fill(0.0));
    GeneratorSpec::new(format!("constant_driver({c})"), 1, f, 0.0, 0.0, 0.0)
        .unwrap()
        .with_f0_bound(Arc::new(move |_, _| c.abs()))
        .with_kernel(kappa, Vec::new())
        .unwrap()
}

/// `f = f_t + α y + β·z + Σ_j λ_j γ_j v_j`, scalar.
///
/// `γ` has one entry per atom of `marks`; a kernel `κ = γ` is attached when
/// every `γ_j ≥ −1`.
pub fn linear(alpha: f64, beta: Vec<f64>, gamma: Vec<f64>, marks: &MarkSpace, forcing: RateFn) -> Result<GeneratorSpec> {
    if gamma.len() != marks.atoms() {
        return Err(invalid(
            "gamma",
            format!("expected {} entries (one per atom), got {}", marks.atoms(), gamma.len()),
        ));
    }
    if !(alpha.is_finite() && beta.iter().chain(&gamma).all(|x| x.is_finite())) {
        return Err(invalid("linear", "coefficients must be finite"));
    }
    let lam = marks.intensities().to_vec();
    let lz = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
    let lv = l2_lambda_norm_raw(&gamma, 1, &lam);
    let wl: Vec<f64> = gamma.iter().zip(&lam).map(|(g, l)| g * l).collect();
    let (b2, fc) = (beta.clone(), forcing.clone());
    let f: DriverFn = Arc::new(move |a: &DriverArgs, out: &mut [f64]| {
        let mut s = fc.eval(a.t, a.state) + alpha * a.y[0];
        for (b, z) in b2.iter().zip(a.z) {
            s += b * z;
        }
        for (w, v) in wl.iter().zip(a.v) {
            s += w * v;
        }
        out[0] = s;
    });
    let label = format!("linear({alpha}, {beta:?}, {gamma:?})");
    let fb = forcing.clone();
    let mut g = GeneratorSpec::new(label, 1, f, alpha, lz, lv)?.with_f0_bound(Arc::new(move |t, s| fb.eval(t, s).abs()));
    if gamma.iter().all(|g| *g >= -1.0) {
        let k = gamma.clone();
        let kappa: KernelFn = Arc::new(move |_: &KernelArgs, out: &mut [f64]| out.copy_from_slice(&k));
        g = g.with_kernel(kappa, gamma.iter().map(|x| x.abs()).collect())?;
    }
    Ok(g)
}

/// `f = −y³ + b Σ_l z_l` on `d` Brownian coordinates.
pub fn monotone_cubic(b: f64, d: usize) -> GeneratorSpec {
    let f: DriverFn = Arc::new(move |a: &DriverArgs, out: &mut [f64]| {
        let y = a.y[0];
        out[0] = -y * y * y + b * a.z.iter().sum::<f64>();
    });
    let kappa: KernelFn = Arc::new(|_: &KernelArgs, out: &mut [f64]| out.fill(0.0));
    GeneratorSpec::new(format!("monotone_cubic({b})"), 1, f, 0.0, b.abs() * (d as f64).sqrt(), 0.0)
        .unwrap()
        .with_f0_bound(Arc::new(|_, _| 0.0))
        .with_kernel(kappa, Vec::new())
        .unwrap()
}

/// `f = c Σ_j λ_j sin(v_j)` with the mean-value kernel `κ_j = c (sin v_j − sin v'_j)/(v_j − v'_j)`.
pub fn jump_kernel(c: f64, marks: &MarkSpace) -> Result<GeneratorSpec> {
    if !(c.abs() <= 1.0) {
        return Err(invalid("jump_kernel", "|c| must be at most 1 so that the kernel stays >= -1"));
    }
    let lam = marks.intensities().to_vec();
    let l2 = lam.clone();
    let f: DriverFn = Arc::new(move |a: &DriverArgs, out: &mut [f64]| {
        out[0] = c * l2.iter().zip(a.v).map(|(l, v)| l * v.sin()).sum::<f64>();
    });
    let kappa: KernelFn = Arc::new(move |a: &KernelArgs, out: &mut [f64]| {
        for ((o, v), w) in out.iter_mut().zip(a.v).zip(a.v2) {
            let dv = v - w;
            *o = if dv.abs() > 1e-12 {
                c * (v.sin() - w.sin()) / dv
            } else {
                c * (0.5 * (v + w)).cos()
            };
        }
    });
    let lv = c.abs() * marks.total_intensity().sqrt();
    GeneratorSpec::new(format!("jump_kernel({c})"), 1, f, 0.0, 0.0, lv)?
        .with_f0_bound(Arc::new(|_, _| 0.0))
        .with_kernel(kappa, vec![c.abs(); marks.atoms()])
}

/// Library generators as they appear in configs.
#[derive(Debug, Clone, PartialEq)]
pub enum LibraryGenerator {
    Zero,
    ConstantDriver(f64),
    /// `β` and `γ` of length one broadcast to every Brownian coordinate / atom.
    Linear {
        alpha: f64,
        beta: Vec<f64>,
        gamma: Vec<f64>,
        forcing: f64,
    },
    MonotoneCubic(f64),
    JumpKernel(f64),
}

fn broadcast(name: &str, v: &[f64], n: usize) -> Result<Vec<f64>> {
    match v.len() {
        1 => Ok(vec![v[0]; n]),
        l if l == n => Ok(v.to_vec()),
        l => Err(invalid(name, format!("expected 1 or {n} entries, got {l}"))),
    }
}

impl LibraryGenerator {
    pub fn build(&self, model: &NoiseModel) -> Result<GeneratorSpec> {
        Ok(match self {
            LibraryGenerator::Zero => zero(1),
            LibraryGenerator::ConstantDriver(c) => constant_driver(*c),
            LibraryGenerator::Linear {
                alpha,
                beta,
                gamma,
                forcing,
            } => linear(
                *alpha,
                broadcast("beta", beta, model.brownian_dim)?,
                broadcast("gamma", gamma, model.atoms())?,
                &model.marks,
                RateFn::Constant(*forcing),
            )?,
            LibraryGenerator::MonotoneCubic(b) => monotone_cubic(*b, model.brownian_dim),
            LibraryGenerator::JumpKernel(c) => jump_kernel(*c, &model.marks)?,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let (name, args) = match text.find('(') {
            Some(i) => {
                let inner = text[i + 1..]
                    .strip_suffix(')')
                    .ok_or_else(|| invalid("generator", format!("unbalanced parentheses in `{text}`")))?;
                (text[..i].trim(), split_args(inner))
            }
            None => (text, Vec::new()),
        };
        let scalar = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| invalid("generator", format!("malformed number `{}`", s.trim())))
        };
        let vector = |s: &str| -> Result<Vec<f64>> {
            let s = s.trim();
            match s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                Some(inner) => inner.split_whitespace().map(scalar).collect(),
                None => Ok(vec![scalar(s)?]),
            }
        };
        let arity = |lo: usize, hi: usize| -> Result<()> {
            if args.len() < lo || args.len() > hi {
                Err(invalid("generator", format!("`{name}` takes {lo} to {hi} arguments, got {}", args.len())))
            } else {
                Ok(())
            }
        };
        match name {
            "zero" => {
                arity(0, 0)?;
                Ok(LibraryGenerator::Zero)
            }
            "constant_driver" => {
                arity(0, 1)?;
                Ok(LibraryGenerator::ConstantDriver(match args.first() {
                    Some(a) => scalar(a)?,
                    None => 1.0,
                }))
            }
            "linear" => {
                arity(3, 4)?;
                Ok(LibraryGenerator::Linear {
                    alpha: scalar(&args[0])?,
                    beta: vector(&args[1])?,
                    gamma: vector(&args[2])?,
                    forcing: match args.get(3) {
                        Some(a) => scalar(a)?,
                        None => 0.0,
                    },
                })
            }
            "monotone_cubic" => {
                arity(0, 1)?;
                Ok(LibraryGenerator::MonotoneCubic(match args.first() {
                    Some(a) => scalar(a)?,
                    None => 0.0,
                }))
            }
            "jump_kernel" => {
                arity(0, 1)?;
                Ok(LibraryGenerator::JumpKernel(match args.first() {
                    Some(a) => scalar(a)?,
                    None => 1.0,
                }))
            }
            other => Err(invalid("generator", format!("unknown library generator `{other}`"))),
        }
    }
}

pub(crate) fn split_args(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '[' | '(' => depth += 1,
            ']' | ')' => depth -= 1,
            _ => {}
        }
        if c == ',' && depth == 0 {
            out.push(cur.trim().to_string());
            cur.clear();
        } else {
            cur.push(c);
        }
    }
    if !cur.trim().is_empty() || !out.is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn fmt_vec(v: &[f64]) -> String {
    if v.len() == 1 {
        v[0].to_string()
    } else {
        let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        format!("[{}]", parts.join(" "))
    }
}

impl fmt::Display for LibraryGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LibraryGenerator::Zero => write!(f, "zero"),
            LibraryGenerator::ConstantDriver(c) => write!(f, "constant_driver({c})"),
            LibraryGenerator::Linear {
                alpha,
                beta,
                gamma,
                forcing,
            } => {
                write!(f, "linear({alpha}, {}, {}", fmt_vec(beta), fmt_vec(gamma))?;
                if *forcing != 0.0 {
                    write!(f, ", {forcing}")?;
                }
                write!(f, ")")
            }
            LibraryGenerator::MonotoneCubic(b) => write!(f, "monotone_cubic({b})"),
            LibraryGenerator::JumpKernel(c) => write!(f, "jump_kernel({c})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator_model::evaluate;

    #[test]
    fn linear_evaluates_each_term() {
        let ms = MarkSpace::new(vec![vec![1.0], vec![2.0]], vec![1.0, 4.0]).unwrap();
        let g = linear(-0.5, vec![0.3, -1.0], vec![0.2, 0.5], &ms, RateFn::Affine { a: 1.0, b: 2.0 }).unwrap();
        let got = evaluate(&g, 0.5, &[], &[2.0], &[1.0, 0.5], &[1.0, -1.0]).unwrap()[0];
        // 2 + (-1) + (0.3 - 0.5) + (1*0.2*1 + 4*0.5*(-1))
        assert!((got - (2.0 - 1.0 - 0.2 + 0.2 - 2.0)).abs() < 1e-14);
        assert_eq!(g.mu, -0.5);
        assert!((g.lz - 1.09f64.sqrt()).abs() < 1e-15);
        assert!((g.lv - (0.04f64 + 1.0).sqrt()).abs() < 1e-15);
        assert!(g.kernel.is_some());
        assert!(linear(0.0, vec![], vec![-2.0], &MarkSpace::single(1.0, 1.0).unwrap(), RateFn::Constant(0.0))
            .unwrap()
            .kernel
            .is_none());
    }

    #[test]
    fn linear_rejects_wrong_gamma_length() {
        let ms = MarkSpace::single(1.0, 1.0).unwrap();
        assert!(linear(0.0, vec![], vec![0.1, 0.2], &ms, RateFn::Constant(0.0)).is_err());
    }

    #[test]
    fn jump_kernel_bounds() {
        let ms = MarkSpace::single(1.0, 2.0).unwrap();
        assert!(jump_kernel(1.5, &ms).is_err());
        let g = jump_kernel(0.5, &ms).unwrap();
        let v = evaluate(&g, 0.0, &[], &[0.0], &[], &[1.0]).unwrap()[0];
        assert!((v - 0.5 * 2.0 * 1.0f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn library_round_trip() {
        for s in [
            "zero",
            "constant_driver(1)",
            "linear(-0.5, 0.3, 0.2)",
            "linear(0.2, [0.1 -0.4], [0.5 0.5], 1)",
            "monotone_cubic(0)",
            "jump_kernel(0.8)",
        ] {
            let g = LibraryGenerator::parse(s).unwrap();
            assert_eq!(g.to_string(), s);
            assert_eq!(LibraryGenerator::parse(&g.to_string()).unwrap(), g);
        }
        assert_eq!(LibraryGenerator::parse("constant_driver").unwrap(), LibraryGenerator::ConstantDriver(1.0));
        assert!(LibraryGenerator::parse("linear(1, 2)").is_err());
        assert!(LibraryGenerator::parse("nope").is_err());
        assert!(LibraryGenerator::parse("linear(a, 1, 1)").is_err());
    }

    #[test]
    fn build_broadcasts() {
        let model = NoiseModel::brownian(2).with_marks(MarkSpace::single(1.0, 1.0).unwrap());
        let g = LibraryGenerator::parse("linear(0, 1, 0.5)").unwrap().build(&model).unwrap();
        let v = evaluate(&g, 0.0, &[0.0; 3], &[0.0], &[1.0, 2.0], &[2.0]).unwrap()[0];
        assert_eq!(v, 4.0);
        let bad = LibraryGenerator::parse("linear(0, [1 2 3], 0)").unwrap();
        assert!(bad.build(&model).is_err());
    }
}
