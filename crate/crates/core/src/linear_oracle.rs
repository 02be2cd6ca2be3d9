//! Ground truth for linear equations through the stochastic exponential.
//!
//! For `f = f_t + α y + β·z + Σ_j λ_j γ_j v_j` the solution at time `t` is
//! `E[ξ Γ_{t,T} + ∫ Γ_{t,s} f_s ds + ∫ Γ_{t,s-} dR_s | F_t]`, where on the
//! grid
//!
//! ```text
//! Γ_{t,s} = Π_i exp(α h + β·ΔW_i − |β|² h / 2) Π_j (1 + γ_j)^{n_ij} e^{−γ_j λ_j h}
//! ```
//!
//! with `i` running over the steps between the two nodes.

use crate::error::{invalid, Error, Result};
use crate::generator_model::{library, GbsdeProblem, Terminal, TerminalView};
use crate::generator_model::terminal::StateLayout;
use crate::mark_space::MarkSpace;
use crate::par;
use crate::path_engine::{path_rng, NoiseModel, PathBundle, RSpec, RateFn, StepDraw, StepSampler};
use crate::stats::MeanSe;

/// Constant coefficients `(α, β, γ)` with forcing, terminal condition and `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCoefficients {
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub forcing: RateFn,
    pub terminal: Terminal,
    pub r_spec: RSpec,
}

impl LinearCoefficients {
    /// Validates shapes against `model` and rejects `γ_j < −1`.
    pub fn new(
        alpha: f64,
        beta: Vec<f64>,
        gamma: Vec<f64>,
        forcing: RateFn,
        terminal: Terminal,
        r_spec: RSpec,
        model: &NoiseModel,
    ) -> Result<Self> {
        if beta.len() != model.brownian_dim {
            return Err(Error::DimensionMismatch {
                context: "linear beta",
                expected: model.brownian_dim,
                got: beta.len(),
            });
        }
        if gamma.len() != model.atoms() {
            return Err(Error::DimensionMismatch {
                context: "linear gamma",
                expected: model.atoms(),
                got: gamma.len(),
            });
        }
        if let Some(g) = gamma.iter().find(|g| !(**g >= -1.0)) {
            return Err(invalid("gamma", format!("jump coefficient {g} is below -1")));
        }
        if !(alpha.is_finite() && beta.iter().chain(&gamma).all(|x| x.is_finite())) {
            return Err(invalid("linear", "coefficients must be finite"));
        }
        if terminal.dim() != 1 {
            return Err(invalid("terminal", "linear oracle is scalar"));
        }
        terminal.validate(&StateLayout::of(model))?;
        Ok(LinearCoefficients {
            alpha,
            beta,
            gamma,
            forcing,
            terminal,
            r_spec,
        })
    }

    /// The same equation as a solver problem.
    pub fn to_problem(&self, marks: &MarkSpace) -> Result<GbsdeProblem> {
        let g = library::linear(self.alpha, self.beta.clone(), self.gamma.clone(), marks, self.forcing.clone())?;
        GbsdeProblem::new(self.terminal.clone(), g, self.r_spec.clone())
    }

    fn drift_log(&self, marks: &MarkSpace, h: f64) -> f64 {
        let b2: f64 = self.beta.iter().map(|b| b * b).sum();
        let comp: f64 = self.gamma.iter().zip(marks.intensities()).map(|(g, l)| g * l).sum();
        (self.alpha - 0.5 * b2 - comp) * h
    }

    /// Per-step factor of `Γ` given the step's increments.
    fn step_factor(&self, drift: f64, dw: &[f64], counts: &[u32]) -> f64 {
        let bw: f64 = self.beta.iter().zip(dw).map(|(b, w)| b * w).sum();
        let mut g = (drift + bw).exp();
        for (&n, gam) in counts.iter().zip(&self.gamma) {
            if n > 0 {
                g *= (1.0 + gam).powi(n as i32);
            }
        }
        g
    }
}

/// `Γ_{t,s}` on path `p` of the bundle, for node indices `t ≤ s`.
pub fn doleans_gamma(bundle: &PathBundle, p: usize, c: &LinearCoefficients, t: usize, s: usize) -> Result<f64> {
    if t > s || s > bundle.steps() {
        return Err(invalid("gamma indices", format!("need t <= s <= {}, got ({t}, {s})", bundle.steps())));
    }
    let drift = c.drift_log(bundle.marks(), bundle.grid().h());
    let mut g = 1.0;
    for i in t..s {
        g *= c.step_factor(drift, bundle.dw(p, i), bundle.counts(p, i));
    }
    Ok(g)
}

/// Euler scheme `Γ_{i+1} = Γ_i (1 + α h + β·ΔW_i + Σ_j γ_j Δπ̂_ij)` for cross-checks.
pub fn euler_gamma(bundle: &PathBundle, p: usize, c: &LinearCoefficients, t: usize, s: usize) -> f64 {
    let h = bundle.grid().h();
    let mut comp = vec![0.0; bundle.atoms()];
    let mut g = 1.0;
    for i in t..s {
        bundle.compensated_into(p, i, &mut comp);
        let bw: f64 = c.beta.iter().zip(bundle.dw(p, i)).map(|(b, w)| b * w).sum();
        let jw: f64 = c.gamma.iter().zip(&comp).map(|(g, x)| g * x).sum();
        g *= 1.0 + c.alpha * h + bw + jw;
    }
    g
}

/// Per-path sample `ξ Γ_{0,T} + Σ_i Γ_{0,t_i} (f_{t_i} h + ΔR_i)`.
fn path_sample(bundle: &PathBundle, p: usize, c: &LinearCoefficients, layout: StateLayout) -> f64 {
    let grid = bundle.grid();
    let (h, n) = (grid.h(), grid.steps());
    let drift = c.drift_log(bundle.marks(), h);
    let (dr, _) = bundle.r_increments(&c.r_spec, p);
    let mut g = 1.0;
    let mut acc = 0.0;
    for i in 0..n {
        let state = bundle.state(p, i);
        acc += g * (c.forcing.eval(grid.t(i), state) * h + dr[i]);
        g *= c.step_factor(drift, bundle.dw(p, i), bundle.counts(p, i));
    }
    let xi = c
        .terminal
        .eval_scalar(&TerminalView::new(grid.horizon(), bundle.state(p, n), layout))
        .unwrap_or(f64::NAN);
    acc + g * xi
}

/// Monte-Carlo `Y_0` with its standard error on the given bundle.
pub fn linear_y0_on(c: &LinearCoefficients, bundle: &PathBundle) -> Result<MeanSe> {
    let layout = StateLayout::of(bundle.model());
    let xs = par::map_indices(bundle.n_paths(), |p| path_sample(bundle, p, c, layout));
    if let Some(p) = xs.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("linear oracle sample on path {p}"),
        });
    }
    Ok(MeanSe::from_samples(&xs))
}

/// Simulates a fresh bundle and estimates `Y_0`.
pub fn linear_y0(
    c: &LinearCoefficients,
    grid: crate::path_engine::TimeGrid,
    model: &NoiseModel,
    n_paths: usize,
    seed: u64,
) -> Result<MeanSe> {
    let model = model.clone().with_r(c.r_spec.clone());
    let bundle = crate::path_engine::simulate(grid, &model, seed, n_paths)?;
    linear_y0_on(c, &bundle)
}

/// Interior `Y_{t_i}` on path `p`, restarting `inner` fresh sub-paths from
/// the state at node `i`.
pub fn linear_yt(c: &LinearCoefficients, bundle: &PathBundle, p: usize, node: usize, inner: usize, seed: u64) -> Result<MeanSe> {
    let grid = *bundle.grid();
    let model = bundle.model();
    if node > grid.steps() {
        return Err(invalid("node", "beyond the grid"));
    }
    if inner == 0 {
        return Err(invalid("inner", "need at least one sub-path"));
    }
    let layout = StateLayout::of(model);
    let h = grid.h();
    let sampler = StepSampler::new(model, h)?;
    let drift = c.drift_log(&model.marks, h);
    // total variation of the base R along the outer prefix
    let mut base0 = 0.0;
    for i in 0..node {
        base0 += c.r_spec.step(grid.t(i), h, bundle.state(p, i), base0).base_abs;
    }
    let start = bundle.state(p, node).to_vec();
    let xs = par::map_indices(inner, |q| {
        let mut rng = path_rng(seed, q);
        let mut draw = StepDraw::new(model);
        let mut state = start.clone();
        let mut next = start.clone();
        let (mut g, mut acc, mut base) = (1.0, 0.0, base0);
        for i in node..grid.steps() {
            let t = grid.t(i);
            let r = c.r_spec.step(t, h, &state, base);
            base += r.base_abs;
            acc += g * (c.forcing.eval(t, &state) * h + r.dr);
            model.sample_step(&mut rng, &sampler, &mut draw);
            g *= c.step_factor(drift, &draw.dw, &draw.counts);
            model.advance_state(&state, h, &draw.dw, &draw.counts, &draw.db, &mut next);
            std::mem::swap(&mut state, &mut next);
        }
        let xi = c
            .terminal
            .eval_scalar(&TerminalView::new(grid.horizon(), &state, layout))
            .unwrap_or(f64::NAN);
        acc + g * xi
    });
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            context: "linear oracle restart sample".into(),
        });
    }
    Ok(MeanSe::from_samples(&xs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path_engine::{simulate, TimeGrid};

    fn one_atom() -> NoiseModel {
        NoiseModel::brownian(1).with_marks(MarkSpace::single(1.0, 1.0).unwrap())
    }

    fn coeffs(a: f64, b: f64, g: f64, xi: &str, model: &NoiseModel) -> LinearCoefficients {
        LinearCoefficients::new(
            a,
            vec![b],
            vec![g],
            RateFn::Constant(0.0),
            Terminal::parse(xi).unwrap(),
            RSpec::Zero,
            model,
        )
        .unwrap()
    }

    #[test]
    fn rejects_gamma_below_minus_one() {
        let m = one_atom();
        let r = LinearCoefficients::new(0.0, vec![0.0], vec![-1.5], RateFn::Constant(0.0), Terminal::constant(1.0), RSpec::Zero, &m);
        assert!(r.is_err());
    }

    #[test]
    fn identity_exponential() {
        let m = one_atom();
        let b = simulate(TimeGrid::new(1.0, 10).unwrap(), &m, 1, 5).unwrap();
        let c = coeffs(0.0, 0.0, 0.0, "1", &m);
        for p in 0..5 {
            for s in 0..=10 {
                assert_eq!(doleans_gamma(&b, p, &c, 0, s).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn geometric_brownian_factor() {
        let m = NoiseModel::brownian(1);
        let b = simulate(TimeGrid::new(2.0, 16).unwrap(), &m, 4, 5).unwrap();
        let c = LinearCoefficients::new(0.0, vec![0.7], vec![], RateFn::Constant(0.0), Terminal::constant(1.0), RSpec::Zero, &m)
            .unwrap();
        for p in 0..5 {
            let (t, s) = (3, 13);
            let dw = b.brownian_at(p, s)[0] - b.brownian_at(p, t)[0];
            let direct = (0.7 * dw - 0.49 * (s - t) as f64 * 0.125 / 2.0).exp();
            let got = doleans_gamma(&b, p, &c, t, s).unwrap();
            assert!((got - direct).abs() <= 1e-12 * direct);
        }
    }

    #[test]
    fn gamma_identity_flow_and_positivity() {
        let m = NoiseModel::brownian(1).with_marks(MarkSpace::new(vec![vec![1.0], vec![2.0]], vec![3.0, 1.0]).unwrap());
        let b = simulate(TimeGrid::new(1.0, 20).unwrap(), &m, 9, 50).unwrap();
        let c = LinearCoefficients::new(
            0.3,
            vec![-0.4],
            vec![-1.0, 0.6],
            RateFn::Constant(0.0),
            Terminal::constant(1.0),
            RSpec::Zero,
            &m,
        )
        .unwrap();
        let mut saw_zero = false;
        for p in 0..50 {
            assert_eq!(doleans_gamma(&b, p, &c, 7, 7).unwrap(), 1.0);
            for (t, u, s) in [(0, 5, 20), (2, 11, 17), (0, 0, 9)] {
                let a = doleans_gamma(&b, p, &c, t, u).unwrap() * doleans_gamma(&b, p, &c, u, s).unwrap();
                let whole = doleans_gamma(&b, p, &c, t, s).unwrap();
                assert!(whole >= 0.0);
                assert!((a - whole).abs() <= 1e-13 * whole.abs().max(1e-300));
                saw_zero |= whole == 0.0;
            }
        }
        // γ = −1 kills the exponential at the first jump of atom 0
        assert!(saw_zero);
        assert!(doleans_gamma(&b, 0, &c, 5, 3).is_err());
    }

    fn single_jump_bundle(steps: usize, lambda: f64) -> (PathBundle, NoiseModel) {
        let m = NoiseModel::brownian(0).with_marks(MarkSpace::single(1.0, lambda).unwrap());
        let mut csv = String::from("path,step,n0,dR,dRabs\n");
        for i in 0..steps {
            csv.push_str(&format!("0,{i},{},0,0\n", usize::from(i == 0)));
        }
        let grid = TimeGrid::new(1.0, steps).unwrap();
        (PathBundle::from_csv(&csv, grid, &m, 0).unwrap(), m)
    }

    #[test]
    fn single_jump_factor_and_euler_order() {
        let lambda = 2.0;
        let mut errs = Vec::new();
        for steps in [10usize, 40, 160] {
            let (b, m) = single_jump_bundle(steps, lambda);
            let c = LinearCoefficients::new(0.0, vec![], vec![0.5], RateFn::Constant(0.0), Terminal::constant(1.0), RSpec::Zero, &m)
                .unwrap();
            let exact = 1.5 * (-0.5 * lambda).exp();
            let g = doleans_gamma(&b, 0, &c, 0, steps).unwrap();
            assert!((g - exact).abs() < 1e-14);
            errs.push((euler_gamma(&b, 0, &c, 0, steps) - exact).abs());
        }
        // N -> 4N cuts a first-order error by about 4
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log(4.0);
            assert!((0.9..1.1).contains(&order), "order {order}");
        }
    }

    #[test]
    fn deterministic_forcing_is_exact() {
        let m = NoiseModel::brownian(1);
        let c = LinearCoefficients::new(0.0, vec![0.0], vec![], RateFn::Constant(1.0), Terminal::constant(0.0), RSpec::Zero, &m)
            .unwrap();
        let est = linear_y0(&c, TimeGrid::new(1.0, 10).unwrap(), &m, 100, 3).unwrap();
        assert!((est.mean - 1.0).abs() < 1e-12);
        assert!(est.se < 1e-12);
    }

    #[test]
    fn centered_terminal() {
        let m = NoiseModel::brownian(1);
        let c = coeffs_b(&m, "w(0)", 0.0);
        let est = linear_y0(&c, TimeGrid::new(1.0, 10).unwrap(), &m, 20_000, 5).unwrap();
        assert!(est.within(0.0, 3.0), "{est:?}");
    }

    fn coeffs_b(m: &NoiseModel, xi: &str, beta: f64) -> LinearCoefficients {
        LinearCoefficients::new(0.0, vec![beta], vec![], RateFn::Constant(0.0), Terminal::parse(xi).unwrap(), RSpec::Zero, m)
            .unwrap()
    }

    #[test]
    fn exponential_martingale_has_unit_mean() {
        let m = one_atom();
        let c = coeffs(0.0, 0.8, 0.5, "1", &m);
        let est = linear_y0(&c, TimeGrid::new(1.0, 20).unwrap(), &m, 40_000, 17).unwrap();
        assert!(est.within(1.0, 3.0), "{est:?}");
    }

    #[test]
    fn reference_case_matches_closed_form() {
        // E[ξ Γ_{0,T}] with ξ = 1 is e^{αT}; the discrete factors are exactly mean-one
        let m = one_atom();
        let c = coeffs(-0.5, 0.3, 0.2, "1", &m);
        let est = linear_y0(&c, TimeGrid::new(1.0, 80).unwrap(), &m, 20_000, 2).unwrap();
        assert!(est.within((-0.5f64).exp(), 3.0), "{est:?}");
    }

    #[test]
    fn affine_in_data_on_common_paths() {
        let m = one_atom().with_r(RSpec::Rate(RateFn::Constant(0.5)));
        let b = simulate(TimeGrid::new(1.0, 10).unwrap(), &m, 8, 200).unwrap();
        let mk = |xi: &str, f: f64, r: f64| {
            LinearCoefficients::new(
                -0.2,
                vec![0.3],
                vec![0.4],
                RateFn::Constant(f),
                Terminal::parse(xi).unwrap(),
                RSpec::Rate(RateFn::Constant(r)),
                &m,
            )
            .unwrap()
        };
        let layout = StateLayout::of(&m);
        let (a, bb, sum) = (mk("w(0)", 1.0, 0.5), mk("n(0)", -2.0, 1.5), mk("w(0) + n(0)", -1.0, 2.0));
        for p in 0..200 {
            let s = path_sample(&b, p, &a, layout) + path_sample(&b, p, &bb, layout);
            let t = path_sample(&b, p, &sum, layout);
            assert!((s - t).abs() <= 1e-12 * (1.0 + t.abs()));
        }
    }

    #[test]
    fn interior_restart_matches_martingale_identity() {
        // ξ = N_T with zero coefficients: Y_t = N_t + λ (T − t)
        let m = one_atom();
        let c = coeffs(0.0, 0.0, 0.0, "n(0)", &m);
        let b = simulate(TimeGrid::new(1.0, 10).unwrap(), &m, 1, 3).unwrap();
        for p in 0..3 {
            let est = linear_yt(&c, &b, p, 4, 40_000, 77).unwrap();
            let want = b.jump_counts_at(p, 4)[0] + 0.6;
            assert!(est.within(want, 3.0), "{est:?} vs {want}");
        }
    }
}
