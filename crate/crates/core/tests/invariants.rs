use gbsde::backward_solver::{solve, SolverConfig};
use gbsde::generator_model::{constant_driver, jump_kernel, linear, zero, GbsdeProblem, GeneratorSpec, Terminal};
use gbsde::mark_space::MarkSpace;
use gbsde::path_engine::{simulate, NoiseModel, RSpec, RateFn, TimeGrid};
use proptest::prelude::*;

fn prob(xi: &str, g: GeneratorSpec) -> GbsdeProblem {
    GbsdeProblem::new(Terminal::parse(xi).unwrap(), g, RSpec::Zero).unwrap()
}

fn model(lam: f64) -> NoiseModel {
    NoiseModel::brownian(1).with_marks(MarkSpace::single(1.0, lam).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    // A y-independent driver commutes with constant shifts of ξ.
    #[test]
    fn terminal_shift_moves_y_by_the_shift(seed in 0u64..1000, c in -1.0f64..1.0, shift in -2.0f64..2.0, lam in 0.2f64..3.0) {
        let ms = MarkSpace::single(1.0, lam).unwrap();
        let b = simulate(TimeGrid::new(1.0, 8).unwrap(), &model(lam), seed, 300).unwrap();
        let cfg = SolverConfig::default();
        let a = solve(&prob("sin(w(0)) + n(0)", jump_kernel(c, &ms).unwrap()), &b, &cfg).unwrap();
        let s = solve(&prob(&format!("sin(w(0)) + n(0) + {shift}"), jump_kernel(c, &ms).unwrap()), &b, &cfg).unwrap();
        for p in 0..b.n_paths() {
            for i in 0..=8 {
                prop_assert!((s.y(p, i)[0] - a.y(p, i)[0] - shift).abs() < 1e-9);
            }
        }
    }

    // Zero driver: Y is linear in ξ.
    #[test]
    fn zero_driver_is_linear_in_terminal(seed in 0u64..1000, k in -4.0f64..4.0) {
        let b = simulate(TimeGrid::new(1.0, 6).unwrap(), &model(1.0), seed, 300).unwrap();
        let cfg = SolverConfig::default();
        let a = solve(&prob("w(0) + n(0)", zero(1)), &b, &cfg).unwrap();
        let s = solve(&prob(&format!("{k} * (w(0) + n(0))"), zero(1)), &b, &cfg).unwrap();
        for p in 0..b.n_paths() {
            for i in 0..=6 {
                prop_assert!((s.y(p, i)[0] - k * a.y(p, i)[0]).abs() < 1e-8 * (1.0 + k.abs()));
            }
        }
    }

    // f ≡ c with ξ = 0 integrates exactly on any grid.
    #[test]
    fn constant_driver_is_exact(n in 1usize..40, c in -5.0f64..5.0, t in 0.1f64..3.0) {
        let b = simulate(TimeGrid::new(t, n).unwrap(), &NoiseModel::brownian(1), 3, 16).unwrap();
        let s = solve(&prob("0", constant_driver(c)), &b, &SolverConfig::default()).unwrap();
        for i in 0..=n {
            prop_assert!((s.y(0, i)[0] - c * (t - b.grid().t(i))).abs() < 1e-11 * (1.0 + c.abs() * t));
        }
    }

    // Ordered forcing gives ordered solutions path by path for nonnegative α.
    #[test]
    fn larger_forcing_never_lowers_y(seed in 0u64..1000, f1 in -1.0f64..1.0, gap in 0.0f64..1.0) {
        let ms = MarkSpace::single(1.0, 1.0).unwrap();
        let b = simulate(TimeGrid::new(1.0, 8).unwrap(), &model(1.0), seed, 300).unwrap();
        let cfg = SolverConfig::default();
        let lo = solve(&prob("w(0)", linear(0.0, vec![0.0], vec![0.0], &ms, RateFn::Constant(f1)).unwrap()), &b, &cfg).unwrap();
        let hi = solve(&prob("w(0)", linear(0.0, vec![0.0], vec![0.0], &ms, RateFn::Constant(f1 + gap)).unwrap()), &b, &cfg).unwrap();
        for p in 0..b.n_paths() {
            for i in 0..=8 {
                prop_assert!(hi.y(p, i)[0] - lo.y(p, i)[0] >= -1e-9);
            }
        }
    }

    // A bundle is a pure function of (grid, model, seed, paths).
    #[test]
    fn bundles_are_reproducible(seed in any::<u64>(), n in 1usize..20, lam in 0.1f64..4.0) {
        let g = TimeGrid::new(1.0, n).unwrap();
        let a = simulate(g, &model(lam), seed, 20).unwrap();
        let b = simulate(g, &model(lam), seed, 20).unwrap();
        prop_assert_eq!(a, b);
    }
}
