//! Monte-Carlo laboratory for backward stochastic differential equations
//! driven by a Brownian motion, a compensated Poisson random measure with
//! finitely many marks, and a finite-variation forcing process.

pub mod backward_solver;
pub mod cli_reporting;
pub mod comparison_harness;
pub mod error;
pub mod generator_model;
pub mod linear_oracle;
pub mod mark_space;
pub mod norms_estimates;
pub mod par;
pub mod path_engine;
pub mod random_horizon;
pub mod stats;

pub use error::{Diagnostic, Error, Result};
