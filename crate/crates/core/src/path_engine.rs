//! Driving-noise simulation on a uniform grid.
//!
//! A [`PathBundle`] holds, per path and step, the Brownian increments, the
//! per-atom Poisson counts, the finite-variation increments of `R`, the
//! optional extra Brownian channel `B`, and the running Markov state used by
//! the regression estimators. Every path draws from its own ChaCha stream
//! `(seed, path)`, so a bundle is reproducible bit for bit and adding paths
//! never reshuffles earlier ones.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{check_len, invalid, Result};
use crate::mark_space::MarkSpace;
use crate::par;

/// Uniform grid `t_i = i T / N` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid("horizon", "must be positive and finite"));
        }
        if steps == 0 {
            return Err(invalid("steps", "must be at least 1"));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn h(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn t(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            i as f64 * self.horizon / self.steps as f64
        }
    }

    pub fn nodes(&self) -> usize {
        self.steps + 1
    }
}

/// Rate `r(t, state)` of an absolutely continuous `R`.
#[derive(Clone)]
pub enum RateFn {
    Constant(f64),
    /// `a + b t`
    Affine { a: f64, b: f64 },
    Custom(Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>),
}

impl RateFn {
    pub fn eval(&self, t: f64, state: &[f64]) -> f64 {
        match self {
            RateFn::Constant(c) => *c,
            RateFn::Affine { a, b } => a + b * t,
            RateFn::Custom(f) => f(t, state),
        }
    }
}

impl fmt::Debug for RateFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateFn::Constant(c) => write!(f, "Constant({c})"),
            RateFn::Affine { a, b } => write!(f, "Affine({a}, {b})"),
            RateFn::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl PartialEq for RateFn {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (RateFn::Constant(a), RateFn::Constant(b)) => a == b,
            (RateFn::Affine { a, b }, RateFn::Affine { a: c, b: d }) => a == c && b == d,
            (RateFn::Custom(a), RateFn::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

/// The finite-variation forcing `R` (with `R_0 = 0`).
#[derive(Debug, Clone, PartialEq)]
pub enum RSpec {
    Zero,
    /// `dR_t = r(t, X_t) dt`, evaluated at the left end of each step.
    Rate(RateFn),
    /// Deterministic jumps `(time, size)`; a jump at `s ∈ (t_i, t_{i+1}]` lands in step `i`.
    Jumps(Vec<(f64, f64)>),
    /// `R^n_t = ∫ 1{|R|_{s-} ≤ level} dR_s` for the untruncated `inner`.
    Truncated { inner: Box<RSpec>, level: f64 },
}

/// One step of `R`: signed increment, its total variation, and the total
/// variation of the untruncated base process (needed by [`RSpec::Truncated`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RStep {
    pub dr: f64,
    pub abs: f64,
    pub base_abs: f64,
}

impl RSpec {
    pub fn is_zero(&self) -> bool {
        matches!(self, RSpec::Zero)
    }

    /// Increment over `(t, t + h]` given the state at `t` and the running
    /// total variation of the base process before the step.
    pub fn step(&self, t: f64, h: f64, state: &[f64], base_var: f64) -> RStep {
        match self {
            RSpec::Zero => RStep {
                dr: 0.0,
                abs: 0.0,
                base_abs: 0.0,
            },
            RSpec::Rate(r) => {
                let dr = r.eval(t, state) * h;
                RStep {
                    dr,
                    abs: dr.abs(),
                    base_abs: dr.abs(),
                }
            }
            RSpec::Jumps(jumps) => {
                let (mut dr, mut abs) = (0.0, 0.0);
                let end = t + h;
                for &(s, size) in jumps {
                    // half-open (t, t+h] with a relative slack so grid-aligned times bin stably
                    let eps = 1e-12 * (1.0 + end.abs());
                    if s > t + eps && s <= end + eps {
                        dr += size;
                        abs += size.abs();
                    }
                }
                RStep {
                    dr,
                    abs,
                    base_abs: abs,
                }
            }
            RSpec::Truncated { inner, level } => {
                let s = inner.step(t, h, state, base_var);
                if base_var <= *level {
                    RStep {
                        dr: s.dr,
                        abs: s.abs,
                        base_abs: s.base_abs,
                    }
                } else {
                    RStep {
                        dr: 0.0,
                        abs: 0.0,
                        base_abs: s.base_abs,
                    }
                }
            }
        }
    }

    /// Increments `(ΔR_i, Δ|R|_i)` along one path, given its node states.
    pub fn path_increments(&self, grid: &TimeGrid, state_at: impl Fn(usize) -> Vec<f64>) -> (Vec<f64>, Vec<f64>) {
        let n = grid.steps();
        let mut dr = Vec::with_capacity(n);
        let mut abs = Vec::with_capacity(n);
        let mut base_var = 0.0;
        if self.is_zero() {
            return (vec![0.0; n], vec![0.0; n]);
        }
        for i in 0..n {
            let s = self.step(grid.t(i), grid.h(), &state_at(i), base_var);
            base_var += s.base_abs;
            dr.push(s.dr);
            abs.push(s.abs);
        }
        (dr, abs)
    }

    /// Wrap in the truncation `1{|R|_{s-} ≤ level} dR_s`; `level = ∞` is the identity.
    pub fn truncated(&self, level: f64) -> RSpec {
        if level == f64::INFINITY || self.is_zero() {
            return self.clone();
        }
        match self {
            RSpec::Truncated { inner, level: l } => RSpec::Truncated {
                inner: inner.clone(),
                level: l.min(level),
            },
            other => RSpec::Truncated {
                inner: Box::new(other.clone()),
                level,
            },
        }
    }
}

impl fmt::Display for RSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RSpec::Zero => write!(f, "zero"),
            RSpec::Rate(RateFn::Constant(c)) => write!(f, "rate({c})"),
            RSpec::Rate(RateFn::Affine { a, b }) => write!(f, "rate({a}, {b})"),
            RSpec::Rate(RateFn::Custom(_)) => write!(f, "custom"),
            RSpec::Jumps(j) => {
                let parts: Vec<String> = j.iter().map(|(s, z)| format!("{s}:{z}")).collect();
                write!(f, "jumps({})", parts.join(", "))
            }
            RSpec::Truncated { inner, level } => write!(f, "truncated({level}, {inner})"),
        }
    }
}

/// Splits `name(a, b, ...)` into the name and its top-level arguments.
pub(crate) fn call_syntax<'a>(what: &str, text: &'a str) -> Result<(&'a str, Vec<String>)> {
    let text = text.trim();
    match text.find('(') {
        Some(i) => {
            let inner = text[i + 1..]
                .strip_suffix(')')
                .ok_or_else(|| invalid(what, format!("unbalanced parentheses in `{text}`")))?;
            Ok((text[..i].trim(), crate::generator_model::library::split_args(inner)))
        }
        None => Ok((text, Vec::new())),
    }
}

pub(crate) fn parse_num(what: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| invalid(what, format!("malformed number `{}`", s.trim())))
}

impl RSpec {
    /// Inverse of `Display` for every variant except `custom`.
    pub fn parse(text: &str) -> Result<RSpec> {
        let (name, args) = call_syntax("r", text)?;
        match (name, args.len()) {
            ("zero", 0) => Ok(RSpec::Zero),
            ("rate", 1) => Ok(RSpec::Rate(RateFn::Constant(parse_num("r", &args[0])?))),
            ("rate", 2) => Ok(RSpec::Rate(RateFn::Affine {
                a: parse_num("r", &args[0])?,
                b: parse_num("r", &args[1])?,
            })),
            ("jumps", _) => {
                let mut jumps = Vec::with_capacity(args.len());
                for a in &args {
                    let (s, z) = a
                        .split_once(':')
                        .ok_or_else(|| invalid("r", format!("jump `{a}` is not `time:size`")))?;
                    let (s, z) = (parse_num("r", s)?, parse_num("r", z)?);
                    if !(s.is_finite() && z.is_finite()) {
                        return Err(invalid("r", "jump times and sizes must be finite"));
                    }
                    jumps.push((s, z));
                }
                if jumps.windows(2).any(|w| w[1].0 < w[0].0) {
                    return Err(invalid("r", "jump times must be nondecreasing"));
                }
                Ok(RSpec::Jumps(jumps))
            }
            ("truncated", 2) => {
                let level = parse_num("r", &args[0])?;
                if !(level > 0.0) {
                    return Err(invalid("r", "truncation level must be positive"));
                }
                Ok(RSpec::Truncated {
                    inner: Box::new(RSpec::parse(&args[1])?),
                    level,
                })
            }
            ("custom", _) => Err(invalid("r", "custom R processes cannot be read from text")),
            (other, n) => Err(invalid("r", format!("unknown R process `{other}` with {n} arguments"))),
        }
    }
}

/// Markov state carried alongside the noise for the regression estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForwardState {
    /// Regress on the running sums `(W_t, N_t, B_t)` of the drivers.
    Drivers,
    /// `X_t = x0 + drift·t + vol·W¹_t + Σ_j e_j¹ N^j_t`, regressed on alone.
    Diffusion { x0: f64, drift: f64, vol: f64 },
}

impl ForwardState {
    pub fn parse(text: &str) -> Result<ForwardState> {
        let (name, args) = call_syntax("forward", text)?;
        match (name, args.len()) {
            ("drivers", 0) => Ok(ForwardState::Drivers),
            ("diffusion", 3) => Ok(ForwardState::Diffusion {
                x0: parse_num("forward", &args[0])?,
                drift: parse_num("forward", &args[1])?,
                vol: parse_num("forward", &args[2])?,
            }),
            _ => Err(invalid("forward", format!("expected `drivers` or `diffusion(x0, drift, vol)`, got `{}`", text.trim()))),
        }
    }
}

impl fmt::Display for ForwardState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ForwardState::Drivers => write!(f, "drivers"),
            ForwardState::Diffusion { x0, drift, vol } => write!(f, "diffusion({x0}, {drift}, {vol})"),
        }
    }
}

/// The filtration's driving noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub brownian_dim: usize,
    pub marks: MarkSpace,
    pub r_spec: RSpec,
    /// Dimension of the independent extra channel `B` (0 = inactive).
    pub extra_dim: usize,
    pub forward: ForwardState,
}

impl NoiseModel {
    pub fn brownian(d: usize) -> Self {
        NoiseModel {
            brownian_dim: d,
            marks: MarkSpace::empty(),
            r_spec: RSpec::Zero,
            extra_dim: 0,
            forward: ForwardState::Drivers,
        }
    }

    pub fn with_marks(mut self, marks: MarkSpace) -> Self {
        self.marks = marks;
        self
    }

    pub fn with_extra(mut self, dim: usize) -> Self {
        self.extra_dim = dim;
        self
    }

    pub fn with_r(mut self, r: RSpec) -> Self {
        self.r_spec = r;
        self
    }

    pub fn with_forward(mut self, f: ForwardState) -> Self {
        self.forward = f;
        self
    }

    pub fn atoms(&self) -> usize {
        self.marks.atoms()
    }

    pub fn validate(&self) -> Result<()> {
        if let ForwardState::Diffusion { x0, drift, vol } = self.forward {
            if !(x0.is_finite() && drift.is_finite() && vol.is_finite()) {
                return Err(invalid("forward", "diffusion coefficients must be finite"));
            }
            if vol != 0.0 && self.brownian_dim == 0 {
                return Err(invalid("forward", "a diffusive state needs brownian_dim >= 1"));
            }
        }
        Ok(())
    }

    /// Length of the full per-node state vector `[W, N, B, X?]`.
    pub fn state_dim(&self) -> usize {
        self.brownian_dim
            + self.atoms()
            + self.extra_dim
            + usize::from(matches!(self.forward, ForwardState::Diffusion { .. }))
    }

    /// Index range of the full state used as regression variables.
    pub fn regression_range(&self) -> std::ops::Range<usize> {
        match self.forward {
            ForwardState::Drivers => 0..self.brownian_dim + self.atoms() + self.extra_dim,
            ForwardState::Diffusion { .. } => {
                let s = self.state_dim();
                s - 1..s
            }
        }
    }

    pub fn initial_state(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.state_dim()];
        if let ForwardState::Diffusion { x0, .. } = self.forward {
            *s.last_mut().unwrap() = x0;
        }
        s
    }

    /// Draws one step of increments.
    pub fn sample_step<R: Rng>(&self, rng: &mut R, sampler: &StepSampler, out: &mut StepDraw) {
        for w in out.dw.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *w = z * sampler.sqrt_h;
        }
        for (c, p) in out.counts.iter_mut().zip(&sampler.poisson) {
            *c = p.sample(rng) as u32;
        }
        for b in out.db.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *b = z * sampler.sqrt_h;
        }
    }

    /// State after one step of increments.
    pub fn advance_state(&self, state: &[f64], h: f64, dw: &[f64], counts: &[u32], db: &[f64], next: &mut [f64]) {
        let d = self.brownian_dim;
        let m = self.atoms();
        let e = self.extra_dim;
        for l in 0..d {
            next[l] = state[l] + dw[l];
        }
        for j in 0..m {
            next[d + j] = state[d + j] + counts[j] as f64;
        }
        for l in 0..e {
            next[d + m + l] = state[d + m + l] + db[l];
        }
        if let ForwardState::Diffusion { drift, vol, .. } = self.forward {
            let x = state[d + m + e];
            let mut jump = 0.0;
            for j in 0..m {
                jump += self.marks.marks()[j][0] * counts[j] as f64;
            }
            let dw0 = if d > 0 { dw[0] } else { 0.0 };
            next[d + m + e] = x + drift * h + vol * dw0 + jump;
        }
    }
}

/// Per-grid samplers, built once per simulation.
pub struct StepSampler {
    sqrt_h: f64,
    poisson: Vec<Poisson<f64>>,
}

impl StepSampler {
    pub fn new(model: &NoiseModel, h: f64) -> Result<Self> {
        let poisson = model
            .marks
            .intensities()
            .iter()
            .map(|l| Poisson::new(l * h).map_err(|e| invalid("intensity", e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Ok(StepSampler {
            sqrt_h: h.sqrt(),
            poisson,
        })
    }
}

/// Scratch buffers for one step of increments.
#[derive(Debug, Clone)]
pub struct StepDraw {
    pub dw: Vec<f64>,
    pub counts: Vec<u32>,
    pub db: Vec<f64>,
}

impl StepDraw {
    pub fn new(model: &NoiseModel) -> Self {
        StepDraw {
            dw: vec![0.0; model.brownian_dim],
            counts: vec![0; model.atoms()],
            db: vec![0.0; model.extra_dim],
        }
    }
}

/// Combines two seeds (splitmix64 finalizer over the pair).
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut x = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Per-path RNG stream.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Simulated driving noise for `n_paths` paths on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    grid: TimeGrid,
    model: NoiseModel,
    seed: u64,
    n_paths: usize,
    dw: Vec<f64>,
    counts: Vec<u32>,
    dr: Vec<f64>,
    dr_abs: Vec<f64>,
    db: Vec<f64>,
    state: Vec<f64>,
}

struct PathData {
    dw: Vec<f64>,
    counts: Vec<u32>,
    dr: Vec<f64>,
    dr_abs: Vec<f64>,
    db: Vec<f64>,
    state: Vec<f64>,
}

/// Simulates `n_paths` independent paths of the noise model.
pub fn simulate(grid: TimeGrid, model: &NoiseModel, seed: u64, n_paths: usize) -> Result<PathBundle> {
    if n_paths == 0 {
        return Err(invalid("paths", "need at least one path"));
    }
    model.validate()?;
    let sampler = StepSampler::new(model, grid.h())?;
    let n = grid.steps();
    let paths = par::map_indices(n_paths, |p| {
        let mut rng = path_rng(seed, p);
        let mut draw = StepDraw::new(model);
        let mut dw = Vec::with_capacity(n * model.brownian_dim);
        let mut counts = Vec::with_capacity(n * model.atoms());
        let mut db = Vec::with_capacity(n * model.extra_dim);
        for _ in 0..n {
            model.sample_step(&mut rng, &sampler, &mut draw);
            dw.extend_from_slice(&draw.dw);
            counts.extend_from_slice(&draw.counts);
            db.extend_from_slice(&draw.db);
        }
        build_path(&grid, model, dw, counts, db)
    });
    Ok(assemble(grid, model.clone(), seed, paths))
}

fn build_path(grid: &TimeGrid, model: &NoiseModel, dw: Vec<f64>, counts: Vec<u32>, db: Vec<f64>) -> PathData {
    let state = integrate_state(grid, model, &dw, &counts, &db);
    let sd = model.state_dim();
    let (dr, dr_abs) = model
        .r_spec
        .path_increments(grid, |i| state[i * sd..(i + 1) * sd].to_vec());
    PathData {
        dw,
        counts,
        dr,
        dr_abs,
        db,
        state,
    }
}

fn integrate_state(grid: &TimeGrid, model: &NoiseModel, dw: &[f64], counts: &[u32], db: &[f64]) -> Vec<f64> {
    let (d, m, e) = (model.brownian_dim, model.atoms(), model.extra_dim);
    let sd = model.state_dim();
    let n = grid.steps();
    let mut state = vec![0.0; (n + 1) * sd];
    state[..sd].copy_from_slice(&model.initial_state());
    for i in 0..n {
        let (head, tail) = state.split_at_mut((i + 1) * sd);
        model.advance_state(
            &head[i * sd..],
            grid.h(),
            &dw[i * d..(i + 1) * d],
            &counts[i * m..(i + 1) * m],
            &db[i * e..(i + 1) * e],
            &mut tail[..sd],
        );
    }
    state
}

fn assemble(grid: TimeGrid, model: NoiseModel, seed: u64, paths: Vec<PathData>) -> PathBundle {
    let n_paths = paths.len();
    let mut b = PathBundle {
        grid,
        model,
        seed,
        n_paths,
        dw: Vec::new(),
        counts: Vec::new(),
        dr: Vec::new(),
        dr_abs: Vec::new(),
        db: Vec::new(),
        state: Vec::new(),
    };
    for p in paths {
        b.dw.extend(p.dw);
        b.counts.extend(p.counts);
        b.dr.extend(p.dr);
        b.dr_abs.extend(p.dr_abs);
        b.db.extend(p.db);
        b.state.extend(p.state);
    }
    b
}

/// `Δπ̂_j = n_j − λ_j h` for one step.
pub fn compensated_increment(counts: &[u32], ms: &MarkSpace, h: f64) -> Result<Vec<f64>> {
    check_len("compensated increment", ms.atoms(), counts.len())?;
    Ok(counts
        .iter()
        .zip(ms.intensities())
        .map(|(&n, l)| n as f64 - l * h)
        .collect())
}

impl PathBundle {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn model(&self) -> &NoiseModel {
        &self.model
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn brownian_dim(&self) -> usize {
        self.model.brownian_dim
    }

    pub fn atoms(&self) -> usize {
        self.model.atoms()
    }

    pub fn extra_dim(&self) -> usize {
        self.model.extra_dim
    }

    pub fn marks(&self) -> &MarkSpace {
        &self.model.marks
    }

    pub fn dw(&self, p: usize, i: usize) -> &[f64] {
        let d = self.model.brownian_dim;
        let off = (p * self.steps() + i) * d;
        &self.dw[off..off + d]
    }

    pub fn counts(&self, p: usize, i: usize) -> &[u32] {
        let m = self.atoms();
        let off = (p * self.steps() + i) * m;
        &self.counts[off..off + m]
    }

    /// `Δπ̂_{p,i,j}` into `out`.
    pub fn compensated_into(&self, p: usize, i: usize, out: &mut [f64]) {
        let h = self.grid.h();
        for ((o, &n), l) in out.iter_mut().zip(self.counts(p, i)).zip(self.marks().intensities()) {
            *o = n as f64 - l * h;
        }
    }

    pub fn db(&self, p: usize, i: usize) -> &[f64] {
        let e = self.model.extra_dim;
        let off = (p * self.steps() + i) * e;
        &self.db[off..off + e]
    }

    pub fn dr(&self, p: usize, i: usize) -> f64 {
        self.dr[p * self.steps() + i]
    }

    pub fn dr_abs(&self, p: usize, i: usize) -> f64 {
        self.dr_abs[p * self.steps() + i]
    }

    /// Nondecreasing parts `(ΔR⁺, ΔR⁻)` of step `i`.
    pub fn dr_split(&self, p: usize, i: usize) -> (f64, f64) {
        let (dr, abs) = (self.dr(p, i), self.dr_abs(p, i));
        (0.5 * (abs + dr), 0.5 * (abs - dr))
    }

    /// Full state `[W, N, B, X?]` at node `i` of path `p`.
    pub fn state(&self, p: usize, i: usize) -> &[f64] {
        let sd = self.model.state_dim();
        let off = (p * self.grid.nodes() + i) * sd;
        &self.state[off..off + sd]
    }

    pub fn brownian_at(&self, p: usize, i: usize) -> &[f64] {
        &self.state(p, i)[..self.model.brownian_dim]
    }

    pub fn jump_counts_at(&self, p: usize, i: usize) -> &[f64] {
        let d = self.model.brownian_dim;
        &self.state(p, i)[d..d + self.atoms()]
    }

    pub fn extra_at(&self, p: usize, i: usize) -> &[f64] {
        let off = self.model.brownian_dim + self.atoms();
        &self.state(p, i)[off..off + self.model.extra_dim]
    }

    /// Forward diffusion value at node `i`, if one is configured.
    pub fn forward_at(&self, p: usize, i: usize) -> Option<f64> {
        match self.model.forward {
            ForwardState::Diffusion { .. } => self.state(p, i).last().copied(),
            ForwardState::Drivers => None,
        }
    }

    pub fn regression_vars(&self, p: usize, i: usize) -> &[f64] {
        &self.state(p, i)[self.model.regression_range()]
    }

    /// Writes the bundle as CSV: one row per `(path, step)`, one column per channel.
    pub fn to_csv(&self) -> String {
        let (d, m, e) = (self.brownian_dim(), self.atoms(), self.extra_dim());
        let mut out = String::new();
        let mut header = vec!["path".to_string(), "step".to_string()];
        header.extend((0..d).map(|l| format!("dW{l}")));
        header.extend((0..m).map(|j| format!("n{j}")));
        header.push("dR".into());
        header.push("dRabs".into());
        header.extend((0..e).map(|l| format!("dB{l}")));
        out.push_str(&header.join(","));
        out.push('\n');
        for p in 0..self.n_paths {
            for i in 0..self.steps() {
                let mut row = vec![p.to_string(), i.to_string()];
                row.extend(self.dw(p, i).iter().map(|x| x.to_string()));
                row.extend(self.counts(p, i).iter().map(|x| x.to_string()));
                row.push(self.dr(p, i).to_string());
                row.push(self.dr_abs(p, i).to_string());
                row.extend(self.db(p, i).iter().map(|x| x.to_string()));
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        out
    }

    /// Restores a bundle written by [`PathBundle::to_csv`]; states are recomputed
    /// from the increments. Lines starting with `#` are ignored.
    pub fn from_csv(text: &str, grid: TimeGrid, model: &NoiseModel, seed: u64) -> Result<PathBundle> {
        let (d, m, e) = (model.brownian_dim, model.atoms(), model.extra_dim);
        let width = 4 + d + m + e;
        let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| invalid("csv", "empty bundle dump"))?;
        check_len("bundle csv columns", width, header.split(',').count())?;
        let n = grid.steps();
        let mut raw: Vec<(Vec<f64>, Vec<u32>, Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
        for (ln, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            check_len("bundle csv row", width, cells.len())?;
            let num = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| invalid("csv", format!("row {}: malformed number `{s}`", ln + 2)))
            };
            let p: usize = cells[0]
                .parse()
                .map_err(|_| invalid("csv", format!("row {}: bad path index", ln + 2)))?;
            let i: usize = cells[1]
                .parse()
                .map_err(|_| invalid("csv", format!("row {}: bad step index", ln + 2)))?;
            let expected = if i == 0 { (raw.len(), 0) } else { (raw.len().wrapping_sub(1), raw.last().map_or(usize::MAX, |r| r.2.len())) };
            if i >= n || (p, i) != expected {
                return Err(invalid("csv", format!("row {}: rows must be path-major and complete", ln + 2)));
            }
            if i == 0 {
                raw.push((Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new()));
            }
            let entry = raw.last_mut().unwrap();
            let mut c = 2;
            for _ in 0..d {
                entry.0.push(num(cells[c])?);
                c += 1;
            }
            for _ in 0..m {
                entry.1.push(
                    cells[c]
                        .trim()
                        .parse::<u32>()
                        .map_err(|_| invalid("csv", format!("row {}: counts must be nonnegative integers", ln + 2)))?,
                );
                c += 1;
            }
            entry.2.push(num(cells[c])?);
            entry.3.push(num(cells[c + 1])?);
            c += 2;
            for _ in 0..e {
                entry.4.push(num(cells[c])?);
                c += 1;
            }
        }
        if raw.is_empty() || raw.iter().any(|r| r.2.len() != n) {
            return Err(invalid("csv", "every path needs one row per grid step"));
        }
        let paths = raw
            .into_iter()
            .map(|(dw, counts, dr, dr_abs, db)| {
                let state = integrate_state(&grid, model, &dw, &counts, &db);
                PathData {
                    dw,
                    counts,
                    dr,
                    dr_abs,
                    db,
                    state,
                }
            })
            .collect();
        Ok(assemble(grid, model.clone(), seed, paths))
    }

    /// The same paths on a grid `factor` times coarser: increments are
    /// summed over blocks of `factor` steps and `R` is re-evaluated.
    pub fn coarsen(&self, factor: usize) -> Result<PathBundle> {
        let n = self.steps();
        if factor == 0 || n % factor != 0 {
            return Err(invalid("factor", format!("{factor} does not divide {n} steps")));
        }
        let grid = TimeGrid::new(self.grid.horizon(), n / factor)?;
        let model = &self.model;
        let (d, m, e) = (model.brownian_dim, model.atoms(), model.extra_dim);
        let paths = par::map_indices(self.n_paths, |p| {
            let mut dw = vec![0.0; grid.steps() * d];
            let mut counts = vec![0u32; grid.steps() * m];
            let mut db = vec![0.0; grid.steps() * e];
            for i in 0..n {
                let c = i / factor;
                for (o, x) in dw[c * d..(c + 1) * d].iter_mut().zip(self.dw(p, i)) {
                    *o += x;
                }
                for (o, x) in counts[c * m..(c + 1) * m].iter_mut().zip(self.counts(p, i)) {
                    *o += x;
                }
                for (o, x) in db[c * e..(c + 1) * e].iter_mut().zip(self.db(p, i)) {
                    *o += x;
                }
            }
            build_path(&grid, model, dw, counts, db)
        });
        Ok(assemble(grid, model.clone(), self.seed, paths))
    }

    /// Replaces the stored `ΔR` channel by this spec evaluated on the bundle.
    pub fn r_increments(&self, spec: &RSpec, p: usize) -> (Vec<f64>, Vec<f64>) {
        if spec == &self.model.r_spec {
            let n = self.steps();
            return (
                self.dr[p * n..(p + 1) * n].to_vec(),
                self.dr_abs[p * n..(p + 1) * n].to_vec(),
            );
        }
        spec.path_increments(&self.grid, |i| self.state(p, i).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{correlation, MeanSe};

    fn jump_model(l: f64) -> NoiseModel {
        NoiseModel::brownian(1).with_marks(MarkSpace::single(1.0, l).unwrap())
    }

    #[test]
    fn grid_nodes() {
        let g = TimeGrid::new(2.0, 4).unwrap();
        assert_eq!(g.t(0), 0.0);
        assert_eq!(g.t(4), 2.0);
        assert_eq!(g.h(), 0.5);
        assert!((1..=4).all(|i| g.t(i) > g.t(i - 1)));
        assert!(TimeGrid::new(0.0, 3).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn empty_measure_gives_no_counts() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let b = simulate(g, &NoiseModel::brownian(2), 1, 50).unwrap();
        assert_eq!(b.atoms(), 0);
        assert!((0..50).all(|p| (0..10).all(|i| b.counts(p, i).is_empty())));
    }

    #[test]
    fn same_seed_same_bundle() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let model = jump_model(2.0).with_extra(1).with_r(RSpec::Rate(RateFn::Constant(1.0)));
        let a = simulate(g, &model, 42, 64).unwrap();
        let b = simulate(g, &model, 42, 64).unwrap();
        assert_eq!(a, b);
        let c = simulate(g, &model, 43, 64).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn more_paths_keep_earlier_paths() {
        let g = TimeGrid::new(1.0, 5).unwrap();
        let model = jump_model(1.0);
        let a = simulate(g, &model, 7, 10).unwrap();
        let b = simulate(g, &model, 7, 25).unwrap();
        for p in 0..10 {
            for i in 0..5 {
                assert_eq!(a.dw(p, i), b.dw(p, i));
                assert_eq!(a.counts(p, i), b.counts(p, i));
            }
        }
    }

    #[test]
    fn poisson_mean_oracle() {
        // counts over one unit step are Poisson(2): sd/sqrt(n) = sqrt(2/1e5)
        let g = TimeGrid::new(1.0, 1).unwrap();
        let b = simulate(g, &jump_model(2.0), 2024, 100_000).unwrap();
        let xs: Vec<f64> = (0..b.n_paths()).map(|p| b.counts(p, 0)[0] as f64).collect();
        let m = MeanSe::from_samples(&xs);
        assert!((m.mean - 2.0).abs() <= 3.0 * (2.0f64 / 1e5).sqrt(), "mean {}", m.mean);
    }

    #[test]
    fn compensated_increment_arithmetic() {
        let ms = MarkSpace::single(1.0, 1.0).unwrap();
        assert!((compensated_increment(&[0], &ms, 0.1).unwrap()[0] + 0.1).abs() < 1e-15);
        let ms = MarkSpace::single(1.0, 5.0).unwrap();
        assert!((compensated_increment(&[3], &ms, 0.1).unwrap()[0] - 2.5).abs() < 1e-15);
        assert!(compensated_increment(&[1, 2], &ms, 0.1).is_err());
    }

    #[test]
    fn compensated_increment_has_zero_mean() {
        let g = TimeGrid::new(1.0, 1).unwrap();
        let b = simulate(g, &jump_model(0.7), 99, 100_000).unwrap();
        let mut buf = [0.0];
        let xs: Vec<f64> = (0..b.n_paths())
            .map(|p| {
                b.compensated_into(p, 0, &mut buf);
                buf[0]
            })
            .collect();
        assert!(MeanSe::from_samples(&xs).within(0.0, 3.0));
    }

    #[test]
    fn running_compensated_sum_is_a_martingale() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let model = NoiseModel::brownian(0)
            .with_marks(MarkSpace::new(vec![vec![1.0], vec![2.0]], vec![1.5, 0.4]).unwrap());
        let b = simulate(g, &model, 5, 20_000).unwrap();
        let mut buf = [0.0; 2];
        for j in 0..2 {
            let mut run = vec![0.0; b.n_paths()];
            for i in 0..10 {
                for (p, r) in run.iter_mut().enumerate() {
                    b.compensated_into(p, i, &mut buf);
                    *r += buf[j];
                }
                assert!(MeanSe::from_samples(&run).within(0.0, 3.0), "atom {j} node {}", i + 1);
            }
        }
    }

    #[test]
    fn channels_are_uncorrelated() {
        let g = TimeGrid::new(1.0, 1).unwrap();
        let model = NoiseModel::brownian(2)
            .with_marks(MarkSpace::single(1.0, 3.0).unwrap())
            .with_extra(1);
        let n = 40_000;
        let b = simulate(g, &model, 11, n).unwrap();
        let w0: Vec<f64> = (0..n).map(|p| b.dw(p, 0)[0]).collect();
        let w1: Vec<f64> = (0..n).map(|p| b.dw(p, 0)[1]).collect();
        let c: Vec<f64> = (0..n).map(|p| b.counts(p, 0)[0] as f64).collect();
        let e: Vec<f64> = (0..n).map(|p| b.db(p, 0)[0]).collect();
        // se of a sample correlation under independence is ~1/sqrt(n)
        let tol = 3.0 / (n as f64).sqrt();
        for (x, y) in [(&w0, &w1), (&w0, &c), (&w1, &e), (&c, &e), (&w0, &e)] {
            assert!(correlation(x, y).abs() < tol);
        }
    }

    #[test]
    fn step_variance_scales_with_h() {
        let model = jump_model(2.0);
        for steps in [10usize, 20] {
            let g = TimeGrid::new(1.0, steps).unwrap();
            let b = simulate(g, &model, 3, 5_000).unwrap();
            let sq: Vec<f64> = (0..b.n_paths())
                .flat_map(|p| (0..steps).map(move |i| (p, i)))
                .map(|(p, i)| b.dw(p, i)[0].powi(2))
                .collect();
            let m = MeanSe::from_samples(&sq);
            assert!(m.within(g.h(), 3.0), "N={steps}: {} vs {}", m.mean, g.h());
        }
    }

    #[test]
    fn r_split_and_jumps() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let r = RSpec::Jumps(vec![(0.25, 1.0), (0.3, -2.0), (1.0, 0.5)]);
        let (dr, abs) = r.path_increments(&g, |_| vec![]);
        assert_eq!(dr, vec![1.0, -2.0, 0.0, 0.5]);
        assert_eq!(abs, vec![1.0, 2.0, 0.0, 0.5]);
        let model = NoiseModel::brownian(1).with_r(r);
        let b = simulate(g, &model, 0, 1).unwrap();
        assert_eq!(b.dr_split(0, 1), (0.0, 2.0));
        let total: f64 = (0..4).map(|i| b.dr_abs(0, i)).sum();
        assert_eq!(total, 3.5);
    }

    #[test]
    fn truncated_r_freezes_after_crossing() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let r = RSpec::Rate(RateFn::Constant(1.0)).truncated(0.45);
        let (dr, _) = r.path_increments(&g, |_| vec![]);
        // |R| before step i is 0.1 i; steps 0..=4 are kept
        let kept: Vec<bool> = dr.iter().map(|x| *x != 0.0).collect();
        assert_eq!(kept, [true, true, true, true, true, false, false, false, false, false]);
        assert_eq!(RSpec::Zero.truncated(1.0), RSpec::Zero);
        let base = RSpec::Rate(RateFn::Constant(1.0));
        assert_eq!(base.truncated(f64::INFINITY), base);
    }

    #[test]
    fn csv_roundtrip() {
        let g = TimeGrid::new(1.0, 3).unwrap();
        let model = jump_model(1.3).with_extra(1).with_r(RSpec::Rate(RateFn::Affine { a: 1.0, b: -0.5 }));
        let b = simulate(g, &model, 17, 4).unwrap();
        let text = b.to_csv();
        assert!(text.starts_with("path,step,dW0,n0,dR,dRabs,dB0\n"));
        let back = PathBundle::from_csv(&text, g, &model, 17).unwrap();
        assert_eq!(back, b);
        assert!(PathBundle::from_csv("path,step\n", g, &model, 17).is_err());
    }

    #[test]
    fn diffusion_state_tracks_drivers() {
        let g = TimeGrid::new(1.0, 20).unwrap();
        let model = jump_model(1.0).with_forward(ForwardState::Diffusion {
            x0: 0.5,
            drift: 0.2,
            vol: 0.3,
        });
        let b = simulate(g, &model, 8, 3).unwrap();
        for p in 0..3 {
            let w = b.brownian_at(p, 20)[0];
            let n = b.jump_counts_at(p, 20)[0];
            let x = b.forward_at(p, 20).unwrap();
            assert!((x - (0.5 + 0.2 + 0.3 * w + n)).abs() < 1e-12);
            assert_eq!(b.regression_vars(p, 20), &[x]);
        }
    }

    #[test]
    fn rspec_and_forward_round_trip() {
        for text in ["zero", "rate(0.5)", "rate(-1, 2)", "jumps(0.25:1, 0.5:-0.5)", "truncated(2, jumps(0.5:3))"] {
            let r = RSpec::parse(text).unwrap();
            assert_eq!(r.to_string(), text);
            assert_eq!(RSpec::parse(&r.to_string()).unwrap(), r);
        }
        for text in ["drivers", "diffusion(0, 0.1, 1)"] {
            assert_eq!(ForwardState::parse(text).unwrap().to_string(), text);
        }
        assert!(RSpec::parse("rate(x)").is_err());
        assert!(RSpec::parse("jumps(0.5:1, 0.25:1)").is_err());
        assert!(ForwardState::parse("diffusion(1, 2)").is_err());
    }

    #[test]
    fn coarsening_sums_increments() {
        let model = jump_model(3.0).with_extra(1).with_r(RSpec::Rate(RateFn::Affine { a: 0.5, b: 1.0 }));
        let fine = simulate(TimeGrid::new(1.0, 12).unwrap(), &model, 5, 20).unwrap();
        assert_eq!(fine.coarsen(1).unwrap(), fine);
        let c = fine.coarsen(4).unwrap();
        assert_eq!(c.steps(), 3);
        for p in 0..20 {
            for i in 0..=3 {
                for (a, b) in c.state(p, i).iter().zip(fine.state(p, 4 * i)) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
            let n: u32 = (0..4).map(|i| fine.counts(p, i)[0]).sum();
            assert_eq!(c.counts(p, 0)[0], n);
        }
        assert!(fine.coarsen(5).is_err());
    }
}
