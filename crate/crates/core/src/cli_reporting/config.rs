//! Line-oriented experiment configs.
//!
//! ```text
//! # comment
//! [experiment]
//! seed = 7
//! paths = 20000
//!
//! [noise]
//! atom = 1 @ 0.5
//! ```
//!
//! Every section is optional except `[experiment]`, `[grid]` and
//! `[problem]`. [`ExperimentConfig`]'s `Display` writes every key, defaults
//! included, so printing and reparsing is the identity.

use std::collections::BTreeMap;
use std::fmt;

use crate::backward_solver::{CeScheme, SolverConfig};
use crate::comparison_harness::{standard_battery, ComparisonCase};
use crate::error::{Diagnostic, Error, Result};
use crate::generator_model::library::LibraryGenerator;
use crate::generator_model::terminal::{StateLayout, Terminal};
use crate::generator_model::GbsdeProblem;
use crate::linear_oracle::LinearCoefficients;
use crate::mark_space::MarkSpace;
use crate::path_engine::{call_syntax, ForwardState, NoiseModel, RSpec, RateFn, TimeGrid};
use crate::random_horizon::{doubling_caps, Domain, Monitoring, StoppingSpec};

const SECTIONS: &[(&str, &[&str])] = &[
    ("experiment", &["label", "seed", "paths", "out"]),
    ("grid", &["horizon", "steps"]),
    ("noise", &["brownian", "extra", "atom", "r", "forward"]),
    ("problem", &["terminal", "generator", "r", "p"]),
    (
        "solver",
        &["scheme", "picard_tol", "picard_max_iter", "truncation", "damping", "nested_seed", "nested_budget"],
    ),
    ("oracle", &["paths", "seed", "steps"]),
    ("compare", &["battery", "terminal", "generator", "r"]),
    ("stopping", &["domain", "cap", "rho", "monitoring", "caps"]),
    ("estimate", &["p", "a"]),
    ("convergence", &["steps"]),
];

/// Keys that may repeat within their section.
const REPEATABLE: &[(&str, &str)] = &[("noise", "atom")];

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub mark: Vec<f64>,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSection {
    pub brownian: usize,
    pub extra: usize,
    pub atoms: Vec<Atom>,
    pub r: RSpec,
    pub forward: ForwardState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSection {
    pub terminal: Terminal,
    pub generator: LibraryGenerator,
    /// Falls back to the noise section's `R`.
    pub r: Option<RSpec>,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSection {
    pub paths: usize,
    pub seed: u64,
    /// Grid of the reference run; `None` uses the experiment grid.
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CompareSection {
    /// The built-in ordered battery on the configured marks.
    Standard,
    /// The `[problem]` data against a second problem.
    Pair {
        terminal: Terminal,
        generator: LibraryGenerator,
        r: Option<RSpec>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoppingSection {
    pub domain: Domain,
    pub cap: f64,
    pub rho: f64,
    pub monitoring: Monitoring,
    pub caps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSection {
    /// `None` reuses the problem's `p`.
    pub p: Option<f64>,
    /// `None` picks `µ + 2L²`.
    pub a: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub label: String,
    pub seed: u64,
    pub paths: usize,
    pub out: Option<String>,
    pub horizon: f64,
    pub steps: usize,
    pub noise: NoiseSection,
    pub problem: ProblemSection,
    pub solver: SolverConfig,
    pub oracle: Option<OracleSection>,
    pub compare: Option<CompareSection>,
    pub stopping: Option<StoppingSection>,
    pub estimate: Option<EstimateSection>,
    pub convergence: Option<Vec<usize>>,
}

impl ExperimentConfig {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.steps)
    }

    pub fn marks(&self) -> Result<MarkSpace> {
        MarkSpace::new(
            self.noise.atoms.iter().map(|a| a.mark.clone()).collect(),
            self.noise.atoms.iter().map(|a| a.intensity).collect(),
        )
    }

    pub fn model(&self) -> Result<NoiseModel> {
        let m = NoiseModel::brownian(self.noise.brownian)
            .with_marks(self.marks()?)
            .with_extra(self.noise.extra)
            .with_r(self.noise.r.clone())
            .with_forward(self.noise.forward);
        m.validate()?;
        Ok(m)
    }

    fn build_problem(&self, terminal: &Terminal, generator: &LibraryGenerator, r: &Option<RSpec>) -> Result<GbsdeProblem> {
        let model = self.model()?;
        terminal.validate(&StateLayout::of(&model))?;
        let g = generator.build(&model)?;
        let r = r.clone().unwrap_or_else(|| self.noise.r.clone());
        GbsdeProblem::new(terminal.clone(), g, r)?.with_p(self.problem.p)
    }

    pub fn problem(&self) -> Result<GbsdeProblem> {
        let p = &self.problem;
        self.build_problem(&p.terminal, &p.generator, &p.r)
    }

    /// The `[compare]` cases: the standard battery or the single pair.
    pub fn comparison_cases(&self) -> Result<Vec<ComparisonCase>> {
        match &self.compare {
            None => Err(crate::error::invalid("compare", "the config has no [compare] section")),
            Some(CompareSection::Standard) => standard_battery(&self.marks()?),
            Some(CompareSection::Pair { terminal, generator, r }) => {
                let second = self.build_problem(terminal, generator, r)?;
                Ok(vec![ComparisonCase::new(self.label.clone(), self.problem()?, second)?])
            }
        }
    }

    pub fn stopping_spec(&self, prob: &GbsdeProblem) -> Result<Option<StoppingSpec>> {
        let Some(s) = &self.stopping else {
            return Ok(None);
        };
        let spec = StoppingSpec::new(s.domain, s.cap, s.rho, s.monitoring, prob)?;
        let grid = self.grid()?;
        for &c in &s.caps {
            spec.with_cap(c).cap_index(&grid)?;
        }
        Ok(Some(spec))
    }

    /// Coefficients of a `linear` problem for the closed-form oracle.
    pub fn linear_coefficients(&self) -> Result<LinearCoefficients> {
        let LibraryGenerator::Linear { alpha, beta, gamma, forcing } = &self.problem.generator else {
            return Err(crate::error::invalid("generator", "the oracle needs a `linear` generator"));
        };
        let model = self.model()?;
        let widen = |v: &[f64], n: usize| if v.len() == 1 { vec![v[0]; n] } else { v.to_vec() };
        LinearCoefficients::new(
            *alpha,
            widen(beta, model.brownian_dim),
            widen(gamma, model.atoms()),
            RateFn::Constant(*forcing),
            self.problem.terminal.clone(),
            self.problem.r.clone().unwrap_or_else(|| self.noise.r.clone()),
            &model,
        )
    }

    /// Estimation order and weight for `estimate`.
    pub fn estimate_params(&self, prob: &GbsdeProblem) -> (f64, f64) {
        let e = self.estimate.clone().unwrap_or(EstimateSection { p: None, a: None });
        let p = e.p.unwrap_or(prob.p);
        let l = prob.generator.lipschitz();
        (p, e.a.unwrap_or(prob.generator.mu + 2.0 * l * l))
    }

    /// Applies command-line overrides.
    pub fn with_overrides(mut self, seed: Option<u64>, paths: Option<usize>, out: Option<String>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(p) = paths {
            self.paths = p;
        }
        if out.is_some() {
            self.out = out;
        }
        self
    }
}

struct Entry {
    key: String,
    value: String,
    line: usize,
}

struct Section {
    line: usize,
    entries: Vec<Entry>,
}

impl Section {
    fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }
}

struct Reader {
    sections: BTreeMap<&'static str, Section>,
    diags: Vec<Diagnostic>,
}

type Parse<T> = fn(&str) -> std::result::Result<T, String>;

impl Reader {
    fn diag(&mut self, line: usize, message: impl Into<String>) {
        self.diags.push(Diagnostic {
            line,
            message: message.into(),
        });
    }

    fn line_of(&self, section: &str, key: &str) -> usize {
        self.sections
            .get(section)
            .map(|s| s.get(key).map_or(s.line, |e| e.line))
            .unwrap_or(0)
    }

    fn has(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    fn value<T>(&mut self, section: &str, key: &str, parse: Parse<T>) -> Option<Option<T>> {
        let got = self
            .sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|e| (e.line, parse(&e.value)));
        match got {
            None => Some(None),
            Some((_, Ok(v))) => Some(Some(v)),
            Some((line, Err(msg))) => {
                self.diag(line, format!("{section}.{key}: {msg}"));
                None
            }
        }
    }

    fn required<T>(&mut self, section: &str, key: &str, parse: Parse<T>) -> Option<T> {
        match self.value(section, key, parse)? {
            Some(v) => Some(v),
            None => {
                self.diag(0, format!("missing required key `{key}` in [{section}]"));
                None
            }
        }
    }

    fn or<T>(&mut self, section: &str, key: &str, default: T, parse: Parse<T>) -> Option<T> {
        self.value(section, key, parse).map(|v| v.unwrap_or(default))
    }
}

fn p_f64(s: &str) -> std::result::Result<f64, String> {
    s.trim().parse::<f64>().map_err(|_| format!("malformed number `{}`", s.trim()))
}

fn p_usize(s: &str) -> std::result::Result<usize, String> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| format!("malformed nonnegative integer `{}`", s.trim()))
}

fn p_u64(s: &str) -> std::result::Result<u64, String> {
    s.trim()
        .parse::<u64>()
        .map_err(|_| format!("malformed nonnegative integer `{}`", s.trim()))
}

fn p_string(s: &str) -> std::result::Result<String, String> {
    let s = s.trim();
    if s.is_empty() {
        Err("value must not be empty".into())
    } else {
        Ok(s.to_string())
    }
}

fn reason(e: Error) -> String {
    match e {
        Error::InvalidParameter { reason, .. } => reason,
        other => other.to_string(),
    }
}

fn p_terminal(s: &str) -> std::result::Result<Terminal, String> {
    Terminal::parse(s).map_err(reason)
}

fn p_generator(s: &str) -> std::result::Result<LibraryGenerator, String> {
    LibraryGenerator::parse(s).map_err(reason)
}

fn p_rspec(s: &str) -> std::result::Result<RSpec, String> {
    RSpec::parse(s).map_err(reason)
}

fn p_forward(s: &str) -> std::result::Result<ForwardState, String> {
    ForwardState::parse(s).map_err(reason)
}

fn p_domain(s: &str) -> std::result::Result<Domain, String> {
    s.parse::<Domain>().map_err(reason)
}

fn p_monitoring(s: &str) -> std::result::Result<Monitoring, String> {
    s.parse::<Monitoring>().map_err(reason)
}

fn p_f64_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split_whitespace().map(p_f64).collect()
}

fn p_usize_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split_whitespace().map(p_usize).collect()
}

fn p_auto_f64(s: &str) -> std::result::Result<Option<f64>, String> {
    match s.trim() {
        "auto" => Ok(None),
        other => p_f64(other).map(Some),
    }
}

fn p_scheme(s: &str) -> std::result::Result<CeScheme, String> {
    let (name, args) = call_syntax("scheme", s).map_err(reason)?;
    match (name, args.as_slice()) {
        ("regression", [d]) => Ok(CeScheme::Regression {
            degree: d.parse().map_err(|_| format!("malformed degree `{d}`"))?,
        }),
        ("nested", [k]) => Ok(CeScheme::NestedMc { inner: p_usize(k)? }),
        _ => Err(format!("expected regression(degree) or nested(inner), got `{}`", s.trim())),
    }
}

fn p_atom(s: &str) -> std::result::Result<Atom, String> {
    let (mark, lam) = s
        .split_once('@')
        .ok_or_else(|| "expected `<mark components> @ <intensity>`".to_string())?;
    let mark = p_f64_list(mark)?;
    let intensity = p_f64(lam)?;
    MarkSpace::new(vec![mark.clone()], vec![intensity]).map_err(reason)?;
    Ok(Atom { mark, intensity })
}

fn fmt_scheme(s: &CeScheme) -> String {
    match s {
        CeScheme::Regression { degree } => format!("regression({degree})"),
        CeScheme::NestedMc { inner } => format!("nested({inner})"),
    }
}

fn fmt_list<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn fmt_auto(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

/// Splits text into sections, reporting structural problems.
fn scan(text: &str) -> Reader {
    let mut r = Reader {
        sections: BTreeMap::new(),
        diags: Vec::new(),
    };
    let mut current: Option<&'static str> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']').map(str::trim) else {
                r.diag(line, format!("malformed section header `{body}`"));
                current = None;
                continue;
            };
            match SECTIONS.iter().find(|(s, _)| *s == name) {
                None => {
                    r.diag(line, format!("unknown section [{name}]"));
                    current = None;
                }
                Some((s, _)) => {
                    if let Some(prev) = r.sections.get(s) {
                        let first = prev.line;
                        r.diag(line, format!("duplicate section [{name}] (first on line {first})"));
                    } else {
                        r.sections.insert(s, Section { line, entries: Vec::new() });
                    }
                    current = Some(s);
                }
            }
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            r.diag(line, format!("expected `key = value`, got `{body}`"));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        let Some(sec) = current else {
            if r.diags.last().map_or(true, |d| d.line == 0 || !d.message.starts_with("unknown section")) {
                r.diag(line, format!("key `{key}` outside of a known section"));
            }
            continue;
        };
        let allowed = SECTIONS.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
        if !allowed.contains(&key) {
            r.diag(line, format!("unknown key `{key}` in [{sec}]"));
            continue;
        }
        let section = r.sections.get_mut(sec).expect("current section exists");
        let repeatable = REPEATABLE.contains(&(sec, key));
        if let Some(prev) = section.get(key).filter(|_| !repeatable) {
            let first = prev.line;
            r.diag(line, format!("duplicate key `{key}` in [{sec}] (first on line {first})"));
            continue;
        }
        section.entries.push(Entry {
            key: key.to_string(),
            value: value.to_string(),
            line,
        });
    }
    r
}

/// Parses a config, or returns every diagnostic found.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut r = scan(text);
    let dflt = SolverConfig::default();

    let label = r.or("experiment", "label", "experiment".to_string(), p_string);
    let seed = r.required("experiment", "seed", p_u64);
    let paths = r.required("experiment", "paths", p_usize);
    let out = r.value("experiment", "out", p_string);
    let horizon = r.required("grid", "horizon", p_f64);
    let steps = r.required("grid", "steps", p_usize);

    let brownian = r.or("noise", "brownian", 1, p_usize);
    let extra = r.or("noise", "extra", 0, p_usize);
    let atom_entries: Vec<(usize, String)> = r
        .sections
        .get("noise")
        .map(|s| s.entries.iter().filter(|e| e.key == "atom").map(|e| (e.line, e.value.clone())).collect())
        .unwrap_or_default();
    let mut atoms = Some(Vec::new());
    for (line, v) in atom_entries {
        match p_atom(&v) {
            Ok(a) => {
                if let Some(list) = atoms.as_mut() {
                    list.push(a);
                }
            }
            Err(msg) => {
                r.diag(line, format!("noise.atom: {msg}"));
                atoms = None;
            }
        }
    }
    let noise_r = r.or("noise", "r", RSpec::Zero, p_rspec);
    let forward = r.or("noise", "forward", ForwardState::Drivers, p_forward);

    let terminal = r.required("problem", "terminal", p_terminal);
    let generator = r.required("problem", "generator", p_generator);
    let prob_r = r.value("problem", "r", p_rspec);
    let p = r.or("problem", "p", 2.0, p_f64);

    let solver = (|| {
        Some(SolverConfig {
            scheme: r.or("solver", "scheme", dflt.scheme, p_scheme)?,
            picard_tol: r.or("solver", "picard_tol", dflt.picard_tol, p_f64)?,
            picard_max_iter: r.or("solver", "picard_max_iter", dflt.picard_max_iter, p_usize)?,
            truncation: r.or("solver", "truncation", dflt.truncation, p_auto_f64)?,
            damping: r.or("solver", "damping", dflt.damping, p_f64)?,
            nested_seed: r.or("solver", "nested_seed", dflt.nested_seed, p_u64)?,
            nested_budget: r.or("solver", "nested_budget", dflt.nested_budget, p_usize)?,
        })
    })();

    let oracle = if r.has("oracle") {
        let paths = r.or("oracle", "paths", paths.unwrap_or(0), p_usize);
        let seed = r.or("oracle", "seed", seed.unwrap_or(0).wrapping_add(1), p_u64);
        let steps = r.value("oracle", "steps", p_usize);
        match (paths, seed, steps) {
            (Some(paths), Some(seed), Some(steps)) => Some(Some(OracleSection { paths, seed, steps })),
            _ => None,
        }
    } else {
        Some(None)
    };

    let compare = if r.has("compare") {
        let battery = r.value("compare", "battery", p_string);
        let t = r.value("compare", "terminal", p_terminal);
        let g = r.value("compare", "generator", p_generator);
        let cr = r.value("compare", "r", p_rspec);
        let line = r.line_of("compare", "battery");
        match (battery, t, g, cr) {
            (Some(Some(b)), Some(None), Some(None), Some(None)) => {
                if b == "standard" {
                    Some(Some(CompareSection::Standard))
                } else {
                    r.diag(line, format!("unknown battery `{b}` (only `standard` exists)"));
                    None
                }
            }
            (Some(None), Some(Some(terminal)), Some(Some(generator)), Some(r2)) => {
                Some(Some(CompareSection::Pair { terminal, generator, r: r2 }))
            }
            (Some(b), Some(t), Some(g), Some(_)) => {
                let msg = if b.is_some() {
                    "`battery` excludes terminal, generator and r"
                } else if t.is_none() || g.is_none() {
                    "a comparison pair needs both `terminal` and `generator`"
                } else {
                    "inconsistent [compare] section"
                };
                r.diag(line, msg);
                None
            }
            _ => None,
        }
    } else {
        Some(None)
    };

    let stopping = if r.has("stopping") {
        let domain = r.required("stopping", "domain", p_domain);
        let cap = r.required("stopping", "cap", p_f64);
        let rho = r.required("stopping", "rho", p_f64);
        let monitoring = r.or("stopping", "monitoring", Monitoring::Discrete, p_monitoring);
        let caps = r.value("stopping", "caps", p_f64_list);
        match (domain, cap, rho, monitoring, caps) {
            (Some(domain), Some(cap), Some(rho), Some(monitoring), Some(caps)) => Some(Some(StoppingSection {
                domain,
                cap,
                rho,
                monitoring,
                caps: caps.unwrap_or_else(|| doubling_caps(cap)),
            })),
            _ => None,
        }
    } else {
        Some(None)
    };

    let estimate = if r.has("estimate") {
        let ep = r.value("estimate", "p", p_f64);
        let a = r.or("estimate", "a", None, p_auto_f64);
        match (ep, a) {
            (Some(p), Some(a)) => Some(Some(EstimateSection { p, a })),
            _ => None,
        }
    } else {
        Some(None)
    };

    let convergence = if r.has("convergence") {
        r.required("convergence", "steps", p_usize_list).map(Some)
    } else {
        Some(None)
    };

    if !r.diags.is_empty() {
        return Err(Error::Config(sorted(r.diags)));
    }
    let cfg = ExperimentConfig {
        label: label.expect("no diagnostics"),
        seed: seed.expect("no diagnostics"),
        paths: paths.expect("no diagnostics"),
        out: out.expect("no diagnostics"),
        horizon: horizon.expect("no diagnostics"),
        steps: steps.expect("no diagnostics"),
        noise: NoiseSection {
            brownian: brownian.expect("no diagnostics"),
            extra: extra.expect("no diagnostics"),
            atoms: atoms.expect("no diagnostics"),
            r: noise_r.expect("no diagnostics"),
            forward: forward.expect("no diagnostics"),
        },
        problem: ProblemSection {
            terminal: terminal.expect("no diagnostics"),
            generator: generator.expect("no diagnostics"),
            r: prob_r.expect("no diagnostics"),
            p: p.expect("no diagnostics"),
        },
        solver: solver.expect("no diagnostics"),
        oracle: oracle.expect("no diagnostics"),
        compare: compare.expect("no diagnostics"),
        stopping: stopping.expect("no diagnostics"),
        estimate: estimate.expect("no diagnostics"),
        convergence: convergence.expect("no diagnostics"),
    };
    semantic_checks(&cfg, &mut r);
    if r.diags.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(sorted(r.diags)))
    }
}

fn sorted(mut d: Vec<Diagnostic>) -> Vec<Diagnostic> {
    // Stable: line-0 diagnostics keep their key order at the end.
    d.sort_by_key(|x| if x.line == 0 { usize::MAX } else { x.line });
    d
}

/// Cross-field checks, reported against the most relevant line.
fn semantic_checks(cfg: &ExperimentConfig, r: &mut Reader) {
    let check = |r: &mut Reader, section: &str, key: &str, res: Result<()>| {
        if let Err(e) = res {
            let line = r.line_of(section, key);
            r.diag(line, format!("{section}.{key}: {}", reason(e)));
        }
    };
    check(r, "grid", "steps", cfg.grid().map(|_| ()));
    if cfg.paths < 2 {
        check(r, "experiment", "paths", Err(crate::error::invalid("paths", "need at least 2 paths")));
    }
    let model = cfg.model();
    let model_ok = model.is_ok();
    check(r, "noise", "atom", model.map(|_| ()));
    if !model_ok {
        return;
    }
    check(r, "solver", "scheme", cfg.solver.validate());
    let prob = cfg.problem();
    let key = match &prob {
        Err(Error::InvalidParameter { name, .. }) if name == "p" => "p",
        Err(Error::InvalidParameter { name, .. }) if name == "generator" || name == "beta" || name == "gamma" => "generator",
        _ => "terminal",
    };
    let prob = match prob {
        Ok(p) => p,
        Err(e) => {
            check(r, "problem", key, Err(e));
            return;
        }
    };
    if let Some(o) = &cfg.oracle {
        if o.paths < 2 {
            check(r, "oracle", "paths", Err(crate::error::invalid("paths", "need at least 2 paths")));
        }
        if o.steps == Some(0) {
            check(r, "oracle", "steps", Err(crate::error::invalid("steps", "need at least 1 step")));
        }
        check(r, "problem", "generator", cfg.linear_coefficients().map(|_| ()));
    }
    if cfg.compare.is_some() {
        let key = if matches!(cfg.compare, Some(CompareSection::Standard)) { "battery" } else { "generator" };
        check(r, "compare", key, cfg.comparison_cases().map(|_| ()));
    }
    if let Some(s) = &cfg.stopping {
        let key = if s.rho.is_finite() { "rho" } else { "cap" };
        let res = cfg.stopping_spec(&prob).map(|_| ());
        let key = match &res {
            Err(Error::InvalidParameter { name, .. }) if name == "cap" => "caps",
            _ => key,
        };
        check(r, "stopping", key, res);
        if s.caps.is_empty() || s.caps.windows(2).any(|w| !(w[1] > w[0])) {
            check(r, "stopping", "caps", Err(crate::error::invalid("caps", "need an increasing, nonempty list")));
        }
    }
    if let Some(e) = &cfg.estimate {
        if let Some(p) = e.p {
            if !(p >= 2.0 && p.is_finite()) {
                check(r, "estimate", "p", Err(crate::error::invalid("p", "need a finite p >= 2")));
            }
        }
    }
    if let Some(list) = &cfg.convergence {
        if list.is_empty() || list.contains(&0) {
            check(r, "convergence", "steps", Err(crate::error::invalid("steps", "need a nonempty list of positive step counts")));
        }
        let finest = list.iter().copied().max().unwrap_or(1);
        if list.iter().any(|&n| n == 0 || finest % n != 0) {
            check(r, "convergence", "steps", Err(crate::error::invalid("steps", "every entry must divide the largest one")));
        }
        check(r, "problem", "generator", cfg.linear_coefficients().map(|_| ()));
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[experiment]")?;
        writeln!(f, "label = {}", self.label)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "paths = {}", self.paths)?;
        if let Some(o) = &self.out {
            writeln!(f, "out = {o}")?;
        }
        writeln!(f, "\n[grid]")?;
        writeln!(f, "horizon = {}", self.horizon)?;
        writeln!(f, "steps = {}", self.steps)?;
        let n = &self.noise;
        writeln!(f, "\n[noise]")?;
        writeln!(f, "brownian = {}", n.brownian)?;
        writeln!(f, "extra = {}", n.extra)?;
        for a in &n.atoms {
            writeln!(f, "atom = {} @ {}", fmt_list(&a.mark), a.intensity)?;
        }
        writeln!(f, "r = {}", n.r)?;
        writeln!(f, "forward = {}", n.forward)?;
        let p = &self.problem;
        writeln!(f, "\n[problem]")?;
        writeln!(f, "terminal = {}", p.terminal)?;
        writeln!(f, "generator = {}", p.generator)?;
        if let Some(r) = &p.r {
            writeln!(f, "r = {r}")?;
        }
        writeln!(f, "p = {}", p.p)?;
        let s = &self.solver;
        writeln!(f, "\n[solver]")?;
        writeln!(f, "scheme = {}", fmt_scheme(&s.scheme))?;
        writeln!(f, "picard_tol = {}", s.picard_tol)?;
        writeln!(f, "picard_max_iter = {}", s.picard_max_iter)?;
        writeln!(f, "truncation = {}", fmt_auto(s.truncation))?;
        writeln!(f, "damping = {}", s.damping)?;
        writeln!(f, "nested_seed = {}", s.nested_seed)?;
        writeln!(f, "nested_budget = {}", s.nested_budget)?;
        if let Some(o) = &self.oracle {
            writeln!(f, "\n[oracle]")?;
            writeln!(f, "paths = {}", o.paths)?;
            writeln!(f, "seed = {}", o.seed)?;
            if let Some(st) = o.steps {
                writeln!(f, "steps = {st}")?;
            }
        }
        match &self.compare {
            None => {}
            Some(CompareSection::Standard) => writeln!(f, "\n[compare]\nbattery = standard")?,
            Some(CompareSection::Pair { terminal, generator, r }) => {
                writeln!(f, "\n[compare]")?;
                writeln!(f, "terminal = {terminal}")?;
                writeln!(f, "generator = {generator}")?;
                if let Some(r) = r {
                    writeln!(f, "r = {r}")?;
                }
            }
        }
        if let Some(s) = &self.stopping {
            writeln!(f, "\n[stopping]")?;
            writeln!(f, "domain = {}", s.domain)?;
            writeln!(f, "cap = {}", s.cap)?;
            writeln!(f, "rho = {}", s.rho)?;
            writeln!(f, "monitoring = {}", s.monitoring)?;
            writeln!(f, "caps = {}", fmt_list(&s.caps))?;
        }
        if let Some(e) = &self.estimate {
            writeln!(f, "\n[estimate]")?;
            if let Some(p) = e.p {
                writeln!(f, "p = {p}")?;
            }
            writeln!(f, "a = {}", fmt_auto(e.a))?;
        }
        if let Some(c) = &self.convergence {
            writeln!(f, "\n[convergence]")?;
            writeln!(f, "steps = {}", fmt_list(c))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = "\
[experiment]
seed = 3
paths = 500

[grid]
horizon = 1
steps = 10

[noise]
atom = 1 @ 0.5
atom = -0.5 @ 1.5

[problem]
terminal = w(0) + n(1)
generator = linear(-0.5, 0.3, [0.2 0.1])

[oracle]
paths = 1000

[convergence]
steps = 5 10 # coarse
";

    fn diags(text: &str) -> Vec<Diagnostic> {
        match parse_config(text) {
            Err(Error::Config(d)) => d,
            other => panic!("expected diagnostics, got {other:?}"),
        }
    }

    #[test]
    fn basic_config_round_trips() {
        let cfg = parse_config(BASIC).unwrap();
        assert_eq!(cfg.noise.atoms.len(), 2);
        assert_eq!(cfg.oracle.as_ref().unwrap().seed, 4);
        assert_eq!(cfg.convergence, Some(vec![5, 10]));
        let printed = cfg.to_string();
        let again = parse_config(&printed).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_string(), printed);
    }

    #[test]
    fn empty_file_lists_required_keys() {
        let d = diags("");
        let msgs: Vec<&str> = d.iter().map(|d| d.message.as_str()).collect();
        for key in ["seed", "paths", "horizon", "steps", "terminal", "generator"] {
            assert!(msgs.iter().any(|m| m.contains(&format!("`{key}`"))), "{key} not listed in {msgs:?}");
        }
        assert!(d.iter().all(|d| d.line == 0));
    }

    #[test]
    fn negative_intensity_is_flagged_on_its_line() {
        let text = BASIC.replace("atom = 1 @ 0.5", "atom = 1.0 @ -2");
        let d = diags(&text);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].line, 10);
        assert!(d[0].message.contains("intensity must be positive"));
    }

    #[test]
    fn structural_errors_carry_line_numbers() {
        let text = "[experiment]\nseed = 1\nseed = 2\npaths = 1x\n[nonsense]\nx = 1\n[grid]\nhorizon = 1\nsteps = 4\nspeed = 3\n[problem]\nterminal = 0\ngenerator = zero\n";
        let d = diags(text);
        let lines: Vec<usize> = d.iter().map(|d| d.line).collect();
        assert_eq!(lines, vec![3, 4, 5, 10]);
        assert!(d[0].message.contains("duplicate key"));
        assert!(d[1].message.contains("malformed"));
        assert!(d[2].message.contains("unknown section"));
        assert!(d[3].message.contains("unknown key"));
    }

    #[test]
    fn semantic_errors_point_at_the_key() {
        let text = BASIC.replace("generator = linear(-0.5, 0.3, [0.2 0.1])", "generator = linear(-0.5, 0.3, [0.2 0.1 0.4])");
        let d = diags(&text);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].line, 15);
    }

    #[test]
    fn overrides_replace_seed_and_paths() {
        let cfg = parse_config(BASIC).unwrap().with_overrides(Some(9), Some(64), Some("o".into()));
        assert_eq!((cfg.seed, cfg.paths, cfg.out.as_deref()), (9, 64, Some("o")));
        assert_eq!(parse_config(&cfg.to_string()).unwrap(), cfg);
    }
}
