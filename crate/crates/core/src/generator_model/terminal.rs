//! Terminal conditions as small expressions over the stopped state.
//!
//! Grammar: `+ - * /`, unary minus, parentheses, numbers, `t` (the stop
//! time), `x` (forward diffusion), `w(i)`, `n(j)`, `b(i)` (running Brownian,
//! jump-count and extra-channel sums), `exp sin cos abs sqrt log` and
//! two-argument `min max`. Vector terminals separate components with `;`.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::path_engine::{ForwardState, NoiseModel};

/// Where each driver lives inside a full state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub d: usize,
    pub m: usize,
    pub e: usize,
    pub forward: bool,
}

impl StateLayout {
    pub fn of(model: &NoiseModel) -> Self {
        StateLayout {
            d: model.brownian_dim,
            m: model.atoms(),
            e: model.extra_dim,
            forward: matches!(model.forward, ForwardState::Diffusion { .. }),
        }
    }
}

/// The stopped path seen by a terminal condition.
#[derive(Debug, Clone, Copy)]
pub struct TerminalView<'a> {
    pub t: f64,
    pub state: &'a [f64],
    pub layout: StateLayout,
}

impl<'a> TerminalView<'a> {
    pub fn new(t: f64, state: &'a [f64], layout: StateLayout) -> Self {
        TerminalView { t, state, layout }
    }

    /// A Brownian-only view where `state` is `W_t`.
    pub fn fixed(t: f64, state: &'a [f64]) -> Self {
        TerminalView {
            t,
            state,
            layout: StateLayout {
                d: state.len(),
                m: 0,
                e: 0,
                forward: false,
            },
        }
    }

    fn get(&self, offset: usize, len: usize, i: usize) -> f64 {
        if i < len {
            self.state.get(offset + i).copied().unwrap_or(f64::NAN)
        } else {
            f64::NAN
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fun {
    Exp,
    Sin,
    Cos,
    Abs,
    Sqrt,
    Log,
}

impl Fun {
    fn name(self) -> &'static str {
        match self {
            Fun::Exp => "exp",
            Fun::Sin => "sin",
            Fun::Cos => "cos",
            Fun::Abs => "abs",
            Fun::Sqrt => "sqrt",
            Fun::Log => "log",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Fun::Exp => x.exp(),
            Fun::Sin => x.sin(),
            Fun::Cos => x.cos(),
            Fun::Abs => x.abs(),
            Fun::Sqrt => x.sqrt(),
            Fun::Log => x.ln(),
        }
    }

    fn from_name(s: &str) -> Option<Fun> {
        Some(match s {
            "exp" => Fun::Exp,
            "sin" => Fun::Sin,
            "cos" => Fun::Cos,
            "abs" => Fun::Abs,
            "sqrt" => Fun::Sqrt,
            "log" => Fun::Log,
            _ => return None,
        })
    }
}

pub type CustomTerminal = Arc<dyn Fn(&TerminalView) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Expr {
    Const(f64),
    Time,
    X,
    W(usize),
    N(usize),
    B(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Call(Fun, Box<Expr>),
    Custom(String, CustomTerminal),
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        use Expr::*;
        match (self, other) {
            (Const(a), Const(b)) => a.to_bits() == b.to_bits(),
            (Time, Time) | (X, X) => true,
            (W(a), W(b)) | (N(a), N(b)) | (B(a), B(b)) => a == b,
            (Neg(a), Neg(b)) => a == b,
            (Add(a, b), Add(c, d))
            | (Sub(a, b), Sub(c, d))
            | (Mul(a, b), Mul(c, d))
            | (Div(a, b), Div(c, d))
            | (Max(a, b), Max(c, d))
            | (Min(a, b), Min(c, d)) => a == c && b == d,
            (Call(f, a), Call(g, b)) => f == g && a == b,
            (Custom(_, f), Custom(_, g)) => Arc::ptr_eq(f, g),
            _ => false,
        }
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl Expr {
    pub fn eval(&self, v: &TerminalView) -> f64 {
        let l = v.layout;
        match self {
            Expr::Const(c) => *c,
            Expr::Time => v.t,
            Expr::X => {
                if l.forward {
                    v.get(l.d + l.m + l.e, 1, 0)
                } else {
                    f64::NAN
                }
            }
            Expr::W(i) => v.get(0, l.d, *i),
            Expr::N(j) => v.get(l.d, l.m, *j),
            Expr::B(i) => v.get(l.d + l.m, l.e, *i),
            Expr::Neg(a) => -a.eval(v),
            Expr::Add(a, b) => a.eval(v) + b.eval(v),
            Expr::Sub(a, b) => a.eval(v) - b.eval(v),
            Expr::Mul(a, b) => a.eval(v) * b.eval(v),
            Expr::Div(a, b) => a.eval(v) / b.eval(v),
            Expr::Max(a, b) => a.eval(v).max(b.eval(v)),
            Expr::Min(a, b) => a.eval(v).min(b.eval(v)),
            Expr::Call(fun, a) => fun.apply(a.eval(v)),
            Expr::Custom(_, f) => f(v),
        }
    }

    /// Checks that every referenced driver exists in `layout`.
    pub fn validate(&self, l: &StateLayout) -> Result<()> {
        let bad = |what: &str, i: usize, n: usize| {
            Err(invalid("terminal", format!("{what}({i}) out of range: only {n} available")))
        };
        match self {
            Expr::W(i) if *i >= l.d => bad("w", *i, l.d),
            Expr::N(i) if *i >= l.m => bad("n", *i, l.m),
            Expr::B(i) if *i >= l.e => bad("b", *i, l.e),
            Expr::X if !l.forward => Err(invalid("terminal", "x needs a diffusion forward state")),
            Expr::Neg(a) | Expr::Call(_, a) => a.validate(l),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Max(a, b)
            | Expr::Min(a, b) => {
                a.validate(l)?;
                b.validate(l)
            }
            _ => Ok(()),
        }
    }

    fn prec(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Const(c) if c.is_sign_negative() => 3,
            _ => 4,
        }
    }

    fn write_child(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.prec() < min {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bin = |f: &mut fmt::Formatter<'_>, a: &Expr, op: &str, b: &Expr, p: u8| -> fmt::Result {
            a.write_child(f, p)?;
            write!(f, " {op} ")?;
            b.write_child(f, p + 1)
        };
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Time => write!(f, "t"),
            Expr::X => write!(f, "x"),
            Expr::W(i) => write!(f, "w({i})"),
            Expr::N(i) => write!(f, "n({i})"),
            Expr::B(i) => write!(f, "b({i})"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                if matches!(**a, Expr::Const(_)) {
                    write!(f, "({a})")
                } else {
                    a.write_child(f, 3)
                }
            }
            Expr::Add(a, b) => bin(f, a, "+", b, 1),
            Expr::Sub(a, b) => bin(f, a, "-", b, 1),
            Expr::Mul(a, b) => bin(f, a, "*", b, 2),
            Expr::Div(a, b) => bin(f, a, "/", b, 2),
            Expr::Max(a, b) => write!(f, "max({a}, {b})"),
            Expr::Min(a, b) => write!(f, "min({a}, {b})"),
            Expr::Call(fun, a) => write!(f, "{}({a})", fun.name()),
            Expr::Custom(name, _) => write!(f, "custom:{name}"),
        }
    }
}

/// `ξ ∈ R^k`, one expression per component, optionally radially truncated.
#[derive(Debug, Clone, PartialEq)]
pub struct Terminal {
    components: Vec<Expr>,
    trunc: Option<f64>,
}

impl Terminal {
    pub fn new(components: Vec<Expr>) -> Self {
        Terminal {
            components,
            trunc: None,
        }
    }

    pub fn constant(c: f64) -> Self {
        Terminal::new(vec![Expr::Const(c)])
    }

    pub fn custom(name: impl Into<String>, f: CustomTerminal) -> Self {
        Terminal::new(vec![Expr::Custom(name.into(), f)])
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn truncation(&self) -> Option<f64> {
        self.trunc
    }

    pub fn truncated(&self, n: f64) -> Terminal {
        if n == f64::INFINITY {
            return self.clone();
        }
        Terminal {
            components: self.components.clone(),
            trunc: Some(self.trunc.map_or(n, |m| m.min(n))),
        }
    }

    pub fn validate(&self, layout: &StateLayout) -> Result<()> {
        self.components.iter().try_for_each(|c| c.validate(layout))
    }

    pub fn eval(&self, view: &TerminalView, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval(view);
        }
        if let Some(n) = self.trunc {
            super::truncate_in_place(out, n);
        }
    }

    pub fn eval_scalar(&self, view: &TerminalView) -> Result<f64> {
        if self.dim() != 1 {
            return Err(Error::DimensionMismatch {
                context: "scalar terminal",
                expected: 1,
                got: self.dim(),
            });
        }
        let mut out = [0.0];
        self.eval(view, &mut out);
        Ok(out[0])
    }

    pub fn parse(text: &str) -> Result<Terminal> {
        let components = text
            .split(';')
            .map(|part| Parser::new(part)?.parse_all())
            .collect::<Result<Vec<_>>>()?;
        Ok(Terminal::new(components))
    }
}

impl fmt::Display for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.components.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{c}")?;
        }
        if let Some(n) = self.trunc {
            write!(f, " (truncated at {n})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
    src: String,
}

fn err(src: &str, msg: impl fmt::Display) -> Error {
    invalid("terminal", format!("{msg} in `{}`", src.trim()))
}

impl Parser {
    fn new(src: &str) -> Result<Self> {
        let chars: Vec<char> = src.chars().collect();
        let mut toks = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_digit() || c == '.' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let s: String = chars[start..i].iter().collect();
                let v = s.parse::<f64>().map_err(|_| err(src, format!("malformed number `{s}`")))?;
                toks.push(Tok::Num(v));
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                toks.push(Tok::Ident(chars[start..i].iter().collect()));
            } else if "+-*/(),".contains(c) {
                toks.push(Tok::Sym(c));
                i += 1;
            } else {
                return Err(err(src, format!("unexpected character `{c}`")));
            }
        }
        Ok(Parser {
            toks,
            pos: 0,
            src: src.to_string(),
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, c: char) -> Result<()> {
        match self.next() {
            Some(Tok::Sym(s)) if s == c => Ok(()),
            _ => Err(err(&self.src, format!("expected `{c}`"))),
        }
    }

    fn parse_all(mut self) -> Result<Expr> {
        if self.toks.is_empty() {
            return Err(err(&self.src, "empty expression"));
        }
        let e = self.expr()?;
        if self.pos != self.toks.len() {
            return Err(err(&self.src, "trailing input"));
        }
        Ok(e)
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(Tok::Sym(c @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if c == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        while let Some(Tok::Sym(c @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = if c == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr> {
        match self.next() {
            Some(Tok::Sym('-')) => {
                if let Some(Tok::Num(v)) = self.peek().cloned() {
                    self.pos += 1;
                    return Ok(Expr::Const(-v));
                }
                Ok(Expr::Neg(Box::new(self.factor()?)))
            }
            Some(Tok::Num(v)) => Ok(Expr::Const(v)),
            Some(Tok::Sym('(')) => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => self.ident(name),
            _ => Err(err(&self.src, "expected a value")),
        }
    }

    fn index(&mut self) -> Result<usize> {
        self.expect('(')?;
        let i = match self.next() {
            Some(Tok::Num(v)) if v >= 0.0 && v.fract() == 0.0 => v as usize,
            _ => return Err(err(&self.src, "driver index must be a nonnegative integer")),
        };
        self.expect(')')?;
        Ok(i)
    }

    fn ident(&mut self, name: String) -> Result<Expr> {
        match name.as_str() {
            "t" => Ok(Expr::Time),
            "x" => Ok(Expr::X),
            "w" => Ok(Expr::W(self.index()?)),
            "n" => Ok(Expr::N(self.index()?)),
            "b" => Ok(Expr::B(self.index()?)),
            "max" | "min" => {
                self.expect('(')?;
                let a = self.expr()?;
                self.expect(',')?;
                let b = self.expr()?;
                self.expect(')')?;
                let (a, b) = (Box::new(a), Box::new(b));
                Ok(if name == "max" { Expr::Max(a, b) } else { Expr::Min(a, b) })
            }
            other => match Fun::from_name(other) {
                Some(f) => {
                    self.expect('(')?;
                    let a = self.expr()?;
                    self.expect(')')?;
                    Ok(Expr::Call(f, Box::new(a)))
                }
                None => Err(err(&self.src, format!("unknown name `{other}`"))),
            },
        }
    }
}
