use std::fmt;

/// A line-numbered problem found while parsing an experiment config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// 1-based line number; 0 when the problem is not tied to a line (missing keys).
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error(
        "Picard iteration diverged at step {step} (path {path}) after {iterations} iterations; \
         contraction estimate {contraction:.3e}"
    )]
    PicardDiverged {
        step: usize,
        path: usize,
        iterations: usize,
        contraction: f64,
    },

    #[error("regression basis is rank deficient at step {step} ({rank} of {columns} columns, condition {condition:.3e})")]
    RegressionSingular {
        step: usize,
        rank: usize,
        columns: usize,
        condition: f64,
    },

    #[error("generator has no comparison kernel")]
    MissingKernel,

    #[error("config error:\n{}", format_diagnostics(.0))]
    Config(Vec<Diagnostic>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| format!("  {d}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name: name.into(),
        reason: reason.into(),
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
