//! A small text syntax for metric trees.
//!
//! ```text
//! sum(lost) / count(lost) as "churn" | percent_change(experiment, "control")
//! ```
//!
//! Arithmetic uses the usual precedence (`+ -` below `* /` below `**`), and
//! `|` pipes everything to its left into an operation, binding loosest. A
//! trailing `as "name"` renames the metric it follows. Column names are bare
//! identifiers or backtick-quoted; strings are reserved for baselines and
//! renames. Several metrics may be separated by `;`, and `#` starts a comment.
//!
//! | call | arguments |
//! |------|-----------|
//! | `sum`, `count`, `mean`, `min`, `max`, `variance`, `sd` | `var` |
//! | `quantile` | `var`, `q` |
//! | `distribution` | `over` |
//! | `percent_change`, `absolute_change` | `condition`, `baseline` |
//! | `bootstrap` | `n_rep = 1000`, `seed = 0` |
//! | `jackknife` | `unit` |
//!
//! Arguments are positional or `name = value`.

mod lexer;
mod parser;
mod printer;

use std::fmt;

use crate::metric::Metric;

pub use printer::to_dsl;

/// Byte range of a piece of source with the 1-based position of its start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DslError {
    pub line: usize,
    pub col: usize,
    pub message: String,
    /// Tokens that would have been accepted at the error position.
    pub expected: Vec<String>,
    /// Closest known name when an unknown one was used.
    pub suggestion: Option<String>,
}

impl DslError {
    pub(crate) fn at(span: Span, message: impl Into<String>) -> Self {
        DslError {
            line: span.line,
            col: span.col,
            message: message.into(),
            expected: Vec::new(),
            suggestion: None,
        }
    }
}

impl fmt::Display for DslError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)?;
        match self.expected.as_slice() {
            [] => {}
            [one] => write!(f, "; expected {one}")?,
            many => write!(f, "; expected one of {}", many.join(", "))?,
        }
        if let Some(s) = &self.suggestion {
            write!(f, "; did you mean `{s}`?")?;
        }
        Ok(())
    }
}

impl std::error::Error for DslError {}

/// One `;`-separated metric with source locations for diagnostics.
#[derive(Debug, Clone)]
pub struct DslStatement {
    pub metric: Metric,
    pub span: Span,
    /// Every column reference in source order.
    pub columns: Vec<(String, Span)>,
}

#[derive(Debug, Clone)]
pub struct DslProgram {
    pub statements: Vec<DslStatement>,
}

impl DslProgram {
    pub fn metrics(&self) -> Vec<Metric> {
        self.statements.iter().map(|s| s.metric.clone()).collect()
    }

    /// Where `column` is first referenced.
    pub fn column_span(&self, column: &str) -> Option<Span> {
        self.statements
            .iter()
            .flat_map(|s| &s.columns)
            .find(|(c, _)| c == column)
            .map(|(_, span)| *span)
    }
}

/// Prints one statement per line; parsing the output yields the same trees.
impl fmt::Display for DslProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut texts = Vec::with_capacity(self.statements.len());
        for s in &self.statements {
            texts.push(to_dsl(&s.metric).map_err(|_| fmt::Error)?);
        }
        f.write_str(&texts.join(";\n"))
    }
}

pub fn parse(src: &str) -> Result<DslProgram, DslError> {
    parser::parse_program(src)
}

/// Parse source that must contain exactly one metric.
pub fn parse_metric(src: &str) -> Result<Metric, DslError> {
    let program = parse(src)?;
    match program.statements.len() {
        1 => Ok(program.statements[0].metric.clone()),
        n => Err(DslError::at(
            program.statements.get(1).map(|s| s.span).unwrap_or_default(),
            format!("expected a single metric, found {n}"),
        )),
    }
}
