use super::parser::{AGGREGATES, KEYWORDS};
use crate::error::{Error, Result};
use crate::metric::{AggregateKind, ArithOp, Metric, MetricKind, Operation};
use crate::table::Cell;

const PIPE: u8 = 0;
const ATOM: u8 = 4;

/// Render a metric in DSL syntax with minimal parentheses.
///
/// Fails for trees the syntax cannot express: non-finite literals,
/// non-constant exponents, and renames of more than one column.
pub fn to_dsl(m: &Metric) -> Result<String> {
    let mut out = String::new();
    write(m, PIPE, &mut out)?;
    Ok(out)
}

fn precedence(m: &Metric) -> u8 {
    if m.names_override().is_some() {
        return PIPE;
    }
    kind_precedence(m.kind())
}

fn kind_precedence(kind: &MetricKind) -> u8 {
    match kind {
        MetricKind::Operation { .. } => PIPE,
        MetricKind::Composite { op, .. } => op.precedence(),
        MetricKind::Aggregate(_) | MetricKind::Scalar(_) => ATOM,
    }
}

fn write(m: &Metric, min: u8, out: &mut String) -> Result<()> {
    if precedence(m) < min {
        out.push('(');
        write(m, PIPE, out)?;
        out.push(')');
        return Ok(());
    }
    match m.names_override() {
        Some([name]) => {
            write_kind(m.kind(), PIPE, out)?;
            out.push_str(" as ");
            out.push_str(&string_literal(name));
            Ok(())
        }
        Some(names) => Err(Error::InvalidArgument(format!(
            "cannot express a rename to {} names",
            names.len()
        ))),
        None => write_kind(m.kind(), min, out),
    }
}

fn write_kind(kind: &MetricKind, min: u8, out: &mut String) -> Result<()> {
    if kind_precedence(kind) < min {
        out.push('(');
        write_kind(kind, PIPE, out)?;
        out.push(')');
        return Ok(());
    }
    match kind {
        MetricKind::Aggregate(agg) => {
            let name = match agg.kind {
                AggregateKind::Sum => "sum",
                AggregateKind::Count => "count",
                AggregateKind::Mean => "mean",
                AggregateKind::Min => "min",
                AggregateKind::Max => "max",
                AggregateKind::Variance => "variance",
                AggregateKind::StdDev => "sd",
                AggregateKind::Quantile(_) => "quantile",
            };
            debug_assert!(AGGREGATES.contains(&name));
            out.push_str(name);
            out.push('(');
            out.push_str(&column(&agg.column));
            if let AggregateKind::Quantile(q) = agg.kind {
                out.push_str(", ");
                out.push_str(&number(q)?);
            }
            out.push(')');
        }
        MetricKind::Scalar(v) => out.push_str(&number(*v)?),
        MetricKind::Composite { op, left, right } => {
            if *op == ArithOp::Pow {
                let exponent = right.scalar_value().filter(|_| right.names_override().is_none()).ok_or_else(|| {
                    Error::InvalidArgument("exponents must be numeric literals".into())
                })?;
                write(left, ATOM, out)?;
                out.push_str(" ** ");
                out.push_str(&number(exponent)?);
            } else {
                let p = op.precedence();
                write(left, p, out)?;
                out.push(' ');
                out.push_str(op.symbol());
                out.push(' ');
                write(right, p + 1, out)?;
            }
        }
        MetricKind::Operation { op, child } => {
            write(child, PIPE, out)?;
            out.push_str(" | ");
            out.push_str(&operation(op)?);
        }
    }
    Ok(())
}

fn operation(op: &Operation) -> Result<String> {
    Ok(match op {
        Operation::Distribution { over } => format!("distribution({})", column(over)),
        Operation::AbsoluteChange { condition, baseline } => {
            format!("absolute_change({}, {})", column(condition), cell(baseline)?)
        }
        Operation::PercentChange { condition, baseline } => {
            format!("percent_change({}, {})", column(condition), cell(baseline)?)
        }
        Operation::Bootstrap { n_rep, seed } => format!("bootstrap(n_rep = {n_rep}, seed = {seed})"),
        Operation::Jackknife { unit } => format!("jackknife({})", column(unit)),
    })
}

fn column(name: &str) -> String {
    let mut chars = name.chars();
    let plain = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_');
    if plain && !KEYWORDS.contains(&name) {
        name.to_string()
    } else {
        format!("`{}`", name.replace('`', "``"))
    }
}

fn number(v: f64) -> Result<String> {
    if v.is_finite() {
        Ok(format!("{v:?}"))
    } else {
        Err(Error::InvalidArgument(format!("cannot express the literal {v}")))
    }
}

fn cell(c: &Cell) -> Result<String> {
    Ok(match c {
        Cell::Text(s) => string_literal(s),
        Cell::Int(v) => v.to_string(),
        Cell::Float(v) => number(*v)?,
        Cell::Null => "null".to_string(),
    })
}

fn string_literal(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}
