use crate::error::{Error, Result};
use crate::metric::{Aggregate, AggregateKind};
use crate::table::{Cell, Column, ColumnKind, Table};

/// Evaluate a leaf aggregate over every row of `slice`.
pub fn eval_leaf(agg: &Aggregate, slice: &Table) -> Result<f64> {
    let column = slice.column(&agg.column)?;
    check_type(agg, column)?;
    Ok(aggregate_cells(agg.kind, column.values().iter()))
}

pub(crate) fn check_type(agg: &Aggregate, column: &Column) -> Result<()> {
    if agg.kind != AggregateKind::Count && column.kind() == ColumnKind::Text {
        return Err(Error::TypeMismatch {
            column: agg.column.clone(),
            aggregate: agg.kind.label().to_string(),
        });
    }
    Ok(())
}

/// Aggregate non-null numeric cells. `Count` counts every non-null cell.
pub(crate) fn aggregate_cells<'a>(kind: AggregateKind, cells: impl Iterator<Item = &'a Cell>) -> f64 {
    if kind == AggregateKind::Count {
        return cells.filter(|c| !c.is_null()).count() as f64;
    }
    let values: Vec<f64> = cells.filter_map(Cell::as_f64).collect();
    let n = values.len();
    match kind {
        AggregateKind::Count => unreachable!(),
        AggregateKind::Sum => values.iter().sum(),
        AggregateKind::Mean => {
            if n == 0 {
                f64::NAN
            } else {
                values.iter().sum::<f64>() / n as f64
            }
        }
        AggregateKind::Min => values.iter().copied().reduce(f64::min).unwrap_or(f64::NAN),
        AggregateKind::Max => values.iter().copied().reduce(f64::max).unwrap_or(f64::NAN),
        AggregateKind::Variance => sample_variance(&values),
        AggregateKind::StdDev => sample_variance(&values).sqrt(),
        AggregateKind::Quantile(q) => quantile(values, q),
    }
}

/// Unbiased two-pass variance; NaN below two observations.
pub(crate) fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
}

fn quantile(mut values: Vec<f64>, q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (pos - lo as f64) * (values[hi] - values[lo])
}
