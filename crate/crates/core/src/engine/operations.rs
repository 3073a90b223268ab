use std::collections::{HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::aggregate::sample_variance;
use super::{EvalContext, Warning};
use crate::error::{Error, Result};
use crate::frame::ResultFrame;
use crate::metric::{Metric, Operation};
use crate::table::{Cell, SliceKey, Table};

pub(super) fn eval_operation(
    ctx: &EvalContext,
    op: &Operation,
    child: &Metric,
    t: &Table,
    split_by: &[String],
) -> Result<ResultFrame> {
    match op {
        Operation::Distribution { over } => distribution(ctx, child, over, t, split_by),
        Operation::AbsoluteChange { condition, baseline } => {
            change(ctx, child, condition, baseline, t, split_by, |v, b| v - b)
        }
        Operation::PercentChange { condition, baseline } => {
            change(ctx, child, condition, baseline, t, split_by, |v, b| (v / b - 1.0) * 100.0)
        }
        Operation::Bootstrap { n_rep, seed } => bootstrap(ctx, child, *n_rep, *seed, t, split_by),
        Operation::Jackknife { unit } => jackknife(ctx, child, unit, t, split_by),
    }
}

fn with_dim(split_by: &[String], dim: &str) -> Vec<String> {
    let mut dims = split_by.to_vec();
    dims.push(dim.to_string());
    dims
}

fn without(key: &SliceKey, pos: usize) -> SliceKey {
    SliceKey(
        key.0
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != pos)
            .map(|(_, c)| c.clone())
            .collect(),
    )
}

/// Child computed per value of `over`, divided by its total over the other keys.
fn distribution(ctx: &EvalContext, child: &Metric, over: &str, t: &Table, split_by: &[String]) -> Result<ResultFrame> {
    let res = ctx.eval(child, t, &with_dim(split_by, over))?;
    let pos = split_by.len();
    let mut totals: HashMap<SliceKey, Vec<f64>> = HashMap::new();
    for (key, values) in res.rows() {
        let total = totals.entry(without(key, pos)).or_insert_with(|| vec![0.0; values.len()]);
        for (acc, v) in total.iter_mut().zip(values) {
            if !v.is_nan() {
                *acc += v;
            }
        }
    }
    let rows = res
        .rows()
        .iter()
        .map(|(key, values)| {
            let total = &totals[&without(key, pos)];
            (key.clone(), values.iter().zip(total).map(|(v, s)| v / s).collect())
        })
        .collect();
    ResultFrame::new(res.key_columns().to_vec(), res.value_columns().to_vec(), rows)
}

/// Child computed per condition value and compared with the baseline row of
/// the same slice. Baseline rows become exactly zero; slices without a
/// baseline row become NaN and raise a warning.
fn change(
    ctx: &EvalContext,
    child: &Metric,
    condition: &str,
    baseline: &Cell,
    t: &Table,
    split_by: &[String],
    f: impl Fn(f64, f64) -> f64,
) -> Result<ResultFrame> {
    let res = ctx.eval(child, t, &with_dim(split_by, condition))?;
    let pos = split_by.len();
    let base: HashMap<SliceKey, &[f64]> = res
        .rows()
        .iter()
        .filter(|(key, _)| &key.0[pos] == baseline)
        .map(|(key, values)| (without(key, pos), values.as_slice()))
        .collect();
    let mut warned: HashSet<SliceKey> = HashSet::new();
    let rows = res
        .rows()
        .iter()
        .map(|(key, values)| {
            let slice = without(key, pos);
            let out = match base.get(&slice) {
                Some(b) if &key.0[pos] == baseline => {
                    b.iter().map(|&x| if x.is_finite() { 0.0 } else { f64::NAN }).collect()
                }
                Some(b) => values.iter().zip(b.iter()).map(|(&v, &x)| f(v, x)).collect(),
                None => {
                    if warned.insert(slice.clone()) {
                        ctx.warn(Warning::MissingBaseline {
                            condition: condition.to_string(),
                            baseline: baseline.clone(),
                            slice,
                        });
                    }
                    vec![f64::NAN; values.len()]
                }
            };
            (key.clone(), out)
        })
        .collect();
    ResultFrame::new(res.key_columns().to_vec(), res.value_columns().to_vec(), rows)
}

/// Per-key sample standard deviation across replicate results.
fn bootstrap(
    ctx: &EvalContext,
    child: &Metric,
    n_rep: usize,
    seed: u64,
    t: &Table,
    split_by: &[String],
) -> Result<ResultFrame> {
    if t.row_count() == 0 {
        return Err(Error::EmptyInput("bootstrap needs at least one row".into()));
    }
    let replicates: Vec<ResultFrame> = (0..n_rep as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i);
            let sample = t.resample_with_replacement(&mut rng)?;
            ctx.scratch().eval(child, &sample, split_by)
        })
        .collect::<Result<_>>()?;
    combine_replicates(&replicates, |values| sample_variance(values).sqrt())
}

/// Delete-one-unit jackknife: sqrt((k - 1) / k * sum((theta_i - mean)^2)).
fn jackknife(ctx: &EvalContext, child: &Metric, unit: &str, t: &Table, split_by: &[String]) -> Result<ResultFrame> {
    let units = t.distinct(unit)?;
    if units.is_empty() {
        return Err(Error::EmptyInput("jackknife needs at least one unit".into()));
    }
    let replicates: Vec<ResultFrame> = units
        .par_iter()
        .map(|u| {
            let rest = t.without_value(unit, u)?;
            ctx.scratch().eval(child, &rest, split_by)
        })
        .collect::<Result<_>>()?;
    combine_replicates(&replicates, |values| {
        let k = values.len();
        if k < 2 {
            return f64::NAN;
        }
        let mean = values.iter().sum::<f64>() / k as f64;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        ((k - 1) as f64 / k as f64 * ss).sqrt()
    })
}

/// Gather each key's non-NaN values across replicates and reduce them.
/// Keys are ordered by first appearance across replicates.
fn combine_replicates(replicates: &[ResultFrame], reduce: impl Fn(&[f64]) -> f64) -> Result<ResultFrame> {
    let first = replicates
        .first()
        .ok_or_else(|| Error::Internal("no replicates to combine".into()))?;
    let arity = first.arity();
    let mut slot: HashMap<SliceKey, usize> = HashMap::new();
    let mut keys: Vec<SliceKey> = Vec::new();
    let mut samples: Vec<Vec<Vec<f64>>> = Vec::new();
    for rep in replicates {
        for (key, values) in rep.rows() {
            let i = *slot.entry(key.clone()).or_insert_with(|| {
                keys.push(key.clone());
                samples.push(vec![Vec::new(); arity]);
                keys.len() - 1
            });
            for (acc, &v) in samples[i].iter_mut().zip(values) {
                if !v.is_nan() {
                    acc.push(v);
                }
            }
        }
    }
    let rows = keys
        .into_iter()
        .zip(samples)
        .map(|(key, cols)| (key, cols.iter().map(|vals| reduce(vals)).collect()))
        .collect();
    ResultFrame::new(first.key_columns().to_vec(), first.value_columns().to_vec(), rows)
}
