//! In-memory evaluation of metrics.
//!
//! Leaves and composites are evaluated by split-apply-combine: the table is
//! split into slices by the `split_by` dimensions, the aggregate is applied
//! to each slice and the results are combined into a [`ResultFrame`].
//! Operations follow a three-step protocol: preprocess the data, compute the
//! child on the preprocessed data (usually at a finer granularity), then
//! post-process the child's results.
//!
//! Every node goes through [`EvalContext`], which memoizes results keyed by
//! the node's structure, the table's content hash and the dimensions, so
//! subtrees shared between metrics are computed once.

mod aggregate;
mod composite;
mod operations;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

pub use aggregate::eval_leaf;
pub use composite::{eval_composite, Operand};

use crate::error::Result;
use crate::frame::ResultFrame;
use crate::metric::{Metric, MetricKind};
use crate::table::{Cell, Fingerprint, SliceKey, Table};

/// Diagnostics that do not abort evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// A slice had no row at the baseline condition; its rows are NaN.
    MissingBaseline {
        condition: String,
        baseline: Cell,
        slice: SliceKey,
    },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::MissingBaseline {
                condition,
                baseline,
                slice,
            } => {
                let cells: Vec<String> = slice.cells().iter().map(|c| c.to_string()).collect();
                write!(
                    f,
                    "baseline {condition}={baseline} missing in slice ({}); values set to NaN",
                    cells.join(", ")
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    metric: String,
    table: Fingerprint,
    split_by: Vec<String>,
}

/// Evaluation state shared across metrics: the result cache, counters and
/// collected warnings. Safe to share between threads.
#[derive(Debug)]
pub struct EvalContext {
    cache: Option<RwLock<HashMap<CacheKey, Arc<ResultFrame>>>>,
    cache_hits: AtomicU64,
    evaluations: AtomicU64,
    warnings: Mutex<Vec<Warning>>,
}

impl Default for EvalContext {
    fn default() -> Self {
        EvalContext::new()
    }
}

impl EvalContext {
    pub fn new() -> Self {
        EvalContext {
            cache: Some(RwLock::new(HashMap::new())),
            cache_hits: AtomicU64::new(0),
            evaluations: AtomicU64::new(0),
            warnings: Mutex::new(Vec::new()),
        }
    }

    pub fn without_cache() -> Self {
        EvalContext {
            cache: None,
            ..EvalContext::new()
        }
    }

    pub fn cache_enabled(&self) -> bool {
        self.cache.is_some()
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::Relaxed)
    }

    /// Number of nodes actually computed (cache misses).
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn cached_entries(&self) -> usize {
        self.cache.as_ref().map_or(0, |c| c.read().len())
    }

    pub fn warnings(&self) -> Vec<Warning> {
        self.warnings.lock().clone()
    }

    pub(crate) fn warn(&self, w: Warning) {
        self.warnings.lock().push(w);
    }

    /// A fresh context with the same cache policy, for scratch evaluation
    /// on resampled tables.
    pub(crate) fn scratch(&self) -> EvalContext {
        if self.cache_enabled() {
            EvalContext::new()
        } else {
            EvalContext::without_cache()
        }
    }

    pub(crate) fn eval(&self, m: &Metric, t: &Table, split_by: &[String]) -> Result<ResultFrame> {
        let Some(cache) = &self.cache else {
            return self.eval_node(m, t, split_by);
        };
        let key = CacheKey {
            metric: m.structural_key(),
            table: t.fingerprint(),
            split_by: split_by.to_vec(),
        };
        let hit = cache.read().get(&key).cloned();
        if let Some(frame) = hit {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            return (*frame).clone().with_value_names(m.names());
        }
        let frame = self.eval_node(m, t, split_by)?;
        cache.write().entry(key).or_insert_with(|| Arc::new(frame.clone()));
        Ok(frame)
    }

    fn eval_node(&self, m: &Metric, t: &Table, split_by: &[String]) -> Result<ResultFrame> {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let frame = match m.kind() {
            MetricKind::Aggregate(agg) => {
                let column = t.column(&agg.column)?;
                aggregate::check_type(agg, column)?;
                let rows = t
                    .group_indices(split_by)?
                    .into_iter()
                    .map(|(key, idx)| {
                        let v = aggregate::aggregate_cells(agg.kind, idx.iter().map(|&r| &column.values()[r]));
                        (key, vec![v])
                    })
                    .collect();
                ResultFrame::new(split_by.to_vec(), m.names(), rows)?
            }
            MetricKind::Scalar(v) => {
                let rows = t
                    .group_indices(split_by)?
                    .into_iter()
                    .map(|(key, _)| (key, vec![*v]))
                    .collect();
                ResultFrame::new(split_by.to_vec(), m.names(), rows)?
            }
            MetricKind::Composite { op, left, right } => {
                let l = left.scalar_value();
                let r = right.scalar_value();
                let frame = match (l, r) {
                    (Some(_), Some(_)) => {
                        let v = eval_composite(*op, Operand::Scalar(l.unwrap()), Operand::Scalar(r.unwrap()))?
                            .scalar()
                            .unwrap_or(f64::NAN);
                        return self.eval_node(&Metric::scalar(v).set_names(m.names())?, t, split_by);
                    }
                    (Some(s), None) => {
                        let rf = self.eval(right, t, split_by)?;
                        eval_composite(*op, Operand::Scalar(s), Operand::Frame(&rf))?
                    }
                    (None, Some(s)) => {
                        let lf = self.eval(left, t, split_by)?;
                        eval_composite(*op, Operand::Frame(&lf), Operand::Scalar(s))?
                    }
                    (None, None) => {
                        let lf = self.eval(left, t, split_by)?;
                        let rf = self.eval(right, t, split_by)?;
                        eval_composite(*op, Operand::Frame(&lf), Operand::Frame(&rf))?
                    }
                };
                frame.with_value_names(m.names())?
            }
            MetricKind::Operation { op, child } => {
                operations::eval_operation(self, op, child, t, split_by)?.with_value_names(m.names())?
            }
        };
        Ok(frame)
    }
}

/// Evaluate `m` on `t` for every slice of the `split_by` dimensions.
///
/// Key columns of the result are `split_by` followed by the dimensions the
/// metric's operations add, outermost operation first. Value columns are
/// named `m.names()`.
pub fn compute_on<S: AsRef<str>>(m: &Metric, t: &Table, split_by: &[S], ctx: &EvalContext) -> Result<ResultFrame> {
    let split_by: Vec<String> = split_by.iter().map(|s| s.as_ref().to_string()).collect();
    for dim in &split_by {
        t.column(dim)?;
    }
    ctx.eval(m, t, &split_by)
}

/// Evaluate several metrics against the same data, sharing one cache.
pub fn compute_many<S: AsRef<str>>(
    metrics: &[Metric],
    t: &Table,
    split_by: &[S],
    ctx: &EvalContext,
) -> Result<Vec<ResultFrame>> {
    metrics.iter().map(|m| compute_on(m, t, split_by, ctx)).collect()
}
