//! The metric expression tree.
//!
//! A [`Metric`] is an immutable tree whose nodes are leaf aggregates
//! (`Sum("x")`), arithmetic composites (`Sum("x") / Count("x")`), scalar
//! literals, and operations that modify a child metric
//! (`churn | PercentChange("experiment", "control")`). Building a tree never
//! touches data; evaluation lives in [`crate::engine`] and SQL generation in
//! [`crate::sql`].

use std::fmt;
use std::ops::{Add, BitOr, Div, Mul, Sub};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::table::Cell;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AggregateKind {
    Sum,
    Count,
    Mean,
    Min,
    Max,
    /// Unbiased (n - 1) sample variance.
    Variance,
    /// Square root of [`AggregateKind::Variance`].
    StdDev,
    /// Linear interpolation between order statistics; `q` in `[0, 1]`.
    Quantile(f64),
}

impl AggregateKind {
    pub fn label(&self) -> &'static str {
        match self {
            AggregateKind::Sum => "sum",
            AggregateKind::Count => "count",
            AggregateKind::Mean => "mean",
            AggregateKind::Min => "min",
            AggregateKind::Max => "max",
            AggregateKind::Variance => "variance",
            AggregateKind::StdDev => "sd",
            AggregateKind::Quantile(_) => "quantile",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub kind: AggregateKind,
    pub column: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl ArithOp {
    pub fn label(&self) -> &'static str {
        match self {
            ArithOp::Add => "add",
            ArithOp::Sub => "sub",
            ArithOp::Mul => "mul",
            ArithOp::Div => "div",
            ArithOp::Pow => "pow",
        }
    }

    pub fn symbol(&self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
            ArithOp::Pow => "**",
        }
    }

    pub fn apply(&self, a: f64, b: f64) -> f64 {
        match self {
            ArithOp::Add => a + b,
            ArithOp::Sub => a - b,
            ArithOp::Mul => a * b,
            ArithOp::Div => a / b,
            ArithOp::Pow => a.powf(b),
        }
    }

    /// Binding strength, higher binds tighter.
    pub fn precedence(&self) -> u8 {
        match self {
            ArithOp::Add | ArithOp::Sub => 1,
            ArithOp::Mul | ArithOp::Div => 2,
            ArithOp::Pow => 3,
        }
    }
}

/// A metric transformer. Applied to a child with [`Metric::pipe`] or `|`.
#[derive(Debug, Clone, PartialEq)]
pub enum Operation {
    /// Computes the child per value of `over` and normalizes to sum to one.
    Distribution { over: String },
    /// Child value minus the value at the baseline condition.
    AbsoluteChange { condition: String, baseline: Cell },
    /// Percent change of the child relative to the baseline condition.
    PercentChange { condition: String, baseline: Cell },
    /// Standard deviation of the child over `n_rep` resamples of the rows.
    Bootstrap { n_rep: usize, seed: u64 },
    /// Delete-one-unit jackknife standard error.
    Jackknife { unit: String },
}

impl Operation {
    pub fn distribution(over: impl Into<String>) -> Self {
        Operation::Distribution { over: over.into() }
    }

    pub fn absolute_change(condition: impl Into<String>, baseline: impl Into<Cell>) -> Self {
        Operation::AbsoluteChange {
            condition: condition.into(),
            baseline: baseline.into(),
        }
    }

    pub fn percent_change(condition: impl Into<String>, baseline: impl Into<Cell>) -> Self {
        Operation::PercentChange {
            condition: condition.into(),
            baseline: baseline.into(),
        }
    }

    pub fn bootstrap(n_rep: usize, seed: u64) -> Result<Self> {
        if n_rep == 0 {
            return Err(Error::InvalidArgument("bootstrap needs at least one replicate".into()));
        }
        Ok(Operation::Bootstrap { n_rep, seed })
    }

    pub fn jackknife(unit: impl Into<String>) -> Self {
        Operation::Jackknife { unit: unit.into() }
    }

    pub fn name_prefix(&self) -> &'static str {
        match self {
            Operation::Distribution { .. } => "distribution_of_",
            Operation::AbsoluteChange { .. } => "abs_change_of_",
            Operation::PercentChange { .. } => "pct_change_of_",
            Operation::Bootstrap { .. } | Operation::Jackknife { .. } => "se_",
        }
    }

    /// The dimension this operation adds to the output keys, if any.
    pub fn added_dim(&self) -> Option<&str> {
        match self {
            Operation::Distribution { over } => Some(over),
            Operation::AbsoluteChange { condition, .. } | Operation::PercentChange { condition, .. } => {
                Some(condition)
            }
            Operation::Bootstrap { .. } | Operation::Jackknife { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricKind {
    Aggregate(Aggregate),
    Composite { op: ArithOp, left: Metric, right: Metric },
    Operation { op: Operation, child: Metric },
    /// A constant that broadcasts against any arity.
    Scalar(f64),
}

#[derive(Debug, PartialEq)]
struct Node {
    kind: MetricKind,
    names: Option<Vec<String>>,
}

/// An immutable, cheaply clonable metric expression tree.
#[derive(Clone, PartialEq)]
pub struct Metric(Arc<Node>);

impl Metric {
    fn from_kind(kind: MetricKind) -> Self {
        Metric(Arc::new(Node { kind, names: None }))
    }

    pub fn aggregate(kind: AggregateKind, column: impl Into<String>) -> Self {
        Metric::from_kind(MetricKind::Aggregate(Aggregate {
            kind,
            column: column.into(),
        }))
    }

    pub fn sum(column: impl Into<String>) -> Self {
        Metric::aggregate(AggregateKind::Sum, column)
    }

    pub fn count(column: impl Into<String>) -> Self {
        Metric::aggregate(AggregateKind::Count, column)
    }

    pub fn mean(column: impl Into<String>) -> Self {
        Metric::aggregate(AggregateKind::Mean, column)
    }

    pub fn min(column: impl Into<String>) -> Self {
        Metric::aggregate(AggregateKind::Min, column)
    }

    pub fn max(column: impl Into<String>) -> Self {
        Metric::aggregate(AggregateKind::Max, column)
    }

    pub fn variance(column: impl Into<String>) -> Self {
        Metric::aggregate(AggregateKind::Variance, column)
    }

    pub fn sd(column: impl Into<String>) -> Self {
        Metric::aggregate(AggregateKind::StdDev, column)
    }

    pub fn quantile(column: impl Into<String>, q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidArgument(format!("quantile {q} is outside [0, 1]")));
        }
        Ok(Metric::aggregate(AggregateKind::Quantile(q), column))
    }

    pub fn scalar(value: f64) -> Self {
        Metric::from_kind(MetricKind::Scalar(value))
    }

    /// Pointwise arithmetic on two metrics. Shapes are reconciled at
    /// evaluation time; incompatible shapes evaluate to NaN.
    pub fn combine(op: ArithOp, left: impl Into<Metric>, right: impl Into<Metric>) -> Self {
        Metric::from_kind(MetricKind::Composite {
            op,
            left: left.into(),
            right: right.into(),
        })
    }

    pub fn pow(&self, exponent: f64) -> Self {
        Metric::combine(ArithOp::Pow, self.clone(), Metric::scalar(exponent))
    }

    /// Modify this metric by an operation. The result is itself a metric.
    pub fn pipe(&self, op: Operation) -> Self {
        Metric::from_kind(MetricKind::Operation {
            op,
            child: self.clone(),
        })
    }

    pub fn kind(&self) -> &MetricKind {
        &self.0.kind
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self.0.kind, MetricKind::Scalar(_))
    }

    pub fn scalar_value(&self) -> Option<f64> {
        match self.0.kind {
            MetricKind::Scalar(v) => Some(v),
            _ => None,
        }
    }

    /// Names explicitly set with [`Metric::set_names`], if any.
    pub fn names_override(&self) -> Option<&[String]> {
        self.0.names.as_deref()
    }

    /// Number of value columns, or `None` for a scalar, which adapts to
    /// whatever it is combined with.
    pub fn arity(&self) -> Option<usize> {
        match &self.0.kind {
            MetricKind::Aggregate(_) => Some(1),
            MetricKind::Scalar(_) => None,
            MetricKind::Operation { child, .. } => child.arity(),
            MetricKind::Composite { left, right, .. } => match (left.arity(), right.arity()) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            },
        }
    }

    /// Number of value columns produced when evaluated on its own.
    pub fn value_arity(&self) -> usize {
        self.arity().unwrap_or(1)
    }

    pub fn names(&self) -> Vec<String> {
        match &self.0.names {
            Some(names) => names.clone(),
            None => self.default_names(),
        }
    }

    pub fn default_names(&self) -> Vec<String> {
        match &self.0.kind {
            MetricKind::Aggregate(agg) => {
                let name = match agg.kind {
                    AggregateKind::Quantile(q) => format!("quantile_{}_{}", agg.column, q),
                    k => format!("{}_{}", k.label(), agg.column),
                };
                vec![sanitize_name(&name)]
            }
            MetricKind::Scalar(v) => vec![sanitize_name(&format!("{v}"))],
            MetricKind::Operation { op, child } => child
                .names()
                .iter()
                .map(|n| sanitize_name(&format!("{}{n}", op.name_prefix())))
                .collect(),
            MetricKind::Composite { op, left, right } => {
                let (l, r) = (left.names(), right.names());
                let n = self.value_arity();
                (0..n)
                    .map(|i| {
                        let pick = |names: &[String]| {
                            if names.len() == 1 {
                                names[0].clone()
                            } else {
                                names.get(i).cloned().unwrap_or_else(|| "nan".to_string())
                            }
                        };
                        sanitize_name(&format!("{}_{}_{}", pick(&l), op.label(), pick(&r)))
                    })
                    .collect()
            }
        }
    }

    /// Rename the value columns. Only output names change; values do not.
    pub fn set_names<S: Into<String>>(&self, names: impl IntoIterator<Item = S>) -> Result<Metric> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let expected = self.value_arity();
        if names.len() != expected {
            return Err(Error::NameArity {
                expected,
                got: names.len(),
            });
        }
        Ok(Metric(Arc::new(Node {
            kind: self.0.kind.clone(),
            names: Some(names),
        })))
    }

    /// Key columns that operations in this tree add beyond `split_by`,
    /// outermost operation first.
    pub fn extra_dims(&self) -> Vec<String> {
        match &self.0.kind {
            MetricKind::Aggregate(_) | MetricKind::Scalar(_) => Vec::new(),
            MetricKind::Operation { op, child } => {
                let mut dims: Vec<String> = op.added_dim().map(str::to_string).into_iter().collect();
                for d in child.extra_dims() {
                    if !dims.contains(&d) {
                        dims.push(d);
                    }
                }
                dims
            }
            MetricKind::Composite { left, right, .. } => {
                let mut dims = left.extra_dims();
                for d in right.extra_dims() {
                    if !dims.contains(&d) {
                        dims.push(d);
                    }
                }
                dims
            }
        }
    }

    pub fn children(&self) -> Vec<&Metric> {
        match &self.0.kind {
            MetricKind::Aggregate(_) | MetricKind::Scalar(_) => Vec::new(),
            MetricKind::Operation { child, .. } => vec![child],
            MetricKind::Composite { left, right, .. } => vec![left, right],
        }
    }

    pub fn contains_operation(&self) -> bool {
        matches!(self.0.kind, MetricKind::Operation { .. }) || self.children().iter().any(|c| c.contains_operation())
    }

    /// Tree depth; a leaf has depth 1.
    pub fn depth(&self) -> usize {
        1 + self.children().iter().map(|c| c.depth()).max().unwrap_or(0)
    }

    /// Every data column the tree reads, including operation dimensions, in
    /// first-use order.
    pub fn referenced_columns(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_columns(&mut out);
        out
    }

    fn collect_columns(&self, out: &mut Vec<String>) {
        let mut push = |c: &str| {
            if !out.iter().any(|o| o == c) {
                out.push(c.to_string());
            }
        };
        match &self.0.kind {
            MetricKind::Aggregate(agg) => push(&agg.column),
            MetricKind::Scalar(_) => {}
            MetricKind::Operation { op, child } => {
                match op {
                    Operation::Jackknife { unit } => push(unit),
                    op => {
                        if let Some(d) = op.added_dim() {
                            push(d)
                        }
                    }
                }
                child.collect_columns(out);
            }
            MetricKind::Composite { left, right, .. } => {
                left.collect_columns(out);
                right.collect_columns(out);
            }
        }
    }

    /// Rebuild the tree with every operation passed through `f`, keeping names.
    pub fn map_operations(&self, f: &impl Fn(&Operation) -> Operation) -> Metric {
        let kind = match &self.0.kind {
            MetricKind::Aggregate(_) | MetricKind::Scalar(_) => return self.clone(),
            MetricKind::Operation { op, child } => MetricKind::Operation {
                op: f(op),
                child: child.map_operations(f),
            },
            MetricKind::Composite { op, left, right } => MetricKind::Composite {
                op: *op,
                left: left.map_operations(f),
                right: right.map_operations(f),
            },
        };
        Metric(Arc::new(Node {
            kind,
            names: self.0.names.clone(),
        }))
    }

    /// Deterministic prefix serialization with named arguments, including
    /// renames. Two metrics with equal serializations are equal trees.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        self.write_canonical(&mut out, true);
        out
    }

    /// Like [`Metric::canonical`] but ignoring renames anywhere in the tree.
    /// Two metrics with equal structural keys produce identical values.
    pub fn structural_key(&self) -> String {
        let mut out = String::new();
        self.write_canonical(&mut out, false);
        out
    }

    fn write_canonical(&self, out: &mut String, with_names: bool) {
        use std::fmt::Write;
        let renamed = with_names && self.0.names.is_some();
        if renamed {
            let names: Vec<String> = self.0.names.as_ref().unwrap().iter().map(|n| format!("{n:?}")).collect();
            let _ = write!(out, "set_names(names=[{}], metric=", names.join(", "));
        }
        match &self.0.kind {
            MetricKind::Aggregate(agg) => {
                let _ = write!(out, "{}(var={:?}", agg.kind.label(), agg.column);
                if let AggregateKind::Quantile(q) = agg.kind {
                    let _ = write!(out, ", q={q:?}");
                }
                out.push(')');
            }
            MetricKind::Scalar(v) => {
                let _ = write!(out, "scalar(value={v:?})");
            }
            MetricKind::Composite { op, left, right } => {
                let _ = write!(out, "{}(left=", op.label());
                left.write_canonical(out, with_names);
                out.push_str(", right=");
                right.write_canonical(out, with_names);
                out.push(')');
            }
            MetricKind::Operation { op, child } => {
                match op {
                    Operation::Distribution { over } => {
                        let _ = write!(out, "distribution(over={over:?}, ");
                    }
                    Operation::AbsoluteChange { condition, baseline } => {
                        let _ = write!(
                            out,
                            "absolute_change(condition={condition:?}, baseline={}, ",
                            canonical_cell(baseline)
                        );
                    }
                    Operation::PercentChange { condition, baseline } => {
                        let _ = write!(
                            out,
                            "percent_change(condition={condition:?}, baseline={}, ",
                            canonical_cell(baseline)
                        );
                    }
                    Operation::Bootstrap { n_rep, seed } => {
                        let _ = write!(out, "bootstrap(n_rep={n_rep}, seed={seed}, ");
                    }
                    Operation::Jackknife { unit } => {
                        let _ = write!(out, "jackknife(unit={unit:?}, ");
                    }
                }
                out.push_str("child=");
                child.write_canonical(out, with_names);
                out.push(')');
            }
        }
        if renamed {
            out.push(')');
        }
    }
}

fn canonical_cell(cell: &Cell) -> String {
    match cell {
        Cell::Text(s) => format!("{s:?}"),
        Cell::Int(v) => v.to_string(),
        Cell::Float(v) => format!("{v:?}"),
        Cell::Null => "null".to_string(),
    }
}

/// Lower-case and replace anything outside `[a-z0-9_]` with `_`.
pub fn sanitize_name(name: &str) -> String {
    name.chars()
        .map(|c| {
            let c = c.to_ascii_lowercase();
            if c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl fmt::Debug for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

impl From<f64> for Metric {
    fn from(v: f64) -> Self {
        Metric::scalar(v)
    }
}

impl From<&Metric> for Metric {
    fn from(m: &Metric) -> Self {
        m.clone()
    }
}

macro_rules! arith_impl {
    ($trait:ident, $method:ident, $op:expr) => {
        impl<R: Into<Metric>> $trait<R> for Metric {
            type Output = Metric;
            fn $method(self, rhs: R) -> Metric {
                Metric::combine($op, self, rhs)
            }
        }

        impl<R: Into<Metric>> $trait<R> for &Metric {
            type Output = Metric;
            fn $method(self, rhs: R) -> Metric {
                Metric::combine($op, self.clone(), rhs)
            }
        }

        impl $trait<Metric> for f64 {
            type Output = Metric;
            fn $method(self, rhs: Metric) -> Metric {
                Metric::combine($op, self, rhs)
            }
        }

        impl $trait<&Metric> for f64 {
            type Output = Metric;
            fn $method(self, rhs: &Metric) -> Metric {
                Metric::combine($op, self, rhs)
            }
        }
    };
}

arith_impl!(Add, add, ArithOp::Add);
arith_impl!(Sub, sub, ArithOp::Sub);
arith_impl!(Mul, mul, ArithOp::Mul);
arith_impl!(Div, div, ArithOp::Div);

impl BitOr<Operation> for Metric {
    type Output = Metric;
    fn bitor(self, op: Operation) -> Metric {
        self.pipe(op)
    }
}

impl BitOr<Operation> for &Metric {
    type Output = Metric;
    fn bitor(self, op: Operation) -> Metric {
        self.pipe(op)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn churn() -> Metric {
        (Metric::sum("lost") / Metric::count("lost")).set_names(["churn"]).unwrap()
    }

    #[test]
    fn leaf_names() {
        assert_eq!(Metric::sum("x").names(), ["sum_x"]);
        assert_eq!(Metric::count("x").names(), ["count_x"]);
        assert_eq!(Metric::mean("x").names(), ["mean_x"]);
    }

    #[test]
    fn ratio_name() {
        let m = Metric::sum("lost") / Metric::count("lost");
        assert_eq!(m.names(), ["sum_lost_div_count_lost"]);
    }

    #[test]
    fn operation_names() {
        let pct = churn() | Operation::percent_change("experiment", "control");
        assert_eq!(pct.names(), ["pct_change_of_churn"]);
        let se = pct | Operation::bootstrap(10, 0).unwrap();
        assert_eq!(se.names(), ["se_pct_change_of_churn"]);
        let abs = Metric::mean("x") | Operation::absolute_change("g", "a");
        assert_eq!(abs.names(), ["abs_change_of_mean_x"]);
        let dist = Metric::count("p") | Operation::distribution("p");
        assert_eq!(dist.names(), ["distribution_of_count_p"]);
    }

    #[test]
    fn default_names_are_sanitized() {
        assert_eq!(Metric::mean("EMP").names(), ["mean_emp"]);
        assert_eq!((Metric::sum("x") + 2.0).names(), ["sum_x_add_2"]);
        assert_eq!(Metric::count("x").pow(0.5).names(), ["count_x_pow_0_5"]);
    }

    #[test]
    fn set_names_checks_arity() {
        let err = Metric::sum("x").set_names(["a", "b"]).unwrap_err();
        assert!(matches!(err, Error::NameArity { expected: 1, got: 2 }));
    }

    #[test]
    fn set_names_leaves_original() {
        let m = Metric::sum("x");
        let renamed = m.set_names(["total"]).unwrap();
        assert_eq!(m.names(), ["sum_x"]);
        assert_eq!(renamed.names(), ["total"]);
        assert_eq!(m.set_names(m.names()).unwrap().names(), m.names());
    }

    #[test]
    fn pipe_depth_and_arity() {
        let m = Metric::count("pitchtype") | Operation::distribution("pitchtype");
        assert_eq!(m.depth(), 2);
        assert_eq!(m.arity(), Some(1));
    }

    #[test]
    fn chained_changes_track_both_dims() {
        let did = Metric::mean("EMP")
            | Operation::absolute_change("STATE_NAME", "PA")
            | Operation::absolute_change("PERIOD", "Before");
        assert_eq!(did.extra_dims(), ["PERIOD", "STATE_NAME"]);
        let se = did | Operation::bootstrap(5, 1).unwrap();
        assert_eq!(se.extra_dims(), ["PERIOD", "STATE_NAME"]);
    }

    #[test]
    fn bootstrap_requires_replicates() {
        assert!(Operation::bootstrap(0, 0).is_err());
    }

    #[test]
    fn quantile_range() {
        assert!(Metric::quantile("x", 1.5).is_err());
        assert!(Metric::quantile("x", 0.0).is_ok());
    }

    #[test]
    fn confidence_bound_builds() {
        let x = "x";
        let upper = Metric::mean(x) + 1.96 / Metric::count(x).pow(0.5) * Metric::sd(x);
        assert_eq!(upper.arity(), Some(1));
        assert_eq!(upper.depth(), 5);
    }

    #[test]
    fn scalar_is_polymorphic() {
        assert_eq!(Metric::scalar(1.0).arity(), None);
        assert_eq!((Metric::scalar(1.0) + 2.0).arity(), None);
        assert_eq!((Metric::scalar(1.0) + Metric::sum("x")).arity(), Some(1));
    }

    #[test]
    fn canonical_form() {
        let m = churn() | Operation::percent_change("experiment", "control");
        assert_eq!(
            m.canonical(),
            "percent_change(condition=\"experiment\", baseline=\"control\", child=\
             set_names(names=[\"churn\"], metric=div(left=sum(var=\"lost\"), right=count(var=\"lost\"))))"
        );
        assert_eq!(
            m.structural_key(),
            "percent_change(condition=\"experiment\", baseline=\"control\", child=\
             div(left=sum(var=\"lost\"), right=count(var=\"lost\")))"
        );
    }

    #[test]
    fn map_operations_rewrites_bootstrap() {
        let m = Metric::sum("x") | Operation::bootstrap(10, 0).unwrap();
        let m = m.map_operations(&|op| match op {
            Operation::Bootstrap { .. } => Operation::Bootstrap { n_rep: 3, seed: 9 },
            o => o.clone(),
        });
        assert!(m.canonical().starts_with("bootstrap(n_rep=3, seed=9"));
    }
}
