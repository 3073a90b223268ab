//! Metrics over dimensions: build metric trees, evaluate them on in-memory
//! tables, or compile them to SQL.
//!
//! ```
//! use tally_core::{compute_on, EvalContext, Metric, Operation, Table};
//!
//! let csv = "region,experiment,lost\nUS,control,1\nUS,treatment,0\nEU,control,1\nEU,treatment,1\n";
//! let table = Table::read_csv(csv.as_bytes(), Default::default()).unwrap();
//! let churn = (Metric::sum("lost") / Metric::count("lost")).set_names(["churn"]).unwrap();
//! let change = churn | Operation::percent_change("experiment", "control");
//! let out = compute_on(&change, &table, &["region"], &EvalContext::new()).unwrap();
//! assert_eq!(out.key_columns(), ["region", "experiment"]);
//! ```

mod error;

pub mod dsl;
pub mod engine;
pub mod frame;
pub mod metric;
pub mod sql;
pub mod table;

pub use dsl::{parse, parse_metric, to_dsl, DslError, DslProgram};
pub use engine::{compute_many, compute_on, eval_composite, eval_leaf, EvalContext, Operand, Warning};
pub use error::{Error, Result};
pub use frame::ResultFrame;
pub use metric::{sanitize_name, Aggregate, AggregateKind, ArithOp, Metric, MetricKind, Operation};
pub use sql::{resample_n_times_sql, sql_aggregate, sql_expr, to_sql, Dialect, ResampleSql, SqlQuery};
pub use table::{Cell, Column, ColumnKind, CsvOptions, Fingerprint, SliceKey, Table};
