//! Compile metric trees to SQL.
//!
//! Leaves and arithmetic composites become a single aggregation query.
//! Operations wrap their child's query in CTEs, mirroring the three steps of
//! in-memory evaluation: preprocess the data, compile the child at a finer
//! granularity, then assemble the final select over the child's result.
//!
//! Two dialects are emitted. [`Dialect::Portable`] sticks to constructs that
//! common engines share (CTEs, window functions, `JOIN ... USING`, recursive
//! integer series) and draws bootstrap rows from a seeded integer hash, so
//! its output is reproducible. [`Dialect::GoogleSql`] uses GoogleSQL-only
//! constructs such as `SELECT * EXCEPT`, `GENERATE_ARRAY` and `RAND()`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metric::{AggregateKind, ArithOp, Metric, MetricKind, Operation};
use crate::table::Cell;

/// Modulus of the seeded hash used by the portable resampler (2^31 - 1).
const HASH_MODULUS: u64 = 2_147_483_647;
const HASH_MULTIPLIERS: [u64; 3] = [48_271, 69_621, 16_807];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Dialect {
    #[default]
    Portable,
    GoogleSql,
}

impl Dialect {
    pub fn name(&self) -> &'static str {
        match self {
            Dialect::Portable => "portable",
            Dialect::GoogleSql => "googlesql",
        }
    }

    /// Quote an identifier when it is not a plain identifier or collides
    /// with a keyword.
    pub fn quote_ident(&self, ident: &str) -> String {
        if is_plain_ident(ident) && !is_keyword(ident) {
            return ident.to_string();
        }
        match self {
            Dialect::Portable => format!("\"{}\"", ident.replace('"', "\"\"")),
            Dialect::GoogleSql => format!("`{}`", ident.replace('\\', "\\\\").replace('`', "\\`")),
        }
    }

    fn aggregate_function(&self, kind: AggregateKind) -> Result<&'static str> {
        Ok(match (kind, self) {
            (AggregateKind::Sum, _) => "SUM",
            (AggregateKind::Count, _) => "COUNT",
            (AggregateKind::Mean, _) => "AVG",
            (AggregateKind::Min, _) => "MIN",
            (AggregateKind::Max, _) => "MAX",
            (AggregateKind::Variance, Dialect::Portable) => "VAR_SAMP",
            (AggregateKind::Variance, Dialect::GoogleSql) => "VARIANCE",
            (AggregateKind::StdDev, _) => self.stddev(),
            (AggregateKind::Quantile(_), _) => return Err(self.unsupported("exact quantile aggregation")),
        })
    }

    fn stddev(&self) -> &'static str {
        match self {
            Dialect::Portable => "STDDEV_SAMP",
            Dialect::GoogleSql => "STDDEV",
        }
    }

    /// `numerator / denominator` with floating-point division.
    fn divide(&self, numerator: &str, denominator: &str) -> String {
        match self {
            Dialect::Portable => format!("CAST({numerator} AS DOUBLE PRECISION) / {denominator}"),
            Dialect::GoogleSql => format!("{numerator} / {denominator}"),
        }
    }

    fn literal(&self, cell: &Cell) -> String {
        match cell {
            Cell::Text(s) => format!("'{}'", s.replace('\'', "''")),
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format!("{v:?}"),
            Cell::Null => "NULL".to_string(),
        }
    }

    fn unsupported(&self, feature: &str) -> Error {
        Error::UnsupportedInDialect {
            feature: feature.to_string(),
            dialect: self.name().to_string(),
        }
    }
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dialect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "portable" => Ok(Dialect::Portable),
            "googlesql" => Ok(Dialect::GoogleSql),
            other => Err(Error::InvalidArgument(format!(
                "unknown dialect `{other}` (expected portable or googlesql)"
            ))),
        }
    }
}

fn is_plain_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn is_keyword(s: &str) -> bool {
    const KEYWORDS: &[&str] = &[
        "ALL", "AND", "ANY", "AS", "ASC", "BETWEEN", "BY", "CASE", "CAST", "CHECK", "COLLATE", "CREATE", "CROSS",
        "CURRENT", "DEFAULT", "DELETE", "DESC", "DISTINCT", "DROP", "ELSE", "END", "ESCAPE", "EXCEPT", "EXISTS",
        "FALSE", "FETCH", "FOR", "FROM", "FULL", "GROUP", "GROUPS", "HAVING", "IF", "IN", "INNER", "INSERT",
        "INTERSECT", "INTERVAL", "INTO", "IS", "JOIN", "LATERAL", "LEFT", "LIKE", "LIMIT", "NATURAL", "NOT",
        "NULL", "NULLS", "OF", "OFFSET", "ON", "OR", "ORDER", "OUTER", "OVER", "PARTITION", "PRIMARY", "RANGE",
        "RECURSIVE", "REFERENCES", "RIGHT", "ROWS", "SELECT", "SET", "SOME", "TABLE", "THEN", "TO", "TRUE",
        "UNION", "UNIQUE", "UNNEST", "UPDATE", "USING", "VALUES", "WHEN", "WHERE", "WINDOW", "WITH",
    ];
    KEYWORDS.contains(&s.to_ascii_uppercase().as_str())
}

/// A compiled metric: the main statement, statements that must run first,
/// and the output schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SqlQuery {
    pub text: String,
    pub key_columns: Vec<String>,
    pub value_columns: Vec<String>,
    pub dialect: Dialect,
    pub preamble: Vec<String>,
}

impl SqlQuery {
    /// Preamble statements followed by the main statement, separated by `;\n`.
    pub fn to_script(&self) -> String {
        let mut stmts: Vec<&str> = self.preamble.iter().map(String::as_str).collect();
        stmts.push(&self.text);
        stmts.join(";\n")
    }
}

/// Precedence of an emitted expression; atoms bind tightest.
const ATOM: u8 = 10;

/// SQL expressions computing each value column of a leaf or composite metric.
pub fn sql_expr(m: &Metric, dialect: Dialect) -> Result<Vec<String>> {
    if m.contains_operation() {
        return Err(Error::InvalidArgument(
            "operations have no expression form; compile them with to_sql".into(),
        ));
    }
    let n = m.value_arity();
    Ok(vec![expr(m, dialect)?.0; n])
}

fn expr(m: &Metric, d: Dialect) -> Result<(String, u8)> {
    match m.kind() {
        MetricKind::Aggregate(agg) => {
            let f = d.aggregate_function(agg.kind)?;
            Ok((format!("{f}({})", d.quote_ident(&agg.column)), ATOM))
        }
        MetricKind::Scalar(v) => Ok((scalar_literal(*v, d)?, ATOM)),
        MetricKind::Composite { op, left, right } => {
            let (l, lp) = expr(left, d)?;
            let (r, rp) = expr(right, d)?;
            Ok(binary(*op, (l, lp), (r, rp), d))
        }
        MetricKind::Operation { .. } => Err(Error::Internal("operation in expression position".into())),
    }
}

fn scalar_literal(v: f64, d: Dialect) -> Result<String> {
    if !v.is_finite() {
        return Err(d.unsupported("non-finite literal"));
    }
    let s = format!("{v:?}");
    Ok(if v < 0.0 { format!("({s})") } else { s })
}

fn binary(op: ArithOp, (l, lp): (String, u8), (r, rp): (String, u8), d: Dialect) -> (String, u8) {
    let prec = op.precedence();
    match op {
        ArithOp::Pow => (format!("POWER({l}, {r})"), ATOM),
        ArithOp::Div if d == Dialect::Portable => {
            let r = if rp <= prec { format!("({r})") } else { r };
            (d.divide(&l, &r), prec)
        }
        _ => {
            let l = if lp < prec { format!("({l})") } else { l };
            let r = if rp <= prec { format!("({r})") } else { r };
            (format!("{l} {} {r}", op.symbol()), prec)
        }
    }
}

/// `SELECT {dims,} expr AS name, ... FROM {data} GROUP BY {dims}`; the
/// `GROUP BY` clause is omitted when there are no dimensions.
pub fn sql_aggregate<S: AsRef<str>>(m: &Metric, data: &str, dims: &[S], dialect: Dialect) -> Result<String> {
    let exprs = sql_expr(m, dialect)?;
    let dims: Vec<String> = dims.iter().map(|d| dialect.quote_ident(d.as_ref())).collect();
    let items: Vec<String> = dims
        .iter()
        .cloned()
        .chain(
            exprs
                .iter()
                .zip(m.names())
                .map(|(e, n)| format!("{e} AS {}", dialect.quote_ident(&n))),
        )
        .collect();
    let mut sql = format!("SELECT {} FROM {data}", items.join(", "));
    if !dims.is_empty() {
        sql.push_str(" GROUP BY ");
        sql.push_str(&dims.join(", "));
    }
    Ok(sql)
}

/// The two pieces of SQL that draw bootstrap replicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResampleSql {
    /// Body of the `Data` temp table: every input row repeated once per
    /// replicate, tagged with `sample_idx`, its position `row_number` and a
    /// uniformly drawn `random_row_number`.
    pub input_data: String,
    /// Query over `Data` realizing the draws: for each replicate and each
    /// position, the row found at the drawn position.
    pub samples: String,
}

/// SQL that resamples `data` with replacement `n_rep` times. Rows are drawn
/// from the whole table, matching in-memory bootstrap, which resamples
/// before splitting.
pub fn resample_n_times_sql(data: &str, n_rep: usize, seed: u64, dialect: Dialect) -> Result<ResampleSql> {
    if n_rep == 0 {
        return Err(Error::InvalidArgument("bootstrap needs at least one replicate".into()));
    }
    let input_data = match dialect {
        Dialect::GoogleSql => format!(
            "SELECT *, ROW_NUMBER() OVER (PARTITION BY sample_idx) AS row_number, \
             CEILING(RAND() * COUNT(*) OVER (PARTITION BY sample_idx)) AS random_row_number \
             FROM {data}, UNNEST(GENERATE_ARRAY(1, {n_rep})) AS sample_idx"
        ),
        Dialect::Portable => portable_input_data(data, n_rep, seed),
    };
    let samples = "SELECT b.* FROM (SELECT sample_idx, random_row_number AS row_number FROM Data) AS a \
                   JOIN Data AS b USING (sample_idx, row_number)"
        .to_string();
    Ok(ResampleSql { input_data, samples })
}

/// Replicates come from a recursive integer series. Each (replicate,
/// position, seed) triple is hashed with three rounds of xorshift followed
/// by a multiply modulo 2^31 - 1, all in exact 64-bit integer arithmetic.
fn portable_input_data(data: &str, n_rep: usize, seed: u64) -> String {
    let m = HASH_MODULUS;
    let xorshift = |x: &str| format!("(({x} | ({x} / 65536)) - ({x} & ({x} / 65536)))");
    let mut ctes = vec![
        format!(
            "Replicates(sample_idx) AS (SELECT 1 UNION ALL SELECT sample_idx + 1 FROM Replicates WHERE sample_idx < {n_rep})"
        ),
        format!(
            "Numbered AS (SELECT src.*, Replicates.sample_idx AS sample_idx, \
             ROW_NUMBER() OVER (PARTITION BY Replicates.sample_idx) AS row_number, \
             COUNT(*) OVER (PARTITION BY Replicates.sample_idx) AS row_count \
             FROM {data} AS src CROSS JOIN Replicates)"
        ),
        format!(
            "Hash0 AS (SELECT *, (sample_idx * 40692 + row_number * 48271 + {}) % {m} AS h0 FROM Numbered)",
            seed % m + 1
        ),
    ];
    for (i, mult) in HASH_MULTIPLIERS.iter().enumerate() {
        let prev = format!("h{i}");
        ctes.push(format!(
            "Hash{next} AS (SELECT *, ({} * {mult}) % {m} AS h{next} FROM Hash{i})",
            xorshift(&prev),
            next = i + 1
        ));
    }
    let last = HASH_MULTIPLIERS.len();
    format!(
        "WITH RECURSIVE {}\nSELECT *, (h{last} * row_count) / {m} + 1 AS random_row_number FROM Hash{last}",
        ctes.join(",\n")
    )
}

struct Compiled {
    text: String,
    keys: Vec<String>,
    values: Vec<String>,
    /// Bodies of the `Data` temp tables that must exist before the query.
    resample_inputs: Vec<String>,
}

/// Names of the CTEs generated queries define. A data table with one of
/// these names would be shadowed by the CTE.
const GENERATED_NAMES: &[&str] = &[
    "t", "base", "l", "r", "samples", "sampleres", "replicates", "numbered", "hash0", "hash1", "hash2", "hash3",
];
const INPUT_ALIAS: &str = "tally_input";

fn shadowed(data: &str) -> bool {
    let bare = data.trim_matches(|c| c == '"' || c == '`');
    GENERATED_NAMES.iter().any(|n| n.eq_ignore_ascii_case(bare))
}

/// Compile `m` over `data` (a table name or parenthesized query) for each
/// slice of `split_by`. Key columns are the metric's extra dimensions,
/// outermost operation first, followed by `split_by`.
pub fn to_sql<S: AsRef<str>>(m: &Metric, data: &str, split_by: &[S], dialect: Dialect) -> Result<SqlQuery> {
    let split_by: Vec<String> = split_by.iter().map(|s| s.as_ref().to_string()).collect();
    // a table named like a generated CTE is read once through an alias
    // defined outside every generated scope
    let alias = shadowed(data).then(|| format!("WITH {INPUT_ALIAS} AS (SELECT * FROM {data})\n"));
    let source = if alias.is_some() { INPUT_ALIAS } else { data };
    let c = compile(m, source, &split_by, dialect)?;
    let wrap = |query: String| match &alias {
        Some(w) => format!("{w}SELECT * FROM ({query}) AS tally_result"),
        None => query,
    };
    Ok(SqlQuery {
        text: wrap(c.text),
        key_columns: c.keys,
        value_columns: c.values,
        dialect,
        preamble: c
            .resample_inputs
            .into_iter()
            .map(|input| format!("CREATE TEMP TABLE Data AS {}", wrap(input)))
            .collect(),
    })
}

fn count_bootstraps(m: &Metric) -> usize {
    let own = matches!(m.kind(), MetricKind::Operation { op: Operation::Bootstrap { .. }, .. }) as usize;
    own + m.children().iter().map(|c| count_bootstraps(c)).sum::<usize>()
}

fn keys_for(m: &Metric, split_by: &[String]) -> Vec<String> {
    let mut keys = m.extra_dims();
    keys.extend(split_by.iter().cloned());
    keys
}

fn compile(m: &Metric, data: &str, split_by: &[String], d: Dialect) -> Result<Compiled> {
    let keys = keys_for(m, split_by);
    let values = m.names();
    let q = |s: &str| d.quote_ident(s);

    if !m.contains_operation() {
        let text = if m.referenced_columns().is_empty() && split_by.is_empty() {
            // constant metric: one row regardless of the data
            let exprs = sql_expr(m, d)?;
            let items: Vec<String> = exprs.iter().zip(&values).map(|(e, n)| format!("{e} AS {}", q(n))).collect();
            format!("SELECT {}", items.join(", "))
        } else {
            sql_aggregate(m, data, split_by, d)?
        };
        return Ok(Compiled {
            text,
            keys,
            values,
            resample_inputs: Vec::new(),
        });
    }

    let select_keys = |keys: &[String]| -> Vec<String> { keys.iter().map(|k| q(k)).collect() };

    match m.kind() {
        MetricKind::Operation { op, child } => match op {
            Operation::Distribution { over } => {
                let c = compile(child, data, &with_dim(split_by, over), d)?;
                let partition: Vec<String> = c.keys.iter().filter(|k| *k != over).map(|k| q(k)).collect();
                let window = if partition.is_empty() {
                    "OVER ()".to_string()
                } else {
                    format!("OVER (PARTITION BY {})", partition.join(", "))
                };
                let mut items = select_keys(&keys);
                for (cv, name) in c.values.iter().zip(&values) {
                    let col = format!("T.{}", q(cv));
                    let total = format!("SUM({col}) {window}");
                    items.push(format!("{} AS {}", d.divide(&col, &total), q(name)));
                }
                Ok(Compiled {
                    text: format!("WITH T AS ({})\nSELECT {} FROM T", c.text, items.join(", ")),
                    keys,
                    values,
                    resample_inputs: c.resample_inputs,
                })
            }
            Operation::AbsoluteChange { condition, baseline } | Operation::PercentChange { condition, baseline } => {
                let percent = matches!(op, Operation::PercentChange { .. });
                let c = compile(child, data, &with_dim(split_by, condition), d)?;
                let others: Vec<String> = c.keys.iter().filter(|k| *k != condition).cloned().collect();
                let base_cols = match d {
                    Dialect::GoogleSql => format!("* EXCEPT ({})", q(condition)),
                    Dialect::Portable => others
                        .iter()
                        .chain(&c.values)
                        .map(|k| q(k))
                        .collect::<Vec<_>>()
                        .join(", "),
                };
                let filter = match baseline {
                    Cell::Null => format!("{} IS NULL", q(condition)),
                    b => format!("{} = {}", q(condition), d.literal(b)),
                };
                let join = if others.is_empty() {
                    "T CROSS JOIN Base".to_string()
                } else {
                    format!("T LEFT JOIN Base USING ({})", select_keys(&others).join(", "))
                };
                let is_baseline = match baseline {
                    Cell::Null => format!("T.{} IS NULL", q(condition)),
                    b => format!("T.{} = {}", q(condition), d.literal(b)),
                };
                let mut items = select_keys(&keys);
                for (cv, name) in c.values.iter().zip(&values) {
                    let (t, b) = (format!("T.{}", q(cv)), format!("Base.{}", q(cv)));
                    let e = if percent {
                        format!("({} - 1) * 100", d.divide(&t, &b))
                    } else {
                        format!("{t} - {b}")
                    };
                    // baseline rows are exactly zero even when the ratio is undefined
                    items.push(format!(
                        "CASE WHEN {is_baseline} AND {b} IS NOT NULL THEN 0 ELSE {e} END AS {}",
                        q(name)
                    ));
                }
                Ok(Compiled {
                    text: format!(
                        "WITH T AS ({}),\nBase AS (SELECT {base_cols} FROM T WHERE {filter})\nSELECT {} FROM {join}",
                        c.text,
                        items.join(", ")
                    ),
                    keys,
                    values,
                    resample_inputs: c.resample_inputs,
                })
            }
            Operation::Bootstrap { n_rep, seed } => {
                if count_bootstraps(child) > 0 {
                    return Err(Error::NestedBootstrap);
                }
                let rs = resample_n_times_sql(data, *n_rep, *seed, d)?;
                let c = compile(child, "Samples", &with_dim(split_by, "sample_idx"), d)?;
                let group = select_keys(&keys);
                let mut items = group.clone();
                for (cv, name) in c.values.iter().zip(&values) {
                    items.push(format!("{}({}) AS {}", d.stddev(), q(cv), q(name)));
                }
                let mut text = format!(
                    "WITH Samples AS ({}),\nSampleRes AS ({})\nSELECT {} FROM SampleRes",
                    rs.samples,
                    c.text,
                    items.join(", ")
                );
                if !group.is_empty() {
                    text.push_str(" GROUP BY ");
                    text.push_str(&group.join(", "));
                }
                Ok(Compiled {
                    text,
                    keys,
                    values,
                    resample_inputs: vec![rs.input_data],
                })
            }
            Operation::Jackknife { .. } => Err(d.unsupported("jackknife")),
        },
        MetricKind::Composite { op, left, right } => {
            if count_bootstraps(m) > 1 {
                return Err(d.unsupported("more than one bootstrap in a metric"));
            }
            let side = |x: &Metric| -> Result<Option<Compiled>> {
                if x.is_scalar() {
                    Ok(None)
                } else {
                    compile(x, data, split_by, d).map(Some)
                }
            };
            let (l, r) = (side(left)?, side(right)?);
            let operand = |alias: &str, c: &Option<Compiled>, x: &Metric, i: usize| -> Result<(String, u8)> {
                match c {
                    Some(c) => Ok((format!("{alias}.{}", q(&c.values[i.min(c.values.len() - 1)])), ATOM)),
                    None => Ok((scalar_literal(x.scalar_value().unwrap(), d)?, ATOM)),
                }
            };
            if let (Some(l), Some(r)) = (&l, &r) {
                if l.values.len() != r.values.len() {
                    return Err(d.unsupported("arithmetic on metrics of different arity"));
                }
            }
            let mut items = select_keys(&keys);
            for (i, name) in values.iter().enumerate() {
                let (e, _) = binary(*op, operand("L", &l, left, i)?, operand("R", &r, right, i)?, d);
                items.push(format!("{e} AS {}", q(name)));
            }
            let mut ctes = Vec::new();
            let mut resample_inputs = Vec::new();
            for (alias, c) in [("L", &l), ("R", &r)] {
                if let Some(c) = c {
                    ctes.push(format!("{alias} AS ({})", c.text));
                    resample_inputs.extend(c.resample_inputs.iter().cloned());
                }
            }
            let from = match (&l, &r) {
                (Some(l), Some(r)) => {
                    let common: Vec<String> = l.keys.iter().filter(|k| r.keys.contains(k)).map(|k| q(k)).collect();
                    if common.is_empty() {
                        "L CROSS JOIN R".to_string()
                    } else {
                        format!("L FULL OUTER JOIN R USING ({})", common.join(", "))
                    }
                }
                (Some(_), None) => "L".to_string(),
                (None, Some(_)) => "R".to_string(),
                (None, None) => return Err(Error::Internal("constant composite containing an operation".into())),
            };
            Ok(Compiled {
                text: format!("WITH {}\nSELECT {} FROM {from}", ctes.join(",\n"), items.join(", ")),
                keys,
                values,
                resample_inputs,
            })
        }
        MetricKind::Aggregate(_) | MetricKind::Scalar(_) => unreachable!("handled above"),
    }
}

fn with_dim(split_by: &[String], dim: &str) -> Vec<String> {
    let mut dims = split_by.to_vec();
    dims.push(dim.to_string());
    dims
}
