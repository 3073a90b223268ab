//! Shared helpers: an embedded SQLite engine loaded with test tables, and
//! frame comparison.
#![allow(dead_code)]

use rusqlite::functions::{Aggregate, Context, FunctionFlags};
use rusqlite::types::ValueRef;
use rusqlite::Connection;
use tally_core::{Cell, ColumnKind, ResultFrame, SliceKey, SqlQuery, Table};

/// Sample statistics SQLite lacks, computed with the same two-pass formula
/// as the in-memory engine.
struct SampleMoment {
    sqrt: bool,
}

impl Aggregate<Vec<f64>, Option<f64>> for SampleMoment {
    fn init(&self, _: &mut Context<'_>) -> rusqlite::Result<Vec<f64>> {
        Ok(Vec::new())
    }

    fn step(&self, ctx: &mut Context<'_>, acc: &mut Vec<f64>) -> rusqlite::Result<()> {
        if let Some(v) = ctx.get::<Option<f64>>(0)? {
            acc.push(v);
        }
        Ok(())
    }

    fn finalize(&self, _: &mut Context<'_>, acc: Option<Vec<f64>>) -> rusqlite::Result<Option<f64>> {
        let values = acc.unwrap_or_default();
        let n = values.len();
        if n < 2 {
            return Ok(None);
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        Ok(Some(if self.sqrt { var.sqrt() } else { var }))
    }
}

pub fn connection() -> Connection {
    let conn = Connection::open_in_memory().unwrap();
    let flags = FunctionFlags::SQLITE_UTF8 | FunctionFlags::SQLITE_DETERMINISTIC;
    conn.create_scalar_function("POWER", 2, flags, |ctx| {
        let base = ctx.get::<Option<f64>>(0)?;
        let exp = ctx.get::<Option<f64>>(1)?;
        Ok(base.zip(exp).map(|(b, e)| b.powf(e)).filter(|v| v.is_finite()))
    })
    .unwrap();
    conn.create_aggregate_function("STDDEV_SAMP", 1, flags, SampleMoment { sqrt: true })
        .unwrap();
    conn.create_aggregate_function("VAR_SAMP", 1, flags, SampleMoment { sqrt: false })
        .unwrap();
    conn
}

pub fn quote(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

pub fn load(conn: &Connection, name: &str, table: &Table) {
    let defs: Vec<String> = table
        .columns()
        .iter()
        .map(|c| {
            let ty = match c.kind() {
                ColumnKind::Int => "INTEGER",
                ColumnKind::Float => "REAL",
                ColumnKind::Text => "TEXT",
                ColumnKind::Empty => "",
            };
            format!("{} {ty}", quote(c.name()))
        })
        .collect();
    conn.execute_batch(&format!("CREATE TABLE {} ({})", quote(name), defs.join(", ")))
        .unwrap();
    let marks = vec!["?"; table.columns().len()].join(", ");
    let mut stmt = conn
        .prepare(&format!("INSERT INTO {} VALUES ({marks})", quote(name)))
        .unwrap();
    for i in 0..table.row_count() {
        let row: Vec<rusqlite::types::Value> = table
            .columns()
            .iter()
            .map(|c| match &c.values()[i] {
                Cell::Int(v) => rusqlite::types::Value::Integer(*v),
                Cell::Float(v) => rusqlite::types::Value::Real(*v),
                Cell::Text(s) => rusqlite::types::Value::Text(s.clone()),
                Cell::Null => rusqlite::types::Value::Null,
            })
            .collect();
        stmt.execute(rusqlite::params_from_iter(row)).unwrap();
    }
}

/// Run a compiled query; SQL NULL values become NaN.
pub fn run(conn: &Connection, q: &SqlQuery) -> rusqlite::Result<ResultFrame> {
    for stmt in &q.preamble {
        conn.execute_batch(stmt)?;
    }
    let mut stmt = conn.prepare(&q.text)?;
    let names: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
    let position = |c: &String| names.iter().position(|n| n == c).unwrap_or_else(|| panic!("missing column {c}"));
    let key_idx: Vec<usize> = q.key_columns.iter().map(position).collect();
    let val_idx: Vec<usize> = q.value_columns.iter().map(position).collect();
    let mut rows = Vec::new();
    let mut cursor = stmt.query([])?;
    while let Some(row) = cursor.next()? {
        let key = key_idx
            .iter()
            .map(|&i| match row.get_ref(i).unwrap() {
                ValueRef::Null => Cell::Null,
                ValueRef::Integer(v) => Cell::Int(v),
                ValueRef::Real(v) => Cell::Float(v),
                ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
                ValueRef::Blob(_) => panic!("blob key"),
            })
            .collect();
        let values = val_idx
            .iter()
            .map(|&i| row.get::<_, Option<f64>>(i).unwrap().unwrap_or(f64::NAN))
            .collect();
        rows.push((SliceKey(key), values));
    }
    Ok(ResultFrame::new(q.key_columns.clone(), q.value_columns.clone(), rows).unwrap())
}

pub fn query_scalar(conn: &Connection, sql: &str) -> f64 {
    conn.query_row(sql, [], |r| r.get::<_, f64>(0)).unwrap()
}

/// Relative-or-absolute closeness; any two non-finite values match, since
/// SQL engines return NULL where IEEE arithmetic gives inf or NaN.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    if !a.is_finite() || !b.is_finite() {
        return !a.is_finite() && !b.is_finite();
    }
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Compare frames after aligning key columns by name and sorting rows.
pub fn frame_diff(expected: &ResultFrame, actual: &ResultFrame, tol: f64) -> Result<(), String> {
    let mut want = expected.key_columns().to_vec();
    let mut got = actual.key_columns().to_vec();
    want.sort();
    got.sort();
    if want != got {
        return Err(format!(
            "key columns differ: {:?} vs {:?}",
            expected.key_columns(),
            actual.key_columns()
        ));
    }
    if expected.value_columns() != actual.value_columns() {
        return Err(format!(
            "value columns differ: {:?} vs {:?}",
            expected.value_columns(),
            actual.value_columns()
        ));
    }
    let a = expected.sorted();
    let b = actual.reorder_keys(expected.key_columns()).map_err(|e| e.to_string())?.sorted();
    if a.len() != b.len() {
        return Err(format!("row counts differ: {} vs {}\n{}\n{}", a.len(), b.len(), a.to_pretty(), b.to_pretty()));
    }
    for ((ka, va), (kb, vb)) in a.rows().iter().zip(b.rows()) {
        if ka != kb {
            return Err(format!("keys differ: {ka:?} vs {kb:?}"));
        }
        for (x, y) in va.iter().zip(vb) {
            if !close(*x, *y, tol) {
                return Err(format!("at {ka:?}: {x} vs {y}"));
            }
        }
    }
    Ok(())
}

pub fn fixture(name: &str) -> Table {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    Table::read_csv(std::fs::File::open(path).unwrap(), Default::default()).unwrap()
}

pub mod gen {
    //! Deterministic synthetic tables and proptest strategies.

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tally_core::{ArithOp, Cell, Column, Metric, Operation, Table};

    /// Dims g, arm, period plus numeric columns: x (int), y (float, may be
    /// negative), w (positive float) and a unit id.
    pub fn experiment_table(rows: usize, seed: u64) -> Table {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pick = |rng: &mut ChaCha8Rng, options: &[&str]| options[rng.gen_range(0..options.len())].to_string();
        let mut g = Vec::new();
        let mut arm = Vec::new();
        let mut period = Vec::new();
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut w = Vec::new();
        let mut unit = Vec::new();
        for i in 0..rows {
            g.push(pick(&mut rng, &["a", "b", "c"]));
            arm.push(pick(&mut rng, &["control", "t1", "t2"]));
            period.push(pick(&mut rng, &["pre", "post"]));
            x.push(rng.gen_range(0..50i64));
            y.push(rng.gen_range(-5.0..5.0f64));
            w.push(rng.gen_range(0.5..3.0f64));
            unit.push((i % 7) as i64);
        }
        Table::new(vec![
            Column::text("g", g),
            Column::text("arm", arm),
            Column::text("period", period),
            Column::int("x", x),
            Column::float("y", y),
            Column::float("w", w),
            Column::int("unit", unit),
        ])
        .unwrap()
    }

    /// Deterministic metric trees with the split used for each.
    pub fn golden_trees() -> Vec<(&'static str, Metric, Vec<&'static str>)> {
        let ratio = (Metric::sum("x") / Metric::count("x")).set_names(["ratio"]).unwrap();
        let ci = Metric::mean("y") + 1.96 * Metric::sd("y") / Metric::count("y").pow(0.5);
        vec![
            ("sum leaf", Metric::sum("x"), vec![]),
            ("mean leaf by g", Metric::mean("y"), vec!["g"]),
            ("count min max", Metric::max("x") - Metric::min("x") + Metric::count("x"), vec!["g", "period"]),
            ("variance and sd", Metric::variance("w") / Metric::sd("w"), vec!["arm"]),
            ("ratio", ratio.clone(), vec!["g"]),
            ("confidence bound", ci, vec!["arm"]),
            ("scalar arithmetic", (Metric::sum("w") * 2.0 - 1.5) / 4.0, vec!["g"]),
            ("distribution", Metric::sum("w") | Operation::distribution("arm"), vec![]),
            ("distribution by g", Metric::count("x") | Operation::distribution("arm"), vec!["g"]),
            ("percent change", ratio.clone() | Operation::percent_change("arm", "control"), vec![]),
            ("percent change by g", ratio.clone() | Operation::percent_change("arm", "control"), vec!["g"]),
            ("absolute change", Metric::mean("y") | Operation::absolute_change("period", "pre"), vec!["g"]),
            (
                "chained changes",
                Metric::mean("w")
                    | Operation::percent_change("arm", "control")
                    | Operation::absolute_change("period", "pre"),
                vec![],
            ),
            (
                "chained changes by g",
                Metric::sum("x")
                    | Operation::absolute_change("arm", "control")
                    | Operation::absolute_change("period", "pre"),
                vec!["g"],
            ),
            (
                "change of distribution",
                Metric::sum("w") | Operation::distribution("g") | Operation::percent_change("arm", "control"),
                vec!["period"],
            ),
            (
                "operation minus operation",
                (Metric::sum("w") | Operation::distribution("arm"))
                    - (Metric::mean("w") | Operation::percent_change("arm", "control")),
                vec!["g"],
            ),
            (
                "scalar over operation",
                100.0 / (Metric::sum("w") | Operation::absolute_change("arm", "control")),
                vec![],
            ),
            (
                "coarse over fine",
                (Metric::sum("w") | Operation::distribution("arm")) / Metric::sum("w"),
                vec!["g"],
            ),
        ]
    }

    const COLUMNS: &[&str] = &["x", "y", "EMP", "lost", "my col", "null", "as", "sum", "a`b", "é"];

    fn column() -> impl Strategy<Value = String> {
        proptest::sample::select(COLUMNS).prop_map(str::to_string)
    }

    fn literal() -> impl Strategy<Value = f64> {
        prop_oneof![
            (-1000i32..1000).prop_map(f64::from),
            (-1.0e6..1.0e6f64),
            Just(0.5),
            Just(1.96),
            Just(1e-7),
        ]
    }

    fn name() -> impl Strategy<Value = String> {
        prop_oneof![
            "[a-z_][a-z0-9_]{0,8}",
            Just("with \"quotes\" and \\".to_string()),
            Just("line\nbreak\ttab".to_string()),
            Just("ünïcode".to_string()),
        ]
    }

    fn baseline() -> impl Strategy<Value = Cell> {
        prop_oneof![
            "[a-zA-Z ]{0,6}".prop_map(Cell::Text),
            (-1000i64..1000).prop_map(Cell::Int),
            (-100.0..100.0f64).prop_map(Cell::Float),
            Just(Cell::Null),
        ]
    }

    fn operation() -> impl Strategy<Value = Operation> {
        prop_oneof![
            column().prop_map(Operation::distribution),
            (column(), baseline()).prop_map(|(c, b)| Operation::percent_change(c, b)),
            (column(), baseline()).prop_map(|(c, b)| Operation::absolute_change(c, b)),
            (1usize..5000, any::<u64>()).prop_map(|(n, s)| Operation::bootstrap(n, s).unwrap()),
            column().prop_map(Operation::jackknife),
        ]
    }

    fn leaf() -> impl Strategy<Value = Metric> {
        prop_oneof![
            column().prop_map(Metric::sum),
            column().prop_map(Metric::count),
            column().prop_map(Metric::mean),
            column().prop_map(Metric::min),
            column().prop_map(Metric::max),
            column().prop_map(Metric::variance),
            column().prop_map(Metric::sd),
            (column(), 0u32..=8).prop_map(|(c, k)| Metric::quantile(c, f64::from(k) / 8.0).unwrap()),
            literal().prop_map(Metric::scalar),
        ]
    }

    /// Arbitrary metric trees expressible in the DSL.
    pub fn metric() -> impl Strategy<Value = Metric> {
        leaf().prop_recursive(5, 32, 2, |inner| {
            prop_oneof![
                (
                    inner.clone(),
                    inner.clone(),
                    proptest::sample::select(&[ArithOp::Add, ArithOp::Sub, ArithOp::Mul, ArithOp::Div][..])
                )
                    .prop_map(|(l, r, op)| Metric::combine(op, l, r)),
                (inner.clone(), literal()).prop_map(|(b, e)| b.pow(e)),
                (inner.clone(), operation()).prop_map(|(m, op)| m | op),
                (inner, name()).prop_map(|(m, n)| m.set_names([n]).unwrap()),
            ]
        })
    }
}
