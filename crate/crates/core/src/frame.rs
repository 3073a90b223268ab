use std::io::Write;

use crate::error::{Error, Result};
use crate::table::{render_cell, Cell, SliceKey};

/// Result of evaluating a metric: one row per key, one value per value column.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultFrame {
    key_columns: Vec<String>,
    value_columns: Vec<String>,
    rows: Vec<(SliceKey, Vec<f64>)>,
}

impl ResultFrame {
    pub fn new(key_columns: Vec<String>, value_columns: Vec<String>, rows: Vec<(SliceKey, Vec<f64>)>) -> Result<Self> {
        for (key, values) in &rows {
            if key.len() != key_columns.len() {
                return Err(Error::Internal(format!(
                    "key has {} cells, frame has {} key columns",
                    key.len(),
                    key_columns.len()
                )));
            }
            if values.len() != value_columns.len() {
                return Err(Error::Internal(format!(
                    "row has {} values, frame has {} value columns",
                    values.len(),
                    value_columns.len()
                )));
            }
        }
        Ok(ResultFrame {
            key_columns,
            value_columns,
            rows,
        })
    }

    pub fn key_columns(&self) -> &[String] {
        &self.key_columns
    }

    pub fn value_columns(&self) -> &[String] {
        &self.value_columns
    }

    pub fn rows(&self) -> &[(SliceKey, Vec<f64>)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn arity(&self) -> usize {
        self.value_columns.len()
    }

    pub fn get(&self, key: &SliceKey) -> Option<&[f64]> {
        self.rows.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_slice())
    }

    /// Values of one value column, in row order.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.value_columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|(_, v)| v[i]).collect())
    }

    /// The single value of a frame with one row and one value column.
    pub fn scalar(&self) -> Option<f64> {
        match self.rows.as_slice() {
            [(_, v)] if v.len() == 1 => Some(v[0]),
            _ => None,
        }
    }

    pub fn with_value_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.value_columns.len() {
            return Err(Error::NameArity {
                expected: self.value_columns.len(),
                got: names.len(),
            });
        }
        self.value_columns = names;
        Ok(self)
    }

    /// Reorder key columns to `order`, which must be a permutation of the
    /// current key columns.
    pub fn reorder_keys<S: AsRef<str>>(&self, order: &[S]) -> Result<Self> {
        let perm: Vec<usize> = order
            .iter()
            .map(|name| {
                self.key_columns
                    .iter()
                    .position(|k| k == name.as_ref())
                    .ok_or_else(|| Error::UnknownColumn(name.as_ref().to_string()))
            })
            .collect::<Result<_>>()?;
        if perm.len() != self.key_columns.len() {
            return Err(Error::InvalidArgument("key reordering must name every key column".into()));
        }
        let rows = self
            .rows
            .iter()
            .map(|(k, v)| (SliceKey(perm.iter().map(|&i| k.0[i].clone()).collect()), v.clone()))
            .collect();
        Ok(ResultFrame {
            key_columns: perm.iter().map(|&i| self.key_columns[i].clone()).collect(),
            value_columns: self.value_columns.clone(),
            rows,
        })
    }

    /// Rows sorted by key under [`Cell::total_cmp`].
    pub fn sorted(&self) -> Self {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        ResultFrame {
            key_columns: self.key_columns.clone(),
            value_columns: self.value_columns.clone(),
            rows,
        }
    }

    /// CSV with key columns first, then value columns.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(sink);
        let header: Vec<&str> = self
            .key_columns
            .iter()
            .chain(&self.value_columns)
            .map(String::as_str)
            .collect();
        let to_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        writer.write_record(&header).map_err(to_err)?;
        for (key, values) in &self.rows {
            let record: Vec<String> = key
                .cells()
                .iter()
                .map(render_cell)
                .chain(values.iter().map(|v| format!("{v}")))
                .collect();
            writer.write_record(&record).map_err(to_err)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    /// Aligned plain-text table. Keys are left-aligned, values right-aligned.
    pub fn to_pretty(&self) -> String {
        let header: Vec<String> = self.key_columns.iter().chain(&self.value_columns).cloned().collect();
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|(k, v)| {
                k.cells()
                    .iter()
                    .map(|c| match c {
                        Cell::Null => "null".to_string(),
                        c => c.to_string(),
                    })
                    .chain(v.iter().map(|x| format!("{x}")))
                    .collect()
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let nkeys = self.key_columns.len();
        let line = |cells: &[String]| {
            cells
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if i < nkeys {
                        format!("{c:<w$}", w = widths[i])
                    } else {
                        format!("{c:>w$}", w = widths[i])
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = line(&header);
        out.push('\n');
        out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        out.push('\n');
        for row in &body {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }
}
