//! Columnar in-memory tables.
//!
//! A [`Table`] is an immutable, ordered set of equally long [`Column`]s. It is
//! the unit of data that metrics are evaluated on: the engine splits it into
//! slices with [`Table::group_indices`], and resampling operations derive new
//! tables from it with [`Table::take`].

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::{Read, Write};
use std::sync::OnceLock;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A single typed value.
#[derive(Debug, Clone)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
    Null,
}

impl Cell {
    pub fn text(s: impl Into<String>) -> Self {
        Cell::Text(s.into())
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Cell::Null)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Float(v) => Some(*v),
            Cell::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Cell::Null => 0,
            Cell::Float(_) | Cell::Int(_) => 1,
            Cell::Text(_) => 2,
        }
    }

    /// Total order used for sorting keys: nulls, then numbers, then text.
    pub fn total_cmp(&self, other: &Cell) -> Ordering {
        match (self, other) {
            (Cell::Int(a), Cell::Int(b)) => a.cmp(b),
            (Cell::Text(a), Cell::Text(b)) => a.cmp(b),
            (a, b) if a.rank() == 1 && b.rank() == 1 => {
                let (x, y) = (a.as_f64().unwrap(), b.as_f64().unwrap());
                normalize(x).total_cmp(&normalize(y))
            }
            (a, b) => a.rank().cmp(&b.rank()),
        }
    }
}

// -0.0 and every NaN payload collapse to one representative so that equality
// and hashing agree.
fn normalize(v: f64) -> f64 {
    if v.is_nan() {
        f64::NAN
    } else if v == 0.0 {
        0.0
    } else {
        v
    }
}

/// Grouping equality: `Null == Null`, and integers equal floats of the same value.
impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Cell::Null, Cell::Null) => true,
            (Cell::Int(a), Cell::Int(b)) => a == b,
            (Cell::Text(a), Cell::Text(b)) => a == b,
            (a, b) => match (a.as_f64(), b.as_f64()) {
                (Some(x), Some(y)) => normalize(x).to_bits() == normalize(y).to_bits(),
                _ => false,
            },
        }
    }
}

impl Eq for Cell {}

impl Hash for Cell {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            Cell::Null => {}
            Cell::Text(s) => s.hash(state),
            Cell::Int(v) => normalize(*v as f64).to_bits().hash(state),
            Cell::Float(v) => normalize(*v).to_bits().hash(state),
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Float(v) => write!(f, "{v}"),
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Text(s) => f.write_str(s),
            Cell::Null => Ok(()),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Int,
    Float,
    Text,
    /// Every cell is null.
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    name: String,
    values: Vec<Cell>,
}

impl Column {
    pub fn new(name: impl Into<String>, values: Vec<Cell>) -> Self {
        Column {
            name: name.into(),
            values,
        }
    }

    pub fn float(name: impl Into<String>, values: impl IntoIterator<Item = f64>) -> Self {
        Column::new(name, values.into_iter().map(Cell::Float).collect())
    }

    pub fn int(name: impl Into<String>, values: impl IntoIterator<Item = i64>) -> Self {
        Column::new(name, values.into_iter().map(Cell::Int).collect())
    }

    pub fn text<S: Into<String>>(name: impl Into<String>, values: impl IntoIterator<Item = S>) -> Self {
        Column::new(name, values.into_iter().map(|s| Cell::Text(s.into())).collect())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[Cell] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The kind of the first non-null cell.
    pub fn kind(&self) -> ColumnKind {
        self.values
            .iter()
            .find_map(|c| match c {
                Cell::Float(_) => Some(ColumnKind::Float),
                Cell::Int(_) => Some(ColumnKind::Int),
                Cell::Text(_) => Some(ColumnKind::Text),
                Cell::Null => None,
            })
            .unwrap_or(ColumnKind::Empty)
    }
}

/// 128-bit content hash of a table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(pub [u8; 16]);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// Values of the split-by dimensions identifying one slice, in split-by order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct SliceKey(pub Vec<Cell>);

impl SliceKey {
    pub fn empty() -> Self {
        SliceKey(Vec::new())
    }

    pub fn cells(&self) -> &[Cell] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total_cmp(&self, other: &SliceKey) -> Ordering {
        for (a, b) in self.0.iter().zip(&other.0) {
            match a.total_cmp(b) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        self.0.len().cmp(&other.0.len())
    }
}

impl<C: Into<Cell>> FromIterator<C> for SliceKey {
    fn from_iter<T: IntoIterator<Item = C>>(iter: T) -> Self {
        SliceKey(iter.into_iter().map(Into::into).collect())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CsvOptions {
    pub delimiter: u8,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions { delimiter: b',' }
    }
}

#[derive(Debug)]
pub struct Table {
    columns: Vec<Column>,
    index: HashMap<String, usize>,
    row_count: usize,
    fingerprint: OnceLock<Fingerprint>,
}

impl Clone for Table {
    fn clone(&self) -> Self {
        Table {
            columns: self.columns.clone(),
            index: self.index.clone(),
            row_count: self.row_count,
            fingerprint: self.fingerprint.clone(),
        }
    }
}

impl PartialEq for Table {
    fn eq(&self, other: &Self) -> bool {
        self.columns == other.columns && self.row_count == other.row_count
    }
}

impl Table {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let row_count = columns.first().map_or(0, Column::len);
        let mut index = HashMap::with_capacity(columns.len());
        for (i, col) in columns.iter().enumerate() {
            if col.name.is_empty() {
                return Err(Error::Schema(format!("column {i} has an empty name")));
            }
            if index.insert(col.name.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate column `{}`", col.name)));
            }
            if col.len() != row_count {
                return Err(Error::Schema(format!(
                    "column `{}` has {} rows, expected {row_count}",
                    col.name,
                    col.len()
                )));
            }
        }
        Ok(Table {
            columns,
            index,
            row_count,
            fingerprint: OnceLock::new(),
        })
    }

    /// A table with the given columns and no rows.
    pub fn empty<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        Table::new(names.into_iter().map(|n| Column::new(n, Vec::new())).collect())
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(Column::name)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.index
            .get(name)
            .map(|&i| &self.columns[i])
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn row(&self, i: usize) -> Vec<Cell> {
        self.columns.iter().map(|c| c.values[i].clone()).collect()
    }

    /// New table made of the given rows, in the given order. Indices may repeat.
    pub fn take(&self, rows: &[usize]) -> Table {
        let columns = self
            .columns
            .iter()
            .map(|c| Column::new(c.name.clone(), rows.iter().map(|&r| c.values[r].clone()).collect()))
            .collect();
        Table {
            columns,
            index: self.index.clone(),
            row_count: rows.len(),
            fingerprint: OnceLock::new(),
        }
    }

    /// Content hash over column names and cells, computed once per table.
    pub fn fingerprint(&self) -> Fingerprint {
        *self.fingerprint.get_or_init(|| {
            let mut h = Sha256::new();
            h.update((self.row_count as u64).to_le_bytes());
            for col in &self.columns {
                h.update((col.name.len() as u64).to_le_bytes());
                h.update(col.name.as_bytes());
                for cell in &col.values {
                    match cell {
                        Cell::Null => h.update([0u8]),
                        Cell::Int(v) => {
                            h.update([1u8]);
                            h.update(v.to_le_bytes());
                        }
                        Cell::Float(v) => {
                            h.update([2u8]);
                            h.update(v.to_bits().to_le_bytes());
                        }
                        Cell::Text(s) => {
                            h.update([3u8]);
                            h.update((s.len() as u64).to_le_bytes());
                            h.update(s.as_bytes());
                        }
                    }
                }
            }
            let digest = h.finalize();
            let mut out = [0u8; 16];
            out.copy_from_slice(&digest[..16]);
            Fingerprint(out)
        })
    }

    /// Row indices of each slice, keyed by the split-by values and ordered by
    /// first appearance. Rows keep their relative order within a slice. An
    /// empty `split_by` yields a single slice under the empty key, even when
    /// the table has no rows.
    pub fn group_indices<S: AsRef<str>>(&self, split_by: &[S]) -> Result<Vec<(SliceKey, Vec<usize>)>> {
        let cols = self.resolve_dims(split_by)?;
        if cols.is_empty() {
            return Ok(vec![(SliceKey::empty(), (0..self.row_count).collect())]);
        }
        let mut slot: HashMap<SliceKey, usize> = HashMap::new();
        let mut groups: Vec<(SliceKey, Vec<usize>)> = Vec::new();
        for row in 0..self.row_count {
            let key = SliceKey(cols.iter().map(|c| c.values[row].clone()).collect());
            match slot.get(&key) {
                Some(&g) => groups[g].1.push(row),
                None => {
                    slot.insert(key.clone(), groups.len());
                    groups.push((key, vec![row]));
                }
            }
        }
        Ok(groups)
    }

    /// Split the table into one sub-table per slice.
    pub fn group_rows<S: AsRef<str>>(&self, split_by: &[S]) -> Result<Vec<(SliceKey, Table)>> {
        Ok(self
            .group_indices(split_by)?
            .into_iter()
            .map(|(k, rows)| (k, self.take(&rows)))
            .collect())
    }

    fn resolve_dims<S: AsRef<str>>(&self, split_by: &[S]) -> Result<Vec<&Column>> {
        let mut cols: Vec<&Column> = Vec::with_capacity(split_by.len());
        for name in split_by {
            let col = self.column(name.as_ref())?;
            if cols.iter().any(|c| c.name == col.name) {
                return Err(Error::InvalidArgument(format!(
                    "dimension `{}` is listed more than once",
                    col.name
                )));
            }
            cols.push(col);
        }
        Ok(cols)
    }

    /// Draw `row_count` rows uniformly with replacement.
    pub fn resample_with_replacement<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Table> {
        if self.row_count == 0 {
            return Err(Error::EmptyInput("cannot resample a table with no rows".into()));
        }
        let rows: Vec<usize> = (0..self.row_count).map(|_| rng.gen_range(0..self.row_count)).collect();
        Ok(self.take(&rows))
    }

    /// Rows whose `column` value differs from `value`.
    pub fn without_value(&self, column: &str, value: &Cell) -> Result<Table> {
        let col = self.column(column)?;
        let rows: Vec<usize> = (0..self.row_count).filter(|&r| &col.values[r] != value).collect();
        Ok(self.take(&rows))
    }

    /// Distinct values of a column in first-appearance order.
    pub fn distinct(&self, column: &str) -> Result<Vec<Cell>> {
        Ok(self
            .group_indices(&[column])?
            .into_iter()
            .map(|(mut k, _)| k.0.remove(0))
            .collect())
    }

    /// Parse a CSV document with a header row. Each column takes the
    /// narrowest type all of its non-empty cells parse as: integer, then
    /// float, then text. Empty fields are nulls.
    pub fn read_csv<R: Read>(source: R, options: CsvOptions) -> Result<Table> {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(options.delimiter)
            .has_headers(true)
            .flexible(true)
            .from_reader(source);
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| csv_error(e, 1))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut raw: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        for (i, record) in reader.records().enumerate() {
            let row = i as u64 + 2;
            let record = record.map_err(|e| csv_error(e, row))?;
            let line = record.position().map_or(row, |p| p.line());
            if record.len() != headers.len() {
                return Err(Error::Parse {
                    row: line,
                    message: format!("expected {} fields, found {}", headers.len(), record.len()),
                });
            }
            for (col, field) in raw.iter_mut().zip(record.iter()) {
                col.push(field.to_string());
            }
        }
        let columns = headers
            .into_iter()
            .zip(raw)
            .map(|(name, fields)| Column::new(name, infer_cells(fields)))
            .collect();
        Table::new(columns)
    }

    /// Write the table as CSV. Floats use a representation that reads back
    /// as floats; nulls are empty fields.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(sink);
        writer.write_record(self.column_names()).map_err(|e| csv_error(e, 1))?;
        for r in 0..self.row_count {
            let row: Vec<String> = self.columns.iter().map(|c| render_cell(&c.values[r])).collect();
            writer.write_record(&row).map_err(|e| csv_error(e, r as u64 + 2))?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error, row: u64) -> Error {
    let row = e.position().map_or(row, |p| p.line());
    Error::Parse {
        row,
        message: e.to_string(),
    }
}

pub(crate) fn render_cell(cell: &Cell) -> String {
    match cell {
        Cell::Float(v) => format!("{v:?}"),
        Cell::Int(v) => v.to_string(),
        Cell::Text(s) => s.clone(),
        Cell::Null => String::new(),
    }
}

fn infer_cells(fields: Vec<String>) -> Vec<Cell> {
    let present = || fields.iter().filter(|f| !f.is_empty());
    if present().all(|f| f.parse::<i64>().is_ok()) {
        return fields
            .iter()
            .map(|f| f.parse().map_or(Cell::Null, Cell::Int))
            .collect();
    }
    if present().all(|f| f.parse::<f64>().is_ok()) {
        return fields
            .iter()
            .map(|f| f.parse().map_or(Cell::Null, Cell::Float))
            .collect();
    }
    fields
        .into_iter()
        .map(|f| if f.is_empty() { Cell::Null } else { Cell::Text(f) })
        .collect()
}
