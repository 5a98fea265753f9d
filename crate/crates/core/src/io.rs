//! CSV ingestion and result serialization.
//!
//! Every JSON document carries a `schema` field; floats are written with
//! 17 significant digits so they round-trip exactly.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{MalpError, Result};
use crate::moments::Dataset;

pub const SCHEMA: &str = "malp/v1";

fn io_err(e: impl std::fmt::Display) -> MalpError {
    MalpError::Io(e.to_string())
}

/// A column chosen by header name or, failing that, by zero-based index.
fn resolve_column(headers: &[String], spec: &str) -> Result<usize> {
    if let Some(i) = headers.iter().position(|h| h == spec) {
        return Ok(i);
    }
    match spec.parse::<usize>() {
        Ok(i) if i < headers.len() => Ok(i),
        _ => Err(MalpError::ColumnNotFound { name: spec.to_string() }),
    }
}

/// Reads `path` (comma-delimited, header row) into a dataset with the
/// `response` column as `y` and `predictors` (default: every other column)
/// as `x`. Rows in errors are reported by file line number.
pub fn ingest_csv(path: impl AsRef<Path>, response: &str, predictors: &[String]) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => MalpError::FileNotFound {
            path: path.display().to_string(),
        },
        _ => io_err(e),
    })?;
    read_csv(file, response, predictors)
}

/// As [`ingest_csv`] from any reader.
pub fn read_csv<R: io::Read>(reader: R, response: &str, predictors: &[String]) -> Result<Dataset> {
    let mut table = Table::read(reader)?;
    let y_col = resolve_column(&table.headers, response)?;
    let x_cols: Vec<usize> = if predictors.is_empty() {
        (0..table.headers.len()).filter(|&c| c != y_col).collect()
    } else {
        predictors
            .iter()
            .map(|p| resolve_column(&table.headers, p))
            .collect::<Result<_>>()?
    };
    if x_cols.contains(&y_col) {
        return Err(MalpError::invalid("predictors", "response column is also listed as a predictor"));
    }
    if x_cols.is_empty() {
        return Err(MalpError::invalid("predictors", "no predictor columns"));
    }
    let mut cols = x_cols.clone();
    cols.push(y_col);
    let rows = table.numeric_rows(&cols)?;
    let mut x = Vec::with_capacity(rows.len() * x_cols.len());
    let mut y = Vec::with_capacity(rows.len());
    for mut r in rows {
        y.push(r.pop().unwrap());
        x.extend(r);
    }
    let names: Vec<String> = cols.iter().map(|&c| std::mem::take(&mut table.headers[c])).collect();
    Dataset::new(x, y, x_cols.len())?.with_column_names(names)
}

/// Rows of the named columns (in the given order) of a CSV file.
pub fn read_columns(path: impl AsRef<Path>, columns: &[String]) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => MalpError::FileNotFound {
            path: path.display().to_string(),
        },
        _ => io_err(e),
    })?;
    let table = Table::read(file)?;
    let cols = columns
        .iter()
        .map(|c| resolve_column(&table.headers, c))
        .collect::<Result<Vec<_>>>()?;
    table.numeric_rows(&cols)
}

struct Table {
    headers: Vec<String>,
    records: Vec<csv::StringRecord>,
}

impl Table {
    fn read<R: io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(io_err)?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let records = rdr
            .records()
            .enumerate()
            .map(|(i, r)| {
                r.map_err(|e| MalpError::ParseError {
                    row: i + 2,
                    column: String::new(),
                    message: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Table { headers, records })
    }

    /// Parsed values of `cols` for every record; rows are file line numbers.
    fn numeric_rows(&self, cols: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, record)| {
                let line = i + 2;
                cols.iter()
                    .map(|&c| {
                        let raw = record.get(c).unwrap_or("").trim();
                        let fail = |message: String| MalpError::ParseError {
                            row: line,
                            column: self.headers[c].clone(),
                            message,
                        };
                        if raw.is_empty() {
                            return Err(fail("missing value".into()));
                        }
                        let v: f64 = raw.parse().map_err(|_| fail(format!("`{raw}` is not a number")))?;
                        if !v.is_finite() {
                            return Err(fail("non-finite value".into()));
                        }
                        Ok(v)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Pretty JSON formatter that prints every float with 17 significant digits.
struct Precise<'a>(PrettyFormatter<'a>);

impl Formatter for Precise<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{}", format_f64(value))
    }
    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// `value` in scientific notation with 17 significant digits.
pub fn format_f64(value: f64) -> String {
    format!("{value:.16e}")
}

/// Wraps `body` under a schema tag and the producing command.
#[derive(Serialize)]
pub struct Document<'a, T: Serialize> {
    pub schema: &'static str,
    pub command: &'a str,
    #[serde(flatten)]
    pub body: T,
}

pub fn document<T: Serialize>(command: &str, body: T) -> Document<'_, T> {
    Document {
        schema: SCHEMA,
        command,
        body,
    }
}

/// Serializes `value` as pretty JSON with full-precision floats.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Precise(PrettyFormatter::new()));
    value.serialize(&mut ser).map_err(io_err)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("JSON is UTF-8"))
}

/// Named numeric columns as CSV text with full-precision floats.
pub fn columns_to_csv(columns: &[(&str, &[f64])]) -> Result<String> {
    let rows = columns.iter().map(|c| c.1.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(columns.iter().map(|c| c.0)).map_err(io_err)?;
    for i in 0..rows {
        w.write_record(columns.iter().map(|c| c.1.get(i).map(|v| format_f64(*v)).unwrap_or_default()))
            .map_err(io_err)?;
    }
    String::from_utf8(w.into_inner().map_err(io_err)?).map_err(io_err)
}

/// Writes to `path`, or to standard output when `path` is `None`.
pub fn emit(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(io_err),
        None => io::stdout().write_all(text.as_bytes()).map_err(io_err),
    }
}

/// A dataset (response last) as CSV text.
pub fn dataset_to_csv(data: &Dataset) -> Result<String> {
    let p = data.p();
    let names: Vec<String> = match data.column_names() {
        Some(n) => n.to_vec(),
        None => (1..=p).map(|j| format!("x{j}")).chain(["y".to_string()]).collect(),
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&names).map_err(io_err)?;
    for i in 0..data.n() {
        let row = data.x_row(i).iter().chain([&data.y()[i]]).map(|v| format_f64(*v));
        w.write_record(row).map_err(io_err)?;
    }
    String::from_utf8(w.into_inner().map_err(io_err)?).map_err(io_err)
}
