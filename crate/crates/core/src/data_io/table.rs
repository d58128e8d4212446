//! Shared CSV reading and writing with line-numbered errors.

use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A parsed data row with its 1-based line number in the file.
pub struct Row {
    pub line: u64,
    pub fields: csv::StringRecord,
}

/// In-memory table: the validated header and the data rows.
pub struct Table {
    pub path: String,
    pub header: Vec<String>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn error(&self, line: u64, message: impl Into<String>) -> Error {
        Error::Csv {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    /// Parses field `col` of `row`, naming the line and column on failure.
    /// Empty cells are rejected.
    pub fn parse<T: FromStr>(&self, row: &Row, col: usize) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = row.fields.get(col).unwrap_or("");
        raw.trim()
            .parse()
            .map_err(|e| self.error(row.line, format!("column {}: cannot parse {raw:?}: {e}", self.header[col])))
    }

    /// Like [`Table::parse`] but maps an empty cell to `None`.
    pub fn parse_opt<T: FromStr>(&self, row: &Row, col: usize) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if row.fields.get(col).unwrap_or("").trim().is_empty() {
            Ok(None)
        } else {
            self.parse(row, col).map(Some)
        }
    }
}

fn csv_error(path: &str, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    let message = match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            format!("expected {expected_len} fields, found {len}")
        }
        _ => e.to_string(),
    };
    Error::Csv {
        path: path.to_string(),
        line,
        message,
    }
}

/// Reads a CSV file whose header must start with `required` columns in order.
pub fn read_table(path: &Path, required: &[&str]) -> Result<Table> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(&name, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.len() < required.len() || header.iter().zip(required).any(|(h, r)| h != r) {
        return Err(Error::Csv {
            path: name,
            line: 1,
            message: format!("expected header starting with {}", required.join(",")),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let fields = record.map_err(|e| csv_error(&name, e))?;
        let line = fields.position().map(|p| p.line()).unwrap_or(0);
        rows.push(Row { line, fields });
    }
    Ok(Table { path: name, header, rows })
}

/// Writes a header and rows of already formatted cells.
pub fn write_table<I, R>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let name = path.display().to_string();
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(&name, e))?;
    writer.write_record(header).map_err(|e| csv_error(&name, e))?;
    for row in rows {
        writer.write_record(row).map_err(|e| csv_error(&name, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Formats an optional value as an empty cell when absent.
pub fn opt_cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
