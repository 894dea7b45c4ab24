//! Plain-text persistence helpers: flat `key = value` files and numeric CSV.
//!
//! Floats are written with Rust's shortest round-trip formatting so every
//! emitted file reads back bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Ordered `key = value` pairs. Lines starting with `#` are comments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut kv = KeyValues::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::data(origin, lineno + 1, "expected `key = value`"));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::data(origin, lineno + 1, "empty key"));
            }
            kv.set(key, value.trim());
        }
        Ok(kv)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.render())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Inserts or replaces `key`, keeping first-insertion order.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        if let Some(slot) = self.entries.iter_mut().find(|(k, _)| k == key) {
            slot.1 = value;
        } else {
            self.entries.push((key.to_string(), value));
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::config(key, "missing required key"))
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::config(key, format!("cannot parse `{raw}`"))),
        }
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse_value(key)?.unwrap_or(default))
    }

    pub fn parse_required<T: FromStr>(&self, key: &str) -> Result<T> {
        self.parse_value(key)?
            .ok_or_else(|| Error::config(key, "missing required key"))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Formats a float so that parsing it back yields the identical bits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn parse_f64(raw: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::data(path, line, format!("not a number: `{raw}`")))?;
    if !v.is_finite() {
        return Err(Error::data(path, line, format!("non-finite value `{raw}`")));
    }
    Ok(v)
}

/// Writes a header row followed by one row per matrix row.
pub fn write_matrix_csv(path: &Path, header: &[String], m: &DMatrix<f64>) -> Result<()> {
    write_text(path, &matrix_csv_string(header, m))
}

pub fn matrix_csv_string(header: &[String], m: &DMatrix<f64>) -> String {
    assert_eq!(header.len(), m.ncols(), "header width must match matrix");
    let mut out = String::with_capacity(m.len() * 20);
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&fmt_f64(m[(i, j)]));
        }
        out.push('\n');
    }
    out
}

/// Reads a numeric CSV with a header row. Lines starting with `#` are skipped.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::data(path, 1, format!("{other:?}")),
        })?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let ncols = header.len();
    let mut data = Vec::new();
    let mut nrows = 0;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != ncols {
            return Err(Error::data(
                path,
                line,
                format!("expected {ncols} columns, found {}", record.len()),
            ));
        }
        for field in record.iter() {
            data.push(parse_f64(field, path, line)?);
        }
        nrows += 1;
    }
    Ok((header, DMatrix::from_row_slice(nrows, ncols, &data)))
}

/// Hex SHA-256 of a byte slice.
pub fn digest(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(digest(&bytes))
}
