use std::path::{Path, PathBuf};

use serde::{Serialize, Serializer};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Report written by every command as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    /// Exact configuration the command ran with.
    pub config: Value,
    pub summary: Value,
    pub spectra: Value,
    pub gauge_spread: Value,
    pub provenance: Provenance,
    pub warnings: Vec<String>,
    /// Series files written next to the report.
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    /// SHA-256 of the input file, hex encoded.
    pub input_sha256: Option<String>,
}

impl Provenance {
    pub fn new(command: &str, seed: Option<u64>, input_sha256: Option<String>) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            input_sha256,
        }
    }
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(Error::input(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Write `bytes` to a sibling temp file and rename it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp: PathBuf = path.to_path_buf();
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    tmp.set_file_name(format!(".{name}.tmp"));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Column-oriented series file.
pub struct Series {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Series {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Self {
            headers: headers.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    /// Append a row keyed by `key` (a step, spot or asset label).
    pub fn push(&mut self, key: impl ToString, values: impl IntoIterator<Item = f64>) {
        let mut row = vec![key.to_string()];
        row.extend(values.into_iter().map(format_f64));
        self.rows.push(row);
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        write_atomic(path, &bytes)
    }
}

/// Shortest decimal that parses back to the same `f64`; exponent form for
/// very small or very large magnitudes.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !a.is_finite() {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

/// JSON has no non-finite numbers; write them as `"inf"`, `"-inf"`, `"nan"`.
pub fn serialize_sentinel<S: Serializer>(value: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if value.is_finite() {
        s.serialize_f64(*value)
    } else if value.is_nan() {
        s.serialize_str("nan")
    } else if *value > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

pub fn sentinel_value(value: f64) -> Value {
    serialize_sentinel(&value, serde_json::value::Serializer).unwrap_or(Value::Null)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.0, 1.0, -2.5e-22, 8.370210971914673e-9, 123456.789, 1e300, 5e-324] {
            let s = format_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(format_f64(1e-9), "1e-9");
    }

    #[test]
    fn sentinels() {
        assert_eq!(sentinel_value(f64::INFINITY), Value::from("inf"));
        assert_eq!(sentinel_value(f64::NAN), Value::from("nan"));
        assert_eq!(sentinel_value(1.5), Value::from(1.5));
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.json");
        write_atomic(&p, b"{}").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"{}");
        let names: Vec<_> = std::fs::read_dir(p.parent().unwrap()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }
}
