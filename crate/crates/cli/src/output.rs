//! File output: atomic writes, CSV tables and the moment table format shared
//! by `run` and `compare`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "output path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp: PathBuf = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// A CSV table built in memory and written atomically.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new<I, S>(header: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).expect("writing to memory");
        Self { writer }
    }

    pub fn row(&mut self, values: &[f64]) {
        self.writer
            .write_record(values.iter().map(|v| format_float(*v)))
            .expect("writing to memory");
    }

    pub fn save(self, path: &Path) -> io::Result<()> {
        let bytes = self.writer.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
        write_atomic(path, &bytes)
    }
}

/// Shortest round-trip representation.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:e}")
    }
}

/// Mean and covariance at a set of times, optionally with standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentTable {
    pub dim: usize,
    pub rows: Vec<MomentRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentRow {
    pub t: f64,
    pub mean: Vec<f64>,
    /// Row-major `d x d`.
    pub covariance: Vec<f64>,
    pub mean_std_error: Option<Vec<f64>>,
    pub covariance_std_error: Option<Vec<f64>>,
}

fn upper_pairs(d: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..d).flat_map(move |i| (i..d).map(move |j| (i, j)))
}

impl MomentTable {
    pub fn header(dim: usize, with_errors: bool) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((0..dim).map(|i| format!("mean_{i}")));
        h.extend(upper_pairs(dim).map(|(i, j)| format!("cov_{i}_{j}")));
        if with_errors {
            h.extend((0..dim).map(|i| format!("se_mean_{i}")));
            h.extend(upper_pairs(dim).map(|(i, j)| format!("se_cov_{i}_{j}")));
        }
        h
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let with_errors = self.rows.first().is_some_and(|r| r.mean_std_error.is_some());
        let d = self.dim;
        let mut table = Table::new(Self::header(d, with_errors));
        for r in &self.rows {
            let mut values = vec![r.t];
            values.extend(&r.mean);
            values.extend(upper_pairs(d).map(|(i, j)| r.covariance[i * d + j]));
            if with_errors {
                values.extend(r.mean_std_error.as_deref().unwrap_or_default());
                let se = r.covariance_std_error.as_deref().unwrap_or_default();
                values.extend(upper_pairs(d).map(|(i, j)| se[i * d + j]));
            }
            table.row(&values);
        }
        table.save(path)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| format!("{}: {e}", path.display()))?
            .iter()
            .map(str::to_string)
            .collect();
        let dim = header.iter().filter(|h| h.starts_with("mean_")).count();
        let n_cov = dim * (dim + 1) / 2;
        let with_errors = header.len() == 1 + 2 * (dim + n_cov);
        if header.first().map(String::as_str) != Some("t") || header != Self::header(dim, with_errors) {
            return Err(format!("{}: not a moment table", path.display()));
        }
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| format!("{}: {e}", path.display()))?;
            let values: Vec<f64> = record
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| format!("{}: row {}: {e}", path.display(), line + 1))?;
            let unpack_sym = |flat: &[f64]| {
                let mut m = vec![0.0; dim * dim];
                for ((i, j), v) in upper_pairs(dim).zip(flat) {
                    m[i * dim + j] = *v;
                    m[j * dim + i] = *v;
                }
                m
            };
            let base = 1 + dim + n_cov;
            rows.push(MomentRow {
                t: values[0],
                mean: values[1..1 + dim].to_vec(),
                covariance: unpack_sym(&values[1 + dim..base]),
                mean_std_error: with_errors.then(|| values[base..base + dim].to_vec()),
                covariance_std_error: with_errors.then(|| unpack_sym(&values[base + dim..])),
            });
        }
        Ok(Self { dim, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moment_table_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let table = MomentTable {
            dim: 2,
            rows: vec![MomentRow {
                t: 0.5,
                mean: vec![0.1, -1.0 / 3.0],
                covariance: vec![1.0, 0.25, 0.25, 2.0],
                mean_std_error: Some(vec![1e-3, 2e-3]),
                covariance_std_error: Some(vec![1e-4, 2e-4, 2e-4, 3e-4]),
            }],
        };
        table.save(&path).unwrap();
        assert_eq!(MomentTable::load(&path).unwrap(), table);
        assert!(!dir.path().join(".m.csv.tmp").exists());
    }

    #[test]
    fn floats_round_trip() {
        for v in [0.1, -2.5e-300, 1.0 / 3.0, 12345.678] {
            assert_eq!(format_float(v).parse::<f64>().unwrap(), v);
        }
    }
}
