//! Dense embedding matrices and their on-disk form: a JSON manifest next to a
//! raw little-endian `f32` blob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE: &str = "f32le";
pub const NORM_TOLERANCE: f64 = 1e-4;
/// Largest matrix accepted from a plain CSV fixture.
pub const CSV_ROW_LIMIT: usize = 64;

/// Row-major `rows x dim` matrix of finite `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f32>,
    normalized: bool,
}

impl EmbeddingMatrix {
    /// Builds a matrix and verifies every invariant. If `normalized` is set,
    /// every row must already have unit norm; use [`Self::normalize_rows`] to
    /// produce such a matrix.
    pub fn new(rows: usize, dim: usize, values: Vec<f32>, normalized: bool) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::EmptyMatrix { rows, dim });
        }
        if values.len() != rows * dim {
            return Err(Error::LengthMismatch {
                expected: rows * dim,
                actual: values.len(),
            });
        }
        let m = Self {
            rows,
            dim,
            values,
            normalized,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R], normalized: bool) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::LengthMismatch {
                    expected: dim,
                    actual: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, values, normalized)
    }

    fn validate(&self) -> Result<()> {
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                row: i / self.dim,
                col: i % self.dim,
            });
        }
        if self.normalized {
            for (row, r) in self.iter_rows().enumerate() {
                let norm = l2_norm(r);
                if (norm - 1.0).abs() > NORM_TOLERANCE {
                    return Err(Error::NormViolation { row, norm });
                }
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.values.chunks_exact(self.dim)
    }

    /// L2-normalizes every row. Fails on an all-zero row.
    pub fn normalize_rows(&self) -> Result<Self> {
        let mut values = Vec::with_capacity(self.values.len());
        for r in self.iter_rows() {
            let norm = l2_norm(r);
            if norm == 0.0 {
                return Err(Error::ZeroVector);
            }
            values.extend(r.iter().map(|&v| (f64::from(v) / norm) as f32));
        }
        Self::new(self.rows, self.dim, values, true)
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.dim, values, self.normalized)
    }

    /// Multiplies every entry by `c`. The result is never flagged normalized.
    pub fn scaled(&self, c: f32) -> Result<Self> {
        let values = self.values.iter().map(|v| v * c).collect();
        Self::new(self.rows, self.dim, values, false)
    }
}

pub(crate) fn l2_norm(r: &[f32]) -> f64 {
    r.iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt()
}

/// The JSON half of the on-disk format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixManifest {
    pub version: u32,
    pub role: String,
    pub rows: usize,
    pub dim: usize,
    pub dtype: String,
    pub normalized: bool,
    /// Blob path, relative to the manifest's directory.
    pub blob: String,
    /// Encoder checkpoint identifier, when the producer recorded one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<String>,
}

/// Loads a matrix from a `*.manifest.json` (or a small headerless `*.csv`
/// fixture) and verifies its invariants.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return load_matrix_csv(path);
    }
    load_matrix_with_manifest(path).map(|(m, _)| m)
}

pub fn load_matrix_with_manifest(path: &Path) -> Result<(EmbeddingMatrix, MatrixManifest)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: MatrixManifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    let malformed = |reason: String| Error::MalformedManifest {
        path: path.to_path_buf(),
        reason,
    };
    if manifest.version != FORMAT_VERSION {
        return Err(malformed(format!("unsupported version {}", manifest.version)));
    }
    if manifest.dtype != DTYPE {
        return Err(malformed(format!("unsupported dtype {:?}", manifest.dtype)));
    }
    let blob_path = resolve(path, &manifest.blob);
    let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let expected = manifest.rows * manifest.dim * 4;
    if bytes.len() != expected {
        return Err(Error::ShapeMismatch {
            path: blob_path,
            rows: manifest.rows,
            dim: manifest.dim,
            expected,
            actual: bytes.len(),
        });
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let m = EmbeddingMatrix::new(manifest.rows, manifest.dim, values, manifest.normalized)?;
    Ok((m, manifest))
}

fn load_matrix_csv(path: &Path) -> Result<EmbeddingMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i as u64 + 1;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f32>().map_err(|_| Error::MalformedRow {
                    line,
                    reason: format!("not a number: {f:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
        if rows.len() > CSV_ROW_LIMIT {
            return Err(Error::FixtureTooLarge {
                rows: rows.len(),
                limit: CSV_ROW_LIMIT,
            });
        }
    }
    EmbeddingMatrix::from_rows(&rows, false)
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::MalformedRow {
            line,
            reason: format!("{other:?}"),
        },
    }
}

/// Writes `matrix` with the generic role tag. See [`save_matrix_as`].
pub fn save_matrix(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<PathBuf> {
    save_matrix_as(matrix, path, "embedding", None)
}

/// Writes the manifest and blob. `path` is either the manifest path
/// (`name.manifest.json`) or a stem to which that suffix is appended; the
/// blob goes next to it as `name.f32`. Returns the manifest path.
pub fn save_matrix_as(
    matrix: &EmbeddingMatrix,
    path: impl AsRef<Path>,
    role: &str,
    encoder: Option<&str>,
) -> Result<PathBuf> {
    let (manifest_path, blob_path) = artifact_paths(path.as_ref());
    let mut bytes = Vec::with_capacity(matrix.values.len() * 4);
    for v in &matrix.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&blob_path, &bytes).map_err(|e| Error::io(&blob_path, e))?;
    let manifest = MatrixManifest {
        version: FORMAT_VERSION,
        role: role.to_owned(),
        rows: matrix.rows,
        dim: matrix.dim,
        dtype: DTYPE.to_owned(),
        normalized: matrix.normalized,
        blob: blob_path
            .file_name()
            .expect("blob path has a file name")
            .to_string_lossy()
            .into_owned(),
        encoder: encoder.map(str::to_owned),
    };
    write_json(&manifest_path, &manifest)?;
    Ok(manifest_path)
}

fn artifact_paths(path: &Path) -> (PathBuf, PathBuf) {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = name.strip_suffix(".manifest.json").unwrap_or(&name).to_owned();
    let dir = path.parent().unwrap_or_else(|| Path::new(""));
    (
        dir.join(format!("{stem}.manifest.json")),
        dir.join(format!("{stem}.f32")),
    )
}

/// Resolves `rel` against the directory holding `anchor`.
pub(crate) fn resolve(anchor: &Path, rel: &str) -> PathBuf {
    let rel = Path::new(rel);
    if rel.is_absolute() {
        rel.to_path_buf()
    } else {
        anchor.parent().unwrap_or_else(|| Path::new("")).join(rel)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}
