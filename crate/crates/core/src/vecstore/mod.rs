//! Embedding vectors and matrices.
//!
//! Every embedding that enters the engine is L2-normalized at ingestion so
//! that cosine similarity reduces to a dot product. Values are stored as
//! `f32`; reductions accumulate in `f64`.

mod format;
mod provider;

pub use format::{load_matrix, read_matrix, read_vocab, save_matrix, write_matrix, write_vocab};
pub use provider::{fetch_embeddings, Embedder, HttpProvider, ProviderConfig, ProviderError, TEXT_PLACEHOLDER};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norm tolerance for vectors flagged as normalized.
pub const NORM_TOLERANCE: f64 = 1e-5;

/// Norms below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum VecError {
    #[error("vector has zero norm")]
    ZeroNorm,
    #[error("vector contains non-finite component at position {0}")]
    NonFinite(usize),
    #[error("empty vector")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {version} (dtype {dtype})")]
    UnsupportedVersion { version: u8, dtype: u8 },
    #[error("truncated file: expected {expected} bytes, found {actual}")]
    TruncatedFile { expected: u64, actual: u64 },
    #[error("header declares {expected} payload bytes but file holds {actual}")]
    DimMismatch { expected: u64, actual: u64 },
    #[error("vocabulary entry {0} contains a line break")]
    InvalidVocabEntry(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dot product with four interleaved `f64` accumulators.
///
/// The summation order is fixed, so equal inputs always produce bit-equal
/// scores regardless of the caller.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] as f64 * b[i] as f64;
        acc[1] += a[i + 1] as f64 * b[i + 1] as f64;
        acc[2] += a[i + 2] as f64 * b[i + 2] as f64;
        acc[3] += a[i + 3] as f64 * b[i + 3] as f64;
    }
    for i in chunks * 4..a.len() {
        acc[i % 4] += a[i] as f64 * b[i] as f64;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

pub fn l2_norm(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}

fn check_finite(values: &[f32]) -> Result<(), VecError> {
    match values.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(VecError::NonFinite(i)),
        None => Ok(()),
    }
}

/// A single embedding, optionally flagged as unit-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f32>,
    normalized: bool,
}

impl EmbeddingVector {
    /// Wraps raw values without normalizing them.
    pub fn new(values: Vec<f32>) -> Result<Self, VecError> {
        if values.is_empty() {
            return Err(VecError::Empty);
        }
        check_finite(&values)?;
        Ok(Self {
            values,
            normalized: false,
        })
    }

    /// Wraps values the caller guarantees to be finite. The normalized flag is
    /// set only when the norm is within tolerance of one.
    pub(crate) fn from_raw(values: Vec<f32>) -> Self {
        let normalized = (l2_norm(&values) - 1.0).abs() <= NORM_TOLERANCE;
        Self { values, normalized }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            normalized: false,
        }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

/// Scales `v` to unit L2 norm.
pub fn normalize(v: &[f32]) -> Result<EmbeddingVector, VecError> {
    if v.is_empty() {
        return Err(VecError::Empty);
    }
    check_finite(v)?;
    let norm = l2_norm(v);
    if norm < ZERO_NORM {
        return Err(VecError::ZeroNorm);
    }
    let values = v.iter().map(|&x| (x as f64 / norm) as f32).collect();
    Ok(EmbeddingVector {
        values,
        normalized: true,
    })
}

/// Cosine similarity. Reduces to a plain dot product when both inputs are
/// flagged normalized. A zero vector has cosine 0 with everything.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, VecError> {
    if a.dim() != b.dim() {
        return Err(VecError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    if a.normalized && b.normalized {
        return Ok(dot(&a.values, &b.values));
    }
    Ok(cosine_slices(&a.values, &b.values))
}

/// Cosine similarity of two equal-length slices without any normalization
/// assumption.
pub fn cosine_slices(a: &[f32], b: &[f32]) -> f64 {
    // one square root keeps cosine(v, v) at exactly 1
    let denom = (dot(a, a) * dot(b, b)).sqrt();
    if denom < ZERO_NORM {
        return 0.0;
    }
    dot(a, b) / denom
}

/// Dense row-major matrix of `count` embeddings of dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    count: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, data: Vec<f32>, normalized: bool) -> Result<Self, VecError> {
        if dim == 0 {
            return Err(VecError::Empty);
        }
        if data.len() % dim != 0 {
            return Err(VecError::DimensionMismatch {
                expected: dim,
                actual: data.len() % dim,
            });
        }
        check_finite(&data)?;
        let m = Self {
            dim,
            count: data.len() / dim,
            data,
            normalized,
        };
        if normalized {
            for i in 0..m.count {
                let n = l2_norm(m.row(i));
                if (n - 1.0).abs() > NORM_TOLERANCE {
                    return Err(VecError::ZeroNorm);
                }
            }
        }
        Ok(m)
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            count: 0,
            data: Vec::new(),
            normalized: true,
        }
    }

    /// Normalizes every row of `rows`.
    pub fn from_rows_normalized<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self, VecError> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(VecError::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(normalize(row)?.values());
        }
        Ok(Self {
            dim,
            count: rows.len(),
            data,
            normalized: true,
        })
    }

    /// Copies the selected rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            count: indices.len(),
            data,
            normalized: self.normalized,
        }
    }

    /// Returns a copy with every row scaled to unit norm.
    pub fn normalized(&self) -> Result<Self, VecError> {
        let rows: Vec<&[f32]> = self.rows().collect();
        Self::from_rows_normalized(self.dim, &rows)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_vector(&self, i: usize) -> EmbeddingVector {
        EmbeddingVector {
            values: self.row(i).to_vec(),
            normalized: self.normalized,
        }
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Appends `other`'s rows. The normalized flag survives only if both were
    /// normalized.
    pub fn append(&mut self, other: &EmbeddingMatrix) -> Result<(), VecError> {
        if other.dim != self.dim {
            return Err(VecError::DimensionMismatch {
                expected: self.dim,
                actual: other.dim,
            });
        }
        self.data.extend_from_slice(&other.data);
        self.count += other.count;
        self.normalized &= other.normalized;
        Ok(())
    }

    /// Mean of all rows, accumulated in `f64`.
    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0f64; self.dim];
        for row in self.rows() {
            for (acc, &x) in c.iter_mut().zip(row) {
                *acc += x as f64;
            }
        }
        if self.count > 0 {
            let n = self.count as f64;
            c.iter_mut().for_each(|x| *x /= n);
        }
        c
    }
}
