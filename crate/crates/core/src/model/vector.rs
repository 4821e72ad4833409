use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on ‖v‖₂ for a vector flagged as normalized.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VectorError {
    #[error("cannot normalize a zero-norm vector")]
    ZeroNorm,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("vector is not unit-norm (norm = {norm})")]
    NotUnitNorm { norm: f64 },
    #[error("vector contains non-finite values")]
    NonFinite,
}

/// Fixed-length f32 vector with a flag recording whether it was L2-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseVector {
    values: Vec<f32>,
    normalized: bool,
}

impl DenseVector {
    pub fn new(values: Vec<f32>) -> Self {
        Self {
            values,
            normalized: false,
        }
    }

    /// Wraps values that the caller asserts are already unit-norm. The
    /// assertion is checked.
    pub fn unit(values: Vec<f32>) -> Result<Self, VectorError> {
        let norm = l2_norm(&values);
        if !norm.is_finite() {
            return Err(VectorError::NonFinite);
        }
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(VectorError::NotUnitNorm { norm });
        }
        Ok(Self {
            values,
            normalized: true,
        })
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

impl From<Vec<f32>> for DenseVector {
    fn from(values: Vec<f32>) -> Self {
        Self::new(values)
    }
}

/// ‖v‖₂ accumulated in f64.
pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// Dot product accumulated in f32; the hot path for index distance evaluation.
#[inline]
pub fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        sum += a[i] * b[i];
    }
    sum
}

pub fn l2_normalize(v: &DenseVector) -> Result<DenseVector, VectorError> {
    normalize_slice(&v.values).map(|values| DenseVector {
        values,
        normalized: true,
    })
}

pub fn normalize_slice(v: &[f32]) -> Result<Vec<f32>, VectorError> {
    let norm = l2_norm(v);
    if !norm.is_finite() {
        return Err(VectorError::NonFinite);
    }
    if norm == 0.0 {
        return Err(VectorError::ZeroNorm);
    }
    Ok(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

/// Cosine similarity, clamped to [-1, 1]. Reduces to the dot product when both
/// inputs carry the normalized flag.
pub fn cosine(a: &DenseVector, b: &DenseVector) -> Result<f64, VectorError> {
    if a.dim() != b.dim() {
        return Err(VectorError::DimMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    if a.normalized && b.normalized {
        return Ok(dot(&a.values, &b.values).clamp(-1.0, 1.0));
    }
    cosine_slices(&a.values, &b.values)
}

pub fn cosine_slices(a: &[f32], b: &[f32]) -> Result<f64, VectorError> {
    if a.len() != b.len() {
        return Err(VectorError::DimMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(VectorError::ZeroNorm);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}
