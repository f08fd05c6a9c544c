//! Dense numeric primitives used by every other module: row-major matrices,
//! RMS/z-score normalization, softmax, and deterministic top-k selection.
//!
//! Everything here is a pure function over immutable inputs.

use crate::error::{Error, Result};

/// Scalar type used throughout the crate. Defaults to `f64`; the `f32`
/// feature switches all accumulation to single precision.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

/// Epsilon used when z-score normalizing target values.
pub const ZSCORE_EPS: Real = 1e-5;

/// Epsilon used by RMS normalization layers.
pub const RMS_EPS: Real = 1e-5;

pub(crate) fn ensure_finite(context: &'static str, values: &[Real]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite value in {context}")))
    }
}

/// Dense row-major matrix of `Real`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<Real>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from a row-major buffer. Rejects length mismatches and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<Real>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("Matrix::from_vec", rows * cols, data.len()));
        }
        ensure_finite("Matrix::from_vec", &data)?;
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[Real] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [Real] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn frobenius_norm(&self) -> Real {
        self.data.iter().map(|v| v * v).sum::<Real>().sqrt()
    }
}

/// Inner product of two equal-length slices.
pub fn dot(a: &[Real], b: &[Real]) -> Real {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Squared Euclidean distance between two equal-length slices.
pub fn squared_distance(a: &[Real], b: &[Real]) -> Real {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// RMS normalization with a learned gain:
/// `out_i = gain_i * x_i / sqrt(mean(x^2) + eps)`.
pub fn rms_norm(x: &[Real], gain: &[Real], eps: Real) -> Result<Vec<Real>> {
    if x.len() != gain.len() {
        return Err(Error::dim("rms_norm", x.len(), gain.len()));
    }
    if x.is_empty() {
        return Err(Error::dim("rms_norm", 1, 0));
    }
    let mean_sq = x.iter().map(|v| v * v).sum::<Real>() / x.len() as Real;
    let denom = (mean_sq + eps).sqrt();
    Ok(x.iter().zip(gain).map(|(v, g)| g * v / denom).collect())
}

/// Numerically stable softmax; output sums to 1.
pub fn softmax(s: &[Real]) -> Result<Vec<Real>> {
    if s.is_empty() {
        return Err(Error::dim("softmax", 1, 0));
    }
    ensure_finite("softmax", s)?;
    let max = s.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let mut out: Vec<Real> = s.iter().map(|v| (v - max).exp()).collect();
    let sum: Real = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Z-score normalization with the population (divide-by-n) standard
/// deviation: `out = (x - mean) / (std + eps)`. The population convention
/// keeps the length-1 case defined, and `eps` guards zero variance.
pub fn zscore(x: &[Real], eps: Real) -> Result<Vec<Real>> {
    if x.is_empty() {
        return Err(Error::dim("zscore", 1, 0));
    }
    let n = x.len() as Real;
    let mean = x.iter().sum::<Real>() / n;
    let var = x
        .iter()
        .map(|v| {
            let d = v - mean;
            d * d
        })
        .sum::<Real>()
        / n;
    let denom = var.sqrt() + eps;
    Ok(x.iter().map(|v| (v - mean) / denom).collect())
}

/// Indices of the `k` largest entries, ordered by descending score.
/// Ties break toward the lower index so selection is deterministic.
pub fn top_k(s: &[Real], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > s.len() {
        return Err(Error::InvalidArgument(format!(
            "top_k: k={} out of range 1..={}",
            k,
            s.len()
        )));
    }
    ensure_finite("top_k", s)?;
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}
