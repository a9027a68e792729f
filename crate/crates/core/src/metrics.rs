//! Fidelity and Diversity of generated image sets, and the per-image
//! similarity primitives the validity filter builds on.
//!
//! Fidelity is the mean clamped cosine over every (generated, reference)
//! pair:
//!
//! ```text
//! Fidelity(V, D) = 1/(n m) · Σᵢ Σⱼ max(cos(vᵢ, dⱼ), 0)
//! ```
//!
//! Diversity is the geometric mean of the per-dimension population standard
//! deviations of the generated embeddings:
//!
//! ```text
//! Diversity(V) = (Π σᵢ)^(1/H)
//! ```
//!
//! All reductions run in a fixed order with compensated summation, so the
//! results are bit-stable run to run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::neumaier_sum;
use crate::store::EmbeddingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSpace {
    StyleAdapted,
    ClipIdentity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub n_generated: usize,
    /// Zero for Diversity, which has no reference set.
    pub m_reference: usize,
    pub space: EmbeddingSpace,
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

fn check_pair(v: &EmbeddingMatrix, d: &EmbeddingMatrix) -> Result<()> {
    if v.dim() != d.dim() {
        return Err(Error::DimMismatch {
            left: v.dim(),
            right: d.dim(),
        });
    }
    if !v.is_normalized() || !d.is_normalized() {
        return Err(Error::NotNormalized);
    }
    Ok(())
}

/// Cosine of unit rows; both sides are renormalized in f64 so that f32
/// rounding cannot push the value outside `[-1, 1]`.
fn unit_rows(m: &EmbeddingMatrix) -> Vec<Vec<f64>> {
    m.iter_rows()
        .map(|r| {
            let r = to_f64(r);
            let n = norm(&r);
            r.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

fn clamped_cos(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0).max(0.0)
}

/// Both operands must be row-normalized and share a dimension.
pub fn fidelity(generated: &EmbeddingMatrix, reference: &EmbeddingMatrix, space: EmbeddingSpace) -> Result<MetricValue> {
    check_pair(generated, reference)?;
    let v = unit_rows(generated);
    let d = unit_rows(reference);
    let terms: Vec<f64> = v
        .iter()
        .flat_map(|vi| d.iter().map(move |dj| clamped_cos(vi, dj)))
        .collect();
    let n = v.len();
    let m = d.len();
    Ok(MetricValue {
        value: neumaier_sum(&terms) / (n * m) as f64,
        n_generated: n,
        m_reference: m,
        space,
    })
}

/// Fidelity of a single image against every reference.
pub fn per_image_fidelity(v: &[f32], reference: &EmbeddingMatrix) -> Result<f64> {
    if v.len() != reference.dim() {
        return Err(Error::DimMismatch {
            left: v.len(),
            right: reference.dim(),
        });
    }
    if !reference.is_normalized() {
        return Err(Error::NotNormalized);
    }
    let v = to_f64(v);
    let nv = norm(&v);
    if nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let v: Vec<f64> = v.into_iter().map(|x| x / nv).collect();
    let terms: Vec<f64> = unit_rows(reference).iter().map(|d| clamped_cos(&v, d)).collect();
    Ok(neumaier_sum(&terms) / terms.len() as f64)
}

/// Highest unclamped cosine against the references and its row index
/// (ties to the lowest index).
pub fn nearest_reference_similarity(v: &[f32], reference: &EmbeddingMatrix) -> Result<(f64, usize)> {
    if v.len() != reference.dim() {
        return Err(Error::DimMismatch {
            left: v.len(),
            right: reference.dim(),
        });
    }
    let v = to_f64(v);
    let mut best: Option<(f64, usize)> = None;
    for (j, d) in reference.iter_rows().enumerate() {
        let c = cosine(&v, &to_f64(d))?;
        if best.is_none_or(|(b, _)| c > b) {
            best = Some((c, j));
        }
    }
    best.ok_or(Error::EmptySet)
}

/// Population standard deviation of every column. Constant columns are
/// exactly zero.
pub fn column_std(m: &EmbeddingMatrix) -> Vec<f64> {
    let n = m.rows() as f64;
    (0..m.dim())
        .map(|c| {
            let col: Vec<f64> = m.iter_rows().map(|r| f64::from(r[c])).collect();
            if col.iter().all(|&x| x == col[0]) {
                return 0.0;
            }
            let mean = neumaier_sum(&col) / n;
            let sq: Vec<f64> = col.iter().map(|x| (x - mean) * (x - mean)).collect();
            (neumaier_sum(&sq) / n).sqrt()
        })
        .collect()
}

/// Geometric mean of the column standard deviations, computed in log space.
/// Any zero-variance dimension makes the result exactly zero.
pub fn diversity(generated: &EmbeddingMatrix, space: EmbeddingSpace) -> MetricValue {
    let sigma = column_std(generated);
    let value = if sigma.contains(&0.0) {
        0.0
    } else {
        let logs: Vec<f64> = sigma.iter().map(|s| s.ln()).collect();
        (neumaier_sum(&logs) / sigma.len() as f64).exp()
    };
    MetricValue {
        value,
        n_generated: generated.rows(),
        m_reference: 0,
        space,
    }
}
