//! Generation identities: unused vocabulary tokens, or raw embeddings drawn
//! from Gaussians fitted to the rare-token embeddings.
//!
//! Every sampler is a pure function of `(inputs, seed, sample_index)`. The
//! random stream for a sample is [`crate::rng::stream`]`(seed, sample_index)`,
//! and both embedding samplers consume it identically (one standard normal
//! per dimension, in order). With a diagonal covariance the multivariate
//! sampler therefore reproduces the univariate one exactly.

mod cholesky;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::store::TokenVocabulary;

/// Jitter values tried, in order, until `Σ + λI` factors.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-8, 1e-6, 1e-4];

/// Population moments of a set of token embeddings plus a Cholesky factor
/// of the jittered covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStats {
    pub dim: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Row-major `dim x dim`.
    pub covariance: Vec<f64>,
    /// Row-major lower triangle `L` with `L Lᵀ = Σ + λI`.
    pub cholesky: Vec<f64>,
    /// The jitter `λ` that made the factorization succeed.
    pub shrinkage: f64,
    pub source_rows: usize,
    /// Mean Euclidean norm of the source embeddings.
    pub typical_norm: f64,
}

impl EmbeddingStats {
    pub fn covariance_at(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.dim + j]
    }

    /// `L Lᵀ`, row-major.
    pub fn reconstructed(&self) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..=j).map(|k| self.cholesky[i * n + k] * self.cholesky[j * n + k]).sum();
                out[i * n + j] = s;
                out[j * n + i] = s;
            }
        }
        out
    }
}

/// Fits mean, per-dimension standard deviation and covariance (all with
/// the `1/n` population denominator) over the vocabulary minus `exclude`.
pub fn fit_embedding_stats(vocab: &TokenVocabulary, exclude: &HashSet<String>) -> Result<EmbeddingStats> {
    let rows: Vec<Vec<f64>> = vocab
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| !exclude.contains(&e.text))
        .map(|(i, _)| vocab.embedding(i).iter().map(|&v| f64::from(v)).collect())
        .collect();
    if rows.len() < 2 {
        return Err(Error::TooFewSamples {
            available: rows.len(),
            required: 2,
        });
    }
    let n = rows.len() as f64;
    let dim = rows[0].len();

    let mean: Vec<f64> = (0..dim)
        .map(|d| {
            let first = rows[0][d];
            if rows.iter().all(|r| r[d] == first) {
                first
            } else {
                rows.iter().map(|r| r[d]).sum::<f64>() / n
            }
        })
        .collect();
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let mut covariance = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in i..dim {
            let s = centered.iter().map(|c| c[i] * c[j]).sum::<f64>() / n;
            covariance[i * dim + j] = s;
            covariance[j * dim + i] = s;
        }
    }
    let std: Vec<f64> = (0..dim).map(|i| covariance[i * dim + i].sqrt()).collect();

    let mut tried = Vec::new();
    for &lambda in &JITTER_LADDER {
        tried.push(lambda);
        let mut jittered = covariance.clone();
        for i in 0..dim {
            jittered[i * dim + i] += lambda;
        }
        if let Some(l) = cholesky::cholesky(&jittered, dim) {
            let typical_norm = rows.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).sum::<f64>() / n;
            return Ok(EmbeddingStats {
                dim,
                mean,
                std,
                covariance,
                cholesky: l,
                shrinkage: lambda,
                source_rows: rows.len(),
                typical_norm,
            });
        }
    }
    Err(Error::FactorizationFailure { tried })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadKind {
    Token,
    Embedding,
}

/// One generation identity: either a token or a raw embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityPayload {
    pub kind: PayloadKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f64>>,
    pub sample_index: u64,
    pub seed: u64,
}

impl IdentityPayload {
    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            PayloadKind::Token => self.token_text.is_some() && self.vector.is_none(),
            PayloadKind::Embedding => self.token_text.is_none() && self.vector.is_some(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "payload {} must carry exactly the field matching its kind",
                self.sample_index
            )))
        }
    }

    /// Rescales an embedding payload to the given Euclidean norm.
    pub fn renormalized(mut self, target_norm: f64) -> Self {
        if let Some(v) = self.vector.as_mut() {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x *= target_norm / norm);
            }
        }
        self
    }
}

/// Uniform draw from the vocabulary minus `exclude`. The pool is ordered by
/// rank so the result does not depend on row storage order.
pub fn sample_token(
    vocab: &TokenVocabulary,
    exclude: &HashSet<String>,
    seed: u64,
    sample_index: u64,
) -> Result<IdentityPayload> {
    let pool: Vec<&str> = vocab
        .rows_by_rank()
        .into_iter()
        .map(|r| vocab.entries()[r].text.as_str())
        .filter(|t| !exclude.contains(*t))
        .collect();
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut rng = rng::stream(seed, sample_index);
    let pick = pool[rng.random_range(0..pool.len())];
    Ok(IdentityPayload {
        kind: PayloadKind::Token,
        token_text: Some(pick.to_owned()),
        vector: None,
        sample_index,
        seed,
    })
}

fn standard_normals(dim: usize, seed: u64, sample_index: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, sample_index);
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn embedding_payload(vector: Vec<f64>, seed: u64, sample_index: u64) -> IdentityPayload {
    IdentityPayload {
        kind: PayloadKind::Embedding,
        token_text: None,
        vector: Some(vector),
        sample_index,
        seed,
    }
}

/// `v_i = μ_i + σ_i z_i` with independent standard normals.
pub fn sample_univariate(stats: &EmbeddingStats, seed: u64, sample_index: u64) -> IdentityPayload {
    let z = standard_normals(stats.dim, seed, sample_index);
    let v = (0..stats.dim).map(|i| stats.mean[i] + stats.std[i] * z[i]).collect();
    embedding_payload(v, seed, sample_index)
}

/// `v = μ + L z`. Dimensions whose fitted variance is exactly zero are held
/// at the mean, so jitter never adds noise along a constant direction.
pub fn sample_multivariate(stats: &EmbeddingStats, seed: u64, sample_index: u64) -> IdentityPayload {
    let n = stats.dim;
    let z = standard_normals(n, seed, sample_index);
    let v = (0..n)
        .map(|i| {
            if stats.std[i] == 0.0 {
                return stats.mean[i];
            }
            let row = &stats.cholesky[i * n..i * n + i + 1];
            stats.mean[i] + row.iter().zip(&z).map(|(l, z)| l * z).sum::<f64>()
        })
        .collect();
    embedding_payload(v, seed, sample_index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Token,
    Univar,
    Multivar,
}

impl FromStr for SampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token" => Ok(SampleMode::Token),
            "univar" => Ok(SampleMode::Univar),
            "multivar" => Ok(SampleMode::Multivar),
            _ => Err(Error::InvalidArgument(format!("unknown sampling mode {s:?}"))),
        }
    }
}

impl fmt::Display for SampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleMode::Token => "token",
            SampleMode::Univar => "univar",
            SampleMode::Multivar => "multivar",
        })
    }
}

/// `count` identities with indices `start..start + count`. Produced in
/// parallel; the output is identical to a sequential loop.
pub fn sample_batch(
    vocab: &TokenVocabulary,
    exclude: &HashSet<String>,
    mode: SampleMode,
    seed: u64,
    start: u64,
    count: u64,
) -> Result<Vec<IdentityPayload>> {
    let indices = start..start + count;
    match mode {
        SampleMode::Token => indices
            .into_par_iter()
            .map(|i| sample_token(vocab, exclude, seed, i))
            .collect(),
        SampleMode::Univar | SampleMode::Multivar => {
            let stats = fit_embedding_stats(vocab, exclude)?;
            let draw = if mode == SampleMode::Univar {
                sample_univariate
            } else {
                sample_multivariate
            };
            Ok(indices.into_par_iter().map(|i| draw(&stats, seed, i)).collect())
        }
    }
}

/// What an external generator needs to render one identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PromptDescriptor {
    /// A literal prompt, `"{token} {shared_id} style"`.
    Text { prompt: String },
    /// Inject `injected_vector` at token position `injection_slot`, followed
    /// by the text `suffix`.
    Injected {
        injected_vector: Vec<f64>,
        suffix: String,
        injection_slot: usize,
    },
}

pub fn render_generation_prompt(payload: &IdentityPayload, shared_id: &str) -> Result<PromptDescriptor> {
    payload.validate()?;
    if shared_id.is_empty() {
        return Err(Error::InvalidArgument("shared_id is empty".into()));
    }
    let suffix = format!("{shared_id} style");
    Ok(match payload.kind {
        PayloadKind::Token => PromptDescriptor::Text {
            prompt: format!("{} {suffix}", payload.token_text.as_deref().expect("validated")),
        },
        PayloadKind::Embedding => PromptDescriptor::Injected {
            injected_vector: payload.vector.clone().expect("validated"),
            suffix,
            injection_slot: 0,
        },
    })
}
