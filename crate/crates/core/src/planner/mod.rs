//! Training token assignment.
//!
//! The rarest vocabulary token becomes the shared style token. Each
//! character then gets its own specific token, either the next rarest ones
//! ([`select_rarest`]) or one representative per cluster of the token
//! embedding space ([`select_clustered`]). Training prompts read
//! `"{specific} {shared} {class}"`.

mod kmeans;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use kmeans::{kmeans_spherical, ClusteringResult, KMeansParams, DEFAULT_MAX_ITER, DEFAULT_RESTARTS};

use crate::error::{Error, Result};
use crate::store::{read_json, write_json, EmbeddingMatrix, TokenVocabulary};

pub const DEFAULT_CLASS: &str = "style";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Rarest,
    Clustered,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rarest" => Ok(Strategy::Rarest),
            "clustered" => Ok(Strategy::Clustered),
            _ => Err(Error::InvalidArgument(format!("unknown strategy {s:?}"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Rarest => "rarest",
            Strategy::Clustered => "clustered",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPlan {
    pub shared_id: String,
    /// One token per character, in dataset order.
    pub specific_ids: Vec<String>,
    #[serde(rename = "class")]
    pub class_descriptor: String,
    pub strategy: Strategy,
    pub seed: u64,
    /// Vocabulary the plan was drawn from, if recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<String>,
}

impl TokenPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.shared_id.is_empty() || self.shared_id.contains(char::is_whitespace) {
            return bad(format!("shared_id {:?} must be a single non-empty token", self.shared_id));
        }
        if self.class_descriptor.is_empty() {
            return bad("class descriptor is empty".into());
        }
        let mut seen = HashSet::new();
        for s in &self.specific_ids {
            if s.is_empty() || *s == self.shared_id || !seen.insert(s) {
                return bad(format!("specific id {s:?} is empty, repeated or equal to the shared id"));
            }
        }
        Ok(())
    }

    /// Tokens a generation-time sampler must not reuse.
    pub fn assigned_tokens(&self) -> HashSet<String> {
        std::iter::once(self.shared_id.clone())
            .chain(self.specific_ids.iter().cloned())
            .collect()
    }
}

pub fn load_plan(path: impl AsRef<Path>) -> Result<TokenPlan> {
    let plan: TokenPlan = read_json(path.as_ref())?;
    plan.validate()?;
    Ok(plan)
}

pub fn save_plan(plan: &TokenPlan, path: impl AsRef<Path>) -> Result<()> {
    write_json(path.as_ref(), plan)
}

/// Shared token = rank 0, specific tokens = ranks `1..=n_characters`.
pub fn select_rarest(vocab: &TokenVocabulary, n_characters: usize) -> Result<TokenPlan> {
    if vocab.len() < n_characters + 1 {
        return Err(Error::VocabularyTooSmall {
            entries: vocab.len(),
            needed: n_characters + 1,
        });
    }
    let by_rank = vocab.rows_by_rank();
    let text = |row: usize| vocab.entries()[row].text.clone();
    Ok(TokenPlan {
        shared_id: text(by_rank[0]),
        specific_ids: by_rank[1..=n_characters].iter().map(|&r| text(r)).collect(),
        class_descriptor: DEFAULT_CLASS.to_owned(),
        strategy: Strategy::Rarest,
        seed: 0,
        vocab: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusteredOptions {
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    /// Cluster only the `pool_size` rarest tokens after the shared one.
    /// `None` pools the whole vocabulary.
    pub pool_size: Option<usize>,
}

impl ClusteredOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            restarts: DEFAULT_RESTARTS,
            max_iter: DEFAULT_MAX_ITER,
            pool_size: None,
        }
    }
}

pub fn select_clustered(vocab: &TokenVocabulary, n_characters: usize, seed: u64) -> Result<TokenPlan> {
    select_clustered_with(vocab, n_characters, ClusteredOptions::new(seed)).map(|(plan, _)| plan)
}

/// Clusters the candidate pool into `n_characters` groups and takes the
/// member closest to each centroid (ties to the lower rank). Clusters are
/// handed to characters by ascending minimum member rank.
///
/// The pool is ordered by rank before clustering, so the result does not
/// depend on the order in which vocabulary rows are stored.
pub fn select_clustered_with(
    vocab: &TokenVocabulary,
    n_characters: usize,
    opts: ClusteredOptions,
) -> Result<(TokenPlan, Option<ClusteringResult>)> {
    let by_rank = vocab.rows_by_rank();
    let available = by_rank.len() - 1;
    let pool_len = opts.pool_size.map_or(available, |p| p.min(available));
    if pool_len < n_characters {
        return Err(Error::VocabularyTooSmall {
            entries: pool_len + 1,
            needed: n_characters + 1,
        });
    }
    let text = |row: usize| vocab.entries()[row].text.clone();
    let mut plan = TokenPlan {
        shared_id: text(by_rank[0]),
        specific_ids: Vec::new(),
        class_descriptor: DEFAULT_CLASS.to_owned(),
        strategy: Strategy::Clustered,
        seed: opts.seed,
        vocab: None,
    };
    if n_characters == 0 {
        return Ok((plan, None));
    }

    let pool = &by_rank[1..=pool_len];
    let x = vocab.embeddings().select_rows(pool)?;
    let x = EmbeddingMatrix::new(x.rows(), x.dim(), x.values().to_vec(), false)?.normalize_rows()?;
    let clustering = kmeans_spherical(
        &x,
        KMeansParams {
            k: n_characters,
            restarts: opts.restarts,
            max_iter: opts.max_iter,
            seed: opts.seed,
        },
    )?;

    // pool index == rank order, so "lowest index" means "lowest rank"
    let mut picks: Vec<(usize, usize)> = Vec::with_capacity(n_characters);
    for (c, centroid) in clustering.centroids.iter().enumerate() {
        let mut min_member = usize::MAX;
        let mut best: Option<(usize, f64)> = None;
        for (i, _) in clustering.assignments.iter().enumerate().filter(|(_, &a)| a == c) {
            min_member = min_member.min(i);
            let row: Vec<f64> = x.row(i).iter().map(|&v| f64::from(v)).collect();
            let sim = kmeans::dot(&row, centroid);
            if best.is_none_or(|(_, s)| sim > s) {
                best = Some((i, sim));
            }
        }
        let (closest, _) = best.expect("clusters are non-empty");
        picks.push((min_member, closest));
    }
    picks.sort_unstable();
    plan.specific_ids = picks.into_iter().map(|(_, i)| text(pool[i])).collect();
    Ok((plan, Some(clustering)))
}

pub fn render_training_prompts(plan: &TokenPlan, character_ids: &[impl AsRef<str>]) -> Result<Vec<String>> {
    if character_ids.len() != plan.specific_ids.len() {
        return Err(Error::LengthMismatch {
            expected: plan.specific_ids.len(),
            actual: character_ids.len(),
        });
    }
    Ok(plan
        .specific_ids
        .iter()
        .map(|s| format!("{s} {} {}", plan.shared_id, plan.class_descriptor))
        .collect())
}
