use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::matrix::{load_matrix, read_json, resolve, save_matrix_as, write_json, EmbeddingMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenEntry {
    pub text: String,
    /// 0 is the rarest token.
    pub rank: usize,
}

/// Frequency-ranked tokens with one embedding row per entry. Rows may be
/// stored in any order; `rank` is what orders them.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenVocabulary {
    entries: Vec<TokenEntry>,
    embeddings: EmbeddingMatrix,
}

impl TokenVocabulary {
    pub fn new(entries: Vec<TokenEntry>, embeddings: EmbeddingMatrix) -> Result<Self> {
        if entries.len() != embeddings.rows() {
            return Err(Error::InvalidVocabulary(format!(
                "{} entries but {} embedding rows",
                entries.len(),
                embeddings.rows()
            )));
        }
        let mut seen_rank = vec![false; entries.len()];
        let mut seen_text = HashSet::new();
        for e in &entries {
            if e.text.is_empty() || e.text.contains(char::is_whitespace) {
                return Err(Error::InvalidVocabulary(format!(
                    "token {:?} must be a single non-empty word",
                    e.text
                )));
            }
            if e.rank >= entries.len() || std::mem::replace(&mut seen_rank[e.rank], true) {
                return Err(Error::InvalidVocabulary(format!(
                    "ranks must be a permutation of 0..{} (offending rank {})",
                    entries.len(),
                    e.rank
                )));
            }
            if !seen_text.insert(e.text.as_str()) {
                return Err(Error::InvalidVocabulary(format!("duplicate token {:?}", e.text)));
            }
        }
        Ok(Self {
            entries,
            embeddings,
        })
    }

    /// Tokens given in rank order (rarest first).
    pub fn from_ranked<S: Into<String>>(tokens: impl IntoIterator<Item = S>, embeddings: EmbeddingMatrix) -> Result<Self> {
        let entries = tokens
            .into_iter()
            .enumerate()
            .map(|(rank, t)| TokenEntry {
                text: t.into(),
                rank,
            })
            .collect();
        Self::new(entries, embeddings)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TokenEntry] {
        &self.entries
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn embedding(&self, row: usize) -> &[f32] {
        self.embeddings.row(row)
    }

    /// Row indices sorted by ascending rank.
    pub fn rows_by_rank(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = (0..self.entries.len()).collect();
        rows.sort_by_key(|&r| self.entries[r].rank);
        rows
    }

    pub fn rarest(&self) -> &TokenEntry {
        self.entries
            .iter()
            .find(|e| e.rank == 0)
            .expect("vocabulary invariants guarantee a rank-0 entry")
    }

    pub fn contains(&self, token: &str) -> bool {
        self.entries.iter().any(|e| e.text == token)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    tokens: Vec<TokenEntry>,
    /// Manifest path, relative to the vocabulary file.
    embeddings: String,
}

/// Reads `{version, tokens: [{text, rank}], embeddings: "x.manifest.json"}`.
pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<TokenVocabulary> {
    let path = path.as_ref();
    let file: VocabFile = read_json(path)?;
    if file.version != 1 {
        return Err(Error::InvalidVocabulary(format!("unsupported version {}", file.version)));
    }
    let embeddings = load_matrix(resolve(path, &file.embeddings))?;
    TokenVocabulary::new(file.tokens, embeddings)
}

/// Writes the vocabulary file and its embedding matrix next to it
/// (`<stem>.embeddings.manifest.json`).
pub fn save_vocabulary(vocab: &TokenVocabulary, path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "vocab".into());
    let dir = path.parent().unwrap_or_else(|| Path::new(""));
    let manifest = save_matrix_as(
        &vocab.embeddings,
        dir.join(format!("{stem}.embeddings")),
        "token",
        None,
    )?;
    let file = VocabFile {
        version: 1,
        tokens: vocab.entries.clone(),
        embeddings: manifest
            .file_name()
            .expect("manifest has a file name")
            .to_string_lossy()
            .into_owned(),
    };
    write_json(path, &file)?;
    Ok(path.to_path_buf())
}
