use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::matrix::{load_matrix, read_json, resolve, save_matrix_as, write_json, EmbeddingMatrix};
use crate::error::{Error, Result};

/// A set of images described by their embeddings in two spaces: the
/// identity space used for copy detection and the style-adapted space used
/// for fidelity. Pixels are only referenced by path.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub image_ids: Vec<String>,
    pub clip_embeddings: Option<EmbeddingMatrix>,
    pub style_embeddings: Option<EmbeddingMatrix>,
    pub pixel_paths: Option<Vec<PathBuf>>,
    /// Per-image subject counts (`image_id,count`), when available.
    pub subject_counts: Option<PathBuf>,
    pub manual_overrides: Option<PathBuf>,
}

impl ImageSet {
    pub fn new(
        image_ids: Vec<String>,
        clip_embeddings: Option<EmbeddingMatrix>,
        style_embeddings: Option<EmbeddingMatrix>,
        pixel_paths: Option<Vec<PathBuf>>,
    ) -> Result<Self> {
        let set = Self {
            image_ids,
            clip_embeddings,
            style_embeddings,
            pixel_paths,
            subject_counts: None,
            manual_overrides: None,
        };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        let n = self.image_ids.len();
        let mut seen = HashSet::new();
        for id in &self.image_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidImageSet(format!("duplicate image id {id:?}")));
            }
        }
        let lens = [
            ("clip", self.clip_embeddings.as_ref().map(EmbeddingMatrix::rows)),
            ("style", self.style_embeddings.as_ref().map(EmbeddingMatrix::rows)),
            ("pixel_paths", self.pixel_paths.as_ref().map(Vec::len)),
        ];
        for (name, len) in lens {
            if let Some(len) = len {
                if len != n {
                    return Err(Error::InvalidImageSet(format!(
                        "{name} has {len} entries for {n} image ids"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }

    pub fn clip(&self) -> Result<&EmbeddingMatrix> {
        self.clip_embeddings
            .as_ref()
            .ok_or(Error::MissingEmbeddingSpace("clip"))
    }

    pub fn style(&self) -> Result<&EmbeddingMatrix> {
        self.style_embeddings
            .as_ref()
            .ok_or(Error::MissingEmbeddingSpace("style"))
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct ImageSetFile {
    version: u32,
    image_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    clip: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    style: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pixel_paths: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subject_counts: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    manual_overrides: Option<String>,
}

/// Reads an image-set description; every path inside is relative to the
/// file itself.
pub fn load_image_set(path: impl AsRef<Path>) -> Result<ImageSet> {
    let path = path.as_ref();
    let file: ImageSetFile = read_json(path)?;
    if file.version != 1 {
        return Err(Error::InvalidImageSet(format!("unsupported version {}", file.version)));
    }
    let load = |p: &Option<String>| -> Result<Option<EmbeddingMatrix>> {
        p.as_ref().map(|p| load_matrix(resolve(path, p))).transpose()
    };
    let mut set = ImageSet::new(
        file.image_ids,
        load(&file.clip)?,
        load(&file.style)?,
        file.pixel_paths
            .map(|ps| ps.iter().map(|p| resolve(path, p)).collect()),
    )?;
    set.subject_counts = file.subject_counts.map(|p| resolve(path, &p));
    set.manual_overrides = file.manual_overrides.map(|p| resolve(path, &p));
    Ok(set)
}

/// Writes the set description plus `<stem>.clip.*` / `<stem>.style.*`
/// matrices. Pixel and count paths are written as given.
pub fn save_image_set(set: &ImageSet, path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or_else(|| Path::new(""));
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "images".into());
    let save = |m: &Option<EmbeddingMatrix>, role: &str| -> Result<Option<String>> {
        m.as_ref()
            .map(|m| {
                save_matrix_as(m, dir.join(format!("{stem}.{role}")), role, None).map(|p| {
                    p.file_name()
                        .expect("manifest has a file name")
                        .to_string_lossy()
                        .into_owned()
                })
            })
            .transpose()
    };
    let to_str = |p: &PathBuf| p.to_string_lossy().into_owned();
    let file = ImageSetFile {
        version: 1,
        image_ids: set.image_ids.clone(),
        clip: save(&set.clip_embeddings, "clip")?,
        style: save(&set.style_embeddings, "style")?,
        pixel_paths: set.pixel_paths.as_ref().map(|ps| ps.iter().map(to_str).collect()),
        subject_counts: set.subject_counts.as_ref().map(to_str),
        manual_overrides: set.manual_overrides.as_ref().map(to_str),
    };
    write_json(path, &file)?;
    Ok(path.to_path_buf())
}
