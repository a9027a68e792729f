//! Sequential validity filter: Copy, then Defective, then MultipleSubjects,
//! then Duplicate. An image takes the status of the first stage it fails and
//! is not seen by later stages.
//!
//! Both thresholds are strict: a copy needs similarity *above* the copy
//! threshold, a defective image needs fidelity *below* the defective one.

pub mod ssim;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{nearest_reference_similarity, per_image_fidelity};
use crate::store::{csv_error, ImageSet};
pub use ssim::{ssim, GrayImage, PreparedImage, SsimParams};

pub const DEFAULT_DUPLICATE_THRESHOLD: f64 = 0.98;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// In `(0, 1]`; `1.0` disables the stage.
    pub copy_threshold: f64,
    /// In `[0, 1)`; `0.0` disables the stage.
    pub defective_threshold: f64,
    #[serde(default = "default_duplicate_threshold")]
    pub duplicate_threshold: f64,
    /// Overrides the path carried by the image set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_counts_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manual_overrides_path: Option<PathBuf>,
}

fn default_duplicate_threshold() -> f64 {
    DEFAULT_DUPLICATE_THRESHOLD
}

impl FilterConfig {
    pub fn new(copy_threshold: f64, defective_threshold: f64) -> Self {
        Self {
            copy_threshold,
            defective_threshold,
            duplicate_threshold: DEFAULT_DUPLICATE_THRESHOLD,
            subject_counts_path: None,
            manual_overrides_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64, range: &str| {
            Err(Error::InvalidArgument(format!("{what} {v} is outside {range}")))
        };
        if !(self.copy_threshold > 0.0 && self.copy_threshold <= 1.0) {
            return bad("copy threshold", self.copy_threshold, "(0, 1]");
        }
        if !(self.defective_threshold >= 0.0 && self.defective_threshold < 1.0) {
            return bad("defective threshold", self.defective_threshold, "[0, 1)");
        }
        if !(self.duplicate_threshold > 0.0 && self.duplicate_threshold <= 1.0) {
            return bad("duplicate threshold", self.duplicate_threshold, "(0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Valid,
    Copy,
    Defective,
    MultipleSubjects,
    Duplicate,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Valid => "valid",
            Status::Copy => "copy",
            Status::Defective => "defective",
            Status::MultipleSubjects => "multiple_subjects",
            Status::Duplicate => "duplicate",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub nearest_ref_sim: f64,
    pub nearest_ref_index: usize,
    pub per_image_fidelity: f64,
    /// Final count, only for images that reached the subject stage.
    pub subject_count: Option<u32>,
    /// Highest SSIM against the kept set, only for images that reached the
    /// duplicate stage and had something to compare with.
    pub max_ssim_vs_kept: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub total: usize,
    pub valid: usize,
    pub copy: usize,
    pub defective: usize,
    pub multiple_subjects: usize,
    pub duplicate: usize,
}

impl CategoryCounts {
    pub fn from_statuses(statuses: &[Status]) -> Self {
        let mut c = Self {
            total: statuses.len(),
            ..Self::default()
        };
        for s in statuses {
            *c.slot(*s) += 1;
        }
        c
    }

    fn slot(&mut self, s: Status) -> &mut usize {
        match s {
            Status::Valid => &mut self.valid,
            Status::Copy => &mut self.copy,
            Status::Defective => &mut self.defective,
            Status::MultipleSubjects => &mut self.multiple_subjects,
            Status::Duplicate => &mut self.duplicate,
        }
    }

    pub fn get(&self, s: Status) -> usize {
        let mut c = *self;
        *c.slot(s)
    }

    pub fn invalid(&self) -> usize {
        self.total - self.valid
    }

    pub fn add(&mut self, other: &CategoryCounts) {
        self.total += other.total;
        self.valid += other.valid;
        self.copy += other.copy;
        self.defective += other.defective;
        self.multiple_subjects += other.multiple_subjects;
        self.duplicate += other.duplicate;
    }

    /// `count / total * 100`, zero for an empty set.
    pub fn percent(&self, count: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            count as f64 / self.total as f64 * 100.0
        }
    }

    pub fn percentages(&self) -> Percentages {
        Percentages {
            copy: self.percent(self.copy),
            defective: self.percent(self.defective),
            multiple_subjects: self.percent(self.multiple_subjects),
            duplicate: self.percent(self.duplicate),
            total_invalid: self.percent(self.invalid()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentages {
    pub copy: f64,
    pub defective: f64,
    pub multiple_subjects: f64,
    pub duplicate: f64,
    pub total_invalid: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub image_ids: Vec<String>,
    pub statuses: Vec<Status>,
    pub scores: Vec<ImageScores>,
    pub counts: CategoryCounts,
    pub percentages: Percentages,
    pub config: FilterConfig,
    pub ssim: SsimParams,
    /// False when no subject counts were supplied and the stage was skipped.
    pub subject_stage_run: bool,
}

impl ValidityReport {
    pub fn status_of(&self, id: &str) -> Option<Status> {
        self.image_ids.iter().position(|i| i == id).map(|i| self.statuses[i])
    }

    /// Rows of the valid images, in input order.
    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.statuses.len())
            .filter(|&i| self.statuses[i] == Status::Valid)
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        self.write_csv_rows(&mut w).map_err(|e| csv_error(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        self.write_csv_rows(&mut w).expect("writing to memory");
        String::from_utf8(w.into_inner().expect("writing to memory")).expect("utf-8 output")
    }

    fn write_csv_rows<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> csv::Result<()> {
        w.write_record([
            "image_id",
            "status",
            "nearest_ref_sim",
            "per_image_fidelity",
            "subject_count",
            "max_ssim",
        ])?;
        for ((id, status), s) in self.image_ids.iter().zip(&self.statuses).zip(&self.scores) {
            w.write_record([
                id.clone(),
                status.to_string(),
                s.nearest_ref_sim.to_string(),
                s.per_image_fidelity.to_string(),
                s.subject_count.map(|c| c.to_string()).unwrap_or_default(),
                s.max_ssim_vs_kept.map(|c| c.to_string()).unwrap_or_default(),
            ])?;
        }
        Ok(())
    }
}

/// Highest identity-space cosine against the references, per generated image.
pub fn nearest_similarities(gen: &ImageSet, refs: &ImageSet) -> Result<Vec<(f64, usize)>> {
    let (g, r) = (gen.clip()?, refs.clip()?);
    (0..g.rows())
        .into_par_iter()
        .map(|i| nearest_reference_similarity(g.row(i), r))
        .collect()
}

/// Style-space fidelity of each generated image against all references.
pub fn per_image_fidelities(gen: &ImageSet, refs: &ImageSet) -> Result<Vec<f64>> {
    let (g, r) = (gen.style()?, refs.style()?);
    (0..g.rows())
        .into_par_iter()
        .map(|i| per_image_fidelity(g.row(i), r))
        .collect()
}

/// Flags images whose nearest reference similarity is strictly above
/// `threshold`.
pub fn detect_copies(gen: &ImageSet, refs: &ImageSet, threshold: f64) -> Result<Vec<bool>> {
    Ok(nearest_similarities(gen, refs)?
        .into_iter()
        .map(|(s, _)| s > threshold)
        .collect())
}

/// Flags images whose per-image fidelity is strictly below `threshold`.
pub fn detect_defective(gen: &ImageSet, refs: &ImageSet, threshold: f64) -> Result<Vec<bool>> {
    Ok(per_image_fidelities(gen, refs)?
        .into_iter()
        .map(|f| f < threshold)
        .collect())
}

/// Reads an `image_id,count` file.
pub fn load_counts(path: &Path) -> Result<BTreeMap<String, u32>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["image_id", "count"] {
        return Err(Error::MalformedRow {
            line: 1,
            reason: format!("expected header image_id,count, found {}", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let id = rec[0].trim().to_string();
        let count = rec[1].trim().parse::<u32>().map_err(|_| Error::MalformedRow {
            line,
            reason: format!("count {:?} is not a non-negative integer", &rec[1]),
        })?;
        if out.insert(id.clone(), count).is_some() {
            return Err(Error::MalformedRow {
                line,
                reason: format!("image {id} listed twice"),
            });
        }
    }
    Ok(out)
}

/// Final subject counts for the `pending` images; the manual override wins
/// over the automatic count. An image is flagged when its count exceeds one.
pub fn apply_subject_counts(
    image_ids: &[String],
    pending: &[bool],
    counts: &BTreeMap<String, u32>,
    overrides: &BTreeMap<String, u32>,
) -> Result<Vec<Option<u32>>> {
    if let Some(unknown) = overrides.keys().find(|k| !image_ids.contains(k)) {
        return Err(Error::UnknownImageInOverride(unknown.clone()));
    }
    image_ids
        .iter()
        .zip(pending)
        .map(|(id, &p)| {
            if !p {
                return Ok(None);
            }
            overrides
                .get(id)
                .or_else(|| counts.get(id))
                .copied()
                .map(Some)
                .ok_or_else(|| Error::MissingCount(id.clone()))
        })
        .collect()
}

/// Keep-first scan over `order`: each candidate is compared against every
/// image kept so far and flagged when any similarity is strictly above
/// `threshold`. Returns per-candidate flags and the highest similarity seen,
/// aligned with `order`.
pub fn keep_first<F>(order: &[usize], threshold: f64, sim: F) -> Result<Vec<(bool, Option<f64>)>>
where
    F: Fn(usize, usize) -> Result<f64> + Sync,
{
    let mut kept: Vec<usize> = Vec::new();
    let mut out = Vec::with_capacity(order.len());
    for &i in order {
        let sims: Vec<f64> = kept
            .par_iter()
            .map(|&j| sim(i, j))
            .collect::<Result<_>>()?;
        let max = sims.iter().copied().reduce(f64::max);
        let dup = max.is_some_and(|m| m > threshold);
        if !dup {
            kept.push(i);
        }
        out.push((dup, max));
    }
    Ok(out)
}

/// Whether an image was flagged, and its highest SSIM against the kept set.
type DupFlag = (bool, Option<f64>);

/// Duplicate scan over several image sets at once. Candidates are the
/// `pending` rows of each set, visited by image id and then by set position;
/// results come back per set, aligned with its rows.
fn duplicate_scan_pooled(sets: &[(&ImageSet, Vec<bool>)], threshold: f64) -> Result<Vec<Vec<DupFlag>>> {
    let mut order: Vec<(usize, usize)> = Vec::new();
    for (s, (set, pending)) in sets.iter().enumerate() {
        order.extend((0..set.len()).filter(|&i| pending[i]).map(|i| (s, i)));
    }
    order.sort_by(|a, b| sets[a.0].0.image_ids[a.1].cmp(&sets[b.0].0.image_ids[b.1]).then(a.0.cmp(&b.0)));
    let mut out: Vec<Vec<(bool, Option<f64>)>> = sets.iter().map(|(set, _)| vec![(false, None); set.len()]).collect();
    if order.is_empty() {
        return Ok(out);
    }
    let images: Vec<PreparedImage> = order
        .par_iter()
        .map(|&(s, i)| {
            let paths = sets[s].0.pixel_paths.as_ref().ok_or(Error::MissingPixels)?;
            PreparedImage::new(&GrayImage::open(&paths[i])?)
        })
        .collect::<Result<_>>()?;
    let positions: Vec<usize> = (0..order.len()).collect();
    let flags = keep_first(&positions, threshold, |a, b| images[a].ssim(&images[b]))?;
    for (&(s, i), f) in order.iter().zip(flags) {
        out[s][i] = f;
    }
    Ok(out)
}

fn duplicate_scan(gen: &ImageSet, pending: &[bool], threshold: f64) -> Result<Vec<(bool, Option<f64>)>> {
    Ok(duplicate_scan_pooled(&[(gen, pending.to_vec())], threshold)?
        .pop()
        .expect("one set in, one out"))
}

/// Flags every image whose SSIM against an earlier kept image (by image id)
/// exceeds `threshold`.
pub fn detect_duplicates(gen: &ImageSet, threshold: f64) -> Result<Vec<bool>> {
    Ok(duplicate_scan(gen, &vec![true; gen.len()], threshold)?
        .into_iter()
        .map(|(d, _)| d)
        .collect())
}

fn counts_file(config: &Option<PathBuf>, fallback: &Option<PathBuf>) -> Option<PathBuf> {
    config.clone().or_else(|| fallback.clone())
}

/// Outcome of the Copy, Defective and MultipleSubjects stages.
struct EarlyStages {
    statuses: Vec<Status>,
    nearest: Vec<(f64, usize)>,
    fidelity: Vec<f64>,
    subject: Vec<Option<u32>>,
    subject_stage_run: bool,
}

impl EarlyStages {
    fn pending(&self) -> Vec<bool> {
        self.statuses.iter().map(|&s| s == Status::Valid).collect()
    }
}

fn early_stages(gen: &ImageSet, refs: &ImageSet, config: &FilterConfig) -> Result<EarlyStages> {
    config.validate()?;
    let nearest = nearest_similarities(gen, refs)?;
    let fidelity = per_image_fidelities(gen, refs)?;
    let n = gen.len();
    let mut statuses = vec![Status::Valid; n];
    for i in 0..n {
        if nearest[i].0 > config.copy_threshold {
            statuses[i] = Status::Copy;
        } else if fidelity[i] < config.defective_threshold {
            statuses[i] = Status::Defective;
        }
    }

    let counts_path = counts_file(&config.subject_counts_path, &gen.subject_counts);
    let overrides_path = counts_file(&config.manual_overrides_path, &gen.manual_overrides);
    let mut subject = vec![None; n];
    if let Some(p) = &counts_path {
        let counts = load_counts(p)?;
        let overrides = overrides_path.as_deref().map(load_counts).transpose()?.unwrap_or_default();
        let pending: Vec<bool> = statuses.iter().map(|&s| s == Status::Valid).collect();
        subject = apply_subject_counts(&gen.image_ids, &pending, &counts, &overrides)?;
        for (s, c) in statuses.iter_mut().zip(&subject) {
            if c.is_some_and(|c| c > 1) {
                *s = Status::MultipleSubjects;
            }
        }
    } else if overrides_path.is_some() {
        return Err(Error::InvalidArgument("manual overrides given without subject counts".into()));
    }
    Ok(EarlyStages {
        statuses,
        nearest,
        fidelity,
        subject,
        subject_stage_run: counts_path.is_some(),
    })
}

fn finish(gen: &ImageSet, early: EarlyStages, dups: Vec<(bool, Option<f64>)>, config: &FilterConfig) -> ValidityReport {
    let EarlyStages {
        mut statuses,
        nearest,
        fidelity,
        subject,
        subject_stage_run,
    } = early;
    for (s, (d, _)) in statuses.iter_mut().zip(&dups) {
        if *d {
            *s = Status::Duplicate;
        }
    }
    let scores = (0..gen.len())
        .map(|i| ImageScores {
            nearest_ref_sim: nearest[i].0,
            nearest_ref_index: nearest[i].1,
            per_image_fidelity: fidelity[i],
            subject_count: subject[i],
            max_ssim_vs_kept: dups[i].1,
        })
        .collect();
    let counts = CategoryCounts::from_statuses(&statuses);
    ValidityReport {
        image_ids: gen.image_ids.clone(),
        statuses,
        scores,
        counts,
        percentages: counts.percentages(),
        config: config.clone(),
        ssim: SsimParams::default(),
        subject_stage_run,
    }
}

pub fn run_pipeline(gen: &ImageSet, refs: &ImageSet, config: &FilterConfig) -> Result<ValidityReport> {
    let early = early_stages(gen, refs, config)?;
    let dups = duplicate_scan(gen, &early.pending(), config.duplicate_threshold)?;
    Ok(finish(gen, early, dups, config))
}

/// Like [`run_pipeline`] for several generated sets, except that duplicates
/// are searched across all of them together. Every set must share the
/// duplicate threshold of the first.
pub fn run_pipeline_pooled(jobs: &[(&ImageSet, &ImageSet, &FilterConfig)]) -> Result<Vec<ValidityReport>> {
    let Some(first) = jobs.first() else {
        return Ok(Vec::new());
    };
    let threshold = first.2.duplicate_threshold;
    if jobs.iter().any(|j| j.2.duplicate_threshold != threshold) {
        return Err(Error::InvalidArgument("pooled duplicate detection needs one threshold".into()));
    }
    let early: Vec<EarlyStages> = jobs
        .iter()
        .map(|(gen, refs, config)| early_stages(gen, refs, config))
        .collect::<Result<_>>()?;
    let sets: Vec<(&ImageSet, Vec<bool>)> = jobs.iter().zip(&early).map(|(j, e)| (j.0, e.pending())).collect();
    let dups = duplicate_scan_pooled(&sets, threshold)?;
    Ok(jobs
        .iter()
        .zip(early)
        .zip(dups)
        .map(|((j, e), d)| finish(j.0, e, d, j.2))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width histogram over the observed range, for picking thresholds
/// by eye. The last bin is closed on the right.
pub fn histogram(values: &[f64], bins: usize) -> Vec<Bin> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<Bin> = (0..bins)
        .map(|b| Bin {
            lo: lo + width * b as f64,
            hi: if b + 1 == bins { hi } else { lo + width * (b + 1) as f64 },
            count: 0,
        })
        .collect();
    for &v in values {
        let b = if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        out[b].count += 1;
    }
    out
}
