//! Tables over many runs: the invalid-image breakdown per dataset and
//! training method, and Fidelity/Diversity as mean ± std across model copies
//! per dataset, training and generation method.
//!
//! Percentages are rounded from the exact count ratio (half to even). In the
//! breakdown, the category cells are adjusted by largest remainder so that
//! they add up to the rendered Total exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{run_pipeline, run_pipeline_pooled, CategoryCounts, FilterConfig, ValidityReport};
use crate::metrics::{diversity, fidelity, EmbeddingSpace};
use crate::store::{load_image_set, read_json, resolve, GenerationMethod, ImageSet, RunManifest, TrainingMethod};

/// Breakdown cells above this share of the generated images are bold.
pub const BOLD_ABOVE_PERCENT: usize = 5;
/// Metric cells with more invalid images than this share are excluded.
pub const EXCLUDE_ABOVE_PERCENT: usize = 95;
pub const DEFAULT_DECIMALS: usize = 3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Markdown,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "md" | "markdown" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(Error::InvalidArgument(format!("unknown format {s:?}"))),
        }
    }
}

/// Filter counts and metrics of one run. Metrics are absent when the run
/// kept no valid image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: RunManifest,
    pub counts: CategoryCounts,
    pub fidelity: Option<f64>,
    pub diversity: Option<f64>,
}

/// `count / total` in hundredths of a percent, rounded half to even.
pub fn hundredths(count: usize, total: usize) -> u64 {
    if total == 0 {
        return 0;
    }
    let (num, den) = (count as u128 * 10_000, total as u128);
    let (q, r) = (num / den, num % den);
    let up = match (2 * r).cmp(&den) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Equal => q % 2 == 1,
        std::cmp::Ordering::Less => false,
    };
    (q + u128::from(up)) as u64
}

pub fn percent_text(h: u64) -> String {
    format!("{}.{:02}%", h / 100, h % 100)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PctCell {
    pub hundredths: u64,
    pub text: String,
    pub bold: bool,
}

impl PctCell {
    fn new(h: u64, bold: bool) -> Self {
        Self {
            hundredths: h,
            text: percent_text(h),
            bold,
        }
    }

    fn markdown(&self) -> String {
        bold(&self.text, self.bold)
    }
}

fn bold(text: &str, on: bool) -> String {
    if on {
        format!("**{text}**")
    } else {
        text.to_string()
    }
}

fn exceeds(count: usize, total: usize, percent: usize) -> bool {
    count as u128 * 100 > percent as u128 * total as u128
}

/// Category cells (copy, defective, multiple, duplicate) and the Total.
pub fn breakdown_cells(c: &CategoryCounts) -> ([PctCell; 4], PctCell) {
    let counts = [c.copy, c.defective, c.multiple_subjects, c.duplicate];
    let total_h = hundredths(c.invalid(), c.total);
    let mut h = [0u64; 4];
    let mut rem = [0u128; 4];
    if c.total > 0 {
        for i in 0..4 {
            let num = counts[i] as u128 * 10_000;
            h[i] = (num / c.total as u128) as u64;
            rem[i] = num % c.total as u128;
        }
    }
    let deficit = total_h.saturating_sub(h.iter().sum());
    let mut order: Vec<usize> = (0..4).filter(|&i| rem[i] > 0).collect();
    order.sort_by(|&a, &b| rem[b].cmp(&rem[a]).then(a.cmp(&b)));
    for &i in order.iter().take(deficit as usize) {
        h[i] += 1;
    }
    let cells = std::array::from_fn(|i| PctCell::new(h[i], exceeds(counts[i], c.total, BOLD_ABOVE_PERCENT)));
    (cells, PctCell::new(total_h, exceeds(c.invalid(), c.total, BOLD_ABOVE_PERCENT)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub dataset: String,
    pub training: TrainingMethod,
    /// Pooled over every generation method and model copy.
    pub counts: CategoryCounts,
    pub copies: PctCell,
    pub defective: PctCell,
    pub multiple: PctCell,
    pub duplicate: PctCell,
    pub total: PctCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownTable {
    pub rows: Vec<BreakdownRow>,
}

const BREAKDOWN_HEADER: [&str; 7] = ["Dataset", "Training", "Copies", "Defective", "Multiple", "Duplicate", "Total"];

impl BreakdownTable {
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        writeln!(out, "| {} |", BREAKDOWN_HEADER.join(" | ")).unwrap();
        writeln!(out, "|---|---|---:|---:|---:|---:|---:|").unwrap();
        let mut last: Option<&str> = None;
        for r in &self.rows {
            let name = if last == Some(r.dataset.as_str()) { "" } else { r.dataset.as_str() };
            last = Some(&r.dataset);
            writeln!(
                out,
                "| {name} | {} | {} | {} | {} | {} | {} |",
                r.training,
                r.copies.markdown(),
                r.defective.markdown(),
                r.multiple.markdown(),
                r.duplicate.markdown(),
                r.total.markdown()
            )
            .unwrap();
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["dataset", "training", "copies", "defective", "multiple", "duplicate", "total", "n_images"])
            .expect("writing to memory");
        for r in &self.rows {
            let pct = |c: &PctCell| c.text.trim_end_matches('%').to_string();
            w.write_record([
                r.dataset.clone(),
                r.training.to_string(),
                pct(&r.copies),
                pct(&r.defective),
                pct(&r.multiple),
                pct(&r.duplicate),
                pct(&r.total),
                r.counts.total.to_string(),
            ])
            .expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("writing to memory")).expect("utf-8 output")
    }
}

fn datasets_in_order<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for d in ids {
        if !out.iter().any(|x| x == d) {
            out.push(d.to_string());
        }
    }
    out
}

/// One row per (dataset, training method); datasets in first-appearance
/// order, training methods in their canonical order. `groups` restricts and
/// orders the rows explicitly; a requested group without runs is an error.
pub fn invalid_breakdown_table(results: &[RunResult], groups: Option<&[(String, TrainingMethod)]>) -> Result<BreakdownTable> {
    let mut pooled: BTreeMap<(&str, TrainingMethod), CategoryCounts> = BTreeMap::new();
    for r in results {
        pooled
            .entry((&r.run.dataset_id, r.run.training_method))
            .or_default()
            .add(&r.counts);
    }
    let keys: Vec<(String, TrainingMethod)> = match groups {
        Some(g) => g.to_vec(),
        None => datasets_in_order(results.iter().map(|r| r.run.dataset_id.as_str()))
            .into_iter()
            .flat_map(|d| {
                TrainingMethod::ALL
                    .into_iter()
                    .filter(|t| pooled.contains_key(&(d.as_str(), *t)))
                    .map(|t| (d.clone(), t))
                    .collect::<Vec<_>>()
            })
            .collect(),
    };
    let rows = keys
        .into_iter()
        .map(|(d, t)| {
            let counts = *pooled
                .get(&(d.as_str(), t))
                .ok_or_else(|| Error::MissingGroup(format!("{d}/{t}")))?;
            let ([copies, defective, multiple, duplicate], total) = breakdown_cells(&counts);
            Ok(BreakdownRow {
                dataset: d,
                training: t,
                counts,
                copies,
                defective,
                multiple,
                duplicate,
                total,
            })
        })
        .collect::<Result<_>>()?;
    Ok(BreakdownTable { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub mean: f64,
    /// Sample standard deviation over model copies; zero for a single copy.
    pub std: f64,
    pub n_models: usize,
    pub excluded: bool,
}

impl AggregateCell {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n == 1 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(Self {
            mean,
            std,
            n_models: n,
            excluded: false,
        })
    }

    pub fn render(&self, decimals: usize) -> String {
        if self.excluded {
            "-".into()
        } else {
            format!("{:.*} ± {:.*}", decimals, self.mean, decimals, self.std)
        }
    }

    fn mean_text(&self, decimals: usize) -> String {
        format!("{:.*}", decimals, self.mean)
    }
}

/// Per-model inputs of one (dataset, training, generation) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsCellInput {
    pub dataset: String,
    pub training: TrainingMethod,
    pub generation: GenerationMethod,
    pub fidelity: Vec<f64>,
    pub diversity: Vec<f64>,
    /// Pooled over the model copies.
    pub counts: CategoryCounts,
}

/// Groups run results by (dataset, training, generation); copy order is kept.
pub fn metrics_cells(results: &[RunResult]) -> Vec<MetricsCellInput> {
    let mut cells: Vec<MetricsCellInput> = Vec::new();
    for r in results {
        let key = (&r.run.dataset_id, r.run.training_method, r.run.generation_method);
        let cell = match cells
            .iter_mut()
            .position(|c| (&c.dataset, c.training, c.generation) == key)
        {
            Some(i) => &mut cells[i],
            None => {
                cells.push(MetricsCellInput {
                    dataset: r.run.dataset_id.clone(),
                    training: r.run.training_method,
                    generation: r.run.generation_method,
                    fidelity: Vec::new(),
                    diversity: Vec::new(),
                    counts: CategoryCounts::default(),
                });
                cells.last_mut().expect("just pushed")
            }
        };
        cell.counts.add(&r.counts);
        cell.fidelity.extend(r.fidelity);
        cell.diversity.extend(r.diversity);
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsCell {
    pub invalid: PctCell,
    pub fidelity: AggregateCell,
    pub diversity: AggregateCell,
    pub fidelity_text: String,
    pub diversity_text: String,
    pub fidelity_bold: bool,
    pub diversity_bold: bool,
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub training: TrainingMethod,
    pub generation: GenerationMethod,
    /// Aligned with the table's datasets; `None` where no runs exist.
    pub cells: Vec<Option<MetricsCell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub datasets: Vec<String>,
    pub rows: Vec<MetricsRow>,
    pub decimals: usize,
}

pub fn metrics_table(inputs: &[MetricsCellInput], decimals: usize) -> Result<MetricsTable> {
    let datasets = datasets_in_order(inputs.iter().map(|c| c.dataset.as_str()));
    let mut built: BTreeMap<(TrainingMethod, GenerationMethod), Vec<Option<MetricsCell>>> = BTreeMap::new();
    for c in inputs {
        let label = || format!("{}/{}/{}", c.dataset, c.training, c.generation);
        if c.fidelity.len() > usize::from(crate::store::MODEL_COPIES) || c.diversity.len() > usize::from(crate::store::MODEL_COPIES) {
            return Err(Error::InvalidArgument(format!("{} has more than five model values", label())));
        }
        let excluded = exceeds(c.counts.invalid(), c.counts.total, EXCLUDE_ABOVE_PERCENT);
        let agg = |v: &[f64]| -> Result<AggregateCell> {
            match AggregateCell::from_values(v) {
                Some(a) => Ok(AggregateCell { excluded, ..a }),
                None if excluded => Ok(AggregateCell {
                    mean: f64::NAN,
                    std: f64::NAN,
                    n_models: 0,
                    excluded,
                }),
                None => Err(Error::EmptyCell(label())),
            }
        };
        let (fid, div) = (agg(&c.fidelity)?, agg(&c.diversity)?);
        let col = datasets.iter().position(|d| d == &c.dataset).expect("collected above");
        let row = built
            .entry((c.training, c.generation))
            .or_insert_with(|| vec![None; datasets.len()]);
        if row[col].is_some() {
            return Err(Error::InvalidArgument(format!("{} appears twice", label())));
        }
        row[col] = Some(MetricsCell {
            invalid: PctCell::new(hundredths(c.counts.invalid(), c.counts.total), false),
            fidelity_text: fid.render(decimals),
            diversity_text: div.render(decimals),
            fidelity: fid,
            diversity: div,
            fidelity_bold: false,
            diversity_bold: false,
            excluded,
        });
    }
    let mut rows: Vec<MetricsRow> = built
        .into_iter()
        .map(|((training, generation), cells)| MetricsRow {
            training,
            generation,
            cells,
        })
        .collect();

    // best per dataset: ties at the printed precision share the bold
    for col in 0..datasets.len() {
        let present: Vec<(usize, &MetricsCell)> = rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.cells[col].as_ref().map(|c| (i, c)))
            .collect();
        let min_invalid = present.iter().map(|(_, c)| c.invalid.hundredths).min();
        let live: Vec<&(usize, &MetricsCell)> = present.iter().filter(|(_, c)| !c.excluded).collect();
        let best = |f: fn(&MetricsCell) -> &AggregateCell| -> Option<String> {
            live.iter()
                .map(|(_, c)| f(c))
                .max_by(|a, b| a.mean.total_cmp(&b.mean))
                .map(|a| a.mean_text(decimals))
        };
        let best_fid = best(|c| &c.fidelity);
        let best_div = best(|c| &c.diversity);
        for row in rows.iter_mut() {
            if let Some(cell) = row.cells[col].as_mut() {
                cell.invalid.bold = Some(cell.invalid.hundredths) == min_invalid;
                if !cell.excluded {
                    cell.fidelity_bold = best_fid.as_deref() == Some(&cell.fidelity.mean_text(decimals));
                    cell.diversity_bold = best_div.as_deref() == Some(&cell.diversity.mean_text(decimals));
                }
            }
        }
    }
    rows.sort_by_key(|r| (r.training, r.generation));
    Ok(MetricsTable {
        datasets,
        rows,
        decimals,
    })
}

impl MetricsTable {
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let mut header = vec!["Training".to_string(), "Generation".to_string()];
        for d in &self.datasets {
            header.push(format!("{d} Invalid ↓"));
            header.push(format!("{d} Fidelity ↑"));
            header.push(format!("{d} Diversity ↑"));
        }
        writeln!(out, "| {} |", header.join(" | ")).unwrap();
        writeln!(out, "|---|---|{}", "---:|".repeat(3 * self.datasets.len())).unwrap();
        let mut last = None;
        for r in &self.rows {
            let name = if last == Some(r.training) { String::new() } else { r.training.to_string() };
            last = Some(r.training);
            let mut cells = vec![name, r.generation.to_string()];
            for c in &r.cells {
                match c {
                    Some(c) => {
                        cells.push(c.invalid.markdown());
                        cells.push(bold(&c.fidelity_text, c.fidelity_bold));
                        cells.push(bold(&c.diversity_text, c.diversity_bold));
                    }
                    None => cells.extend(["n/a".to_string(), "n/a".into(), "n/a".into()]),
                }
            }
            writeln!(out, "| {} |", cells.join(" | ")).unwrap();
        }
        out
    }

    /// Long format, one line per cell.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "dataset",
            "training",
            "generation",
            "n_models",
            "invalid_pct",
            "excluded",
            "fidelity_mean",
            "fidelity_std",
            "diversity_mean",
            "diversity_std",
        ])
        .expect("writing to memory");
        for (col, d) in self.datasets.iter().enumerate() {
            for r in &self.rows {
                let Some(c) = &r.cells[col] else { continue };
                let num = |v: f64| {
                    if c.excluded {
                        String::new()
                    } else {
                        format!("{:.*}", self.decimals, v)
                    }
                };
                w.write_record([
                    d.clone(),
                    r.training.to_string(),
                    r.generation.to_string(),
                    c.fidelity.n_models.to_string(),
                    c.invalid.text.trim_end_matches('%').to_string(),
                    c.excluded.to_string(),
                    num(c.fidelity.mean),
                    num(c.fidelity.std),
                    num(c.diversity.mean),
                    num(c.diversity.std),
                ])
                .expect("writing to memory");
            }
        }
        String::from_utf8(w.into_inner().expect("writing to memory")).expect("utf-8 output")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DuplicateScope {
    /// Duplicates are searched within each run.
    #[default]
    PerRun,
    /// Duplicates are searched across the model copies of a cell.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Image set of the reference characters.
    pub references: PathBuf,
    pub copy_threshold: f64,
    pub defective_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_threshold: Option<f64>,
}

impl DatasetConfig {
    pub fn filter_config(&self) -> FilterConfig {
        let mut c = FilterConfig::new(self.copy_threshold, self.defective_threshold);
        if let Some(t) = self.duplicate_threshold {
            c.duplicate_threshold = t;
        }
        c
    }
}

fn default_decimals() -> usize {
    DEFAULT_DECIMALS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub datasets: BTreeMap<String, DatasetConfig>,
    #[serde(default)]
    pub duplicate_scope: DuplicateScope,
    #[serde(default = "default_decimals")]
    pub decimals: usize,
}

/// Reads a report configuration; reference paths are relative to the file.
pub fn load_report_config(path: impl AsRef<Path>) -> Result<ReportConfig> {
    let path = path.as_ref();
    let mut cfg: ReportConfig = read_json(path)?;
    for d in cfg.datasets.values_mut() {
        d.references = resolve(path, &d.references.to_string_lossy());
    }
    Ok(cfg)
}

/// Filter and metrics for one run whose validity is already known.
fn summarize(run: &RunManifest, gen: &ImageSet, refs: &ImageSet, report: &ValidityReport) -> Result<RunResult> {
    let valid = report.valid_indices();
    let (mut fid, mut div) = (None, None);
    if !valid.is_empty() {
        let style = gen.style()?.select_rows(&valid)?;
        fid = Some(fidelity(&style, refs.style()?, EmbeddingSpace::StyleAdapted)?.value);
        div = Some(diversity(&style, EmbeddingSpace::StyleAdapted).value);
    }
    Ok(RunResult {
        run: run.clone(),
        counts: report.counts,
        fidelity: fid,
        diversity: div,
    })
}

/// Runs the validity filter and both metrics for every run. Metrics use the
/// style-adapted space of the valid images only.
pub fn evaluate_runs(runs: &[RunManifest], config: &ReportConfig) -> Result<Vec<(RunResult, ValidityReport)>> {
    let mut refs: BTreeMap<&str, ImageSet> = BTreeMap::new();
    for r in runs {
        if !refs.contains_key(r.dataset_id.as_str()) {
            let d = config
                .datasets
                .get(&r.dataset_id)
                .ok_or_else(|| Error::MissingGroup(r.dataset_id.clone()))?;
            d.filter_config().validate()?;
            refs.insert(&r.dataset_id, load_image_set(&d.references)?);
        }
    }
    let sets: Vec<ImageSet> = runs
        .par_iter()
        .map(|r| load_image_set(&r.image_set_ref))
        .collect::<Result<_>>()?;
    let filter_for = |r: &RunManifest| config.datasets[&r.dataset_id].filter_config();

    let reports: Vec<ValidityReport> = match config.duplicate_scope {
        DuplicateScope::PerRun => runs
            .par_iter()
            .zip(&sets)
            .map(|(r, s)| run_pipeline(s, &refs[r.dataset_id.as_str()], &filter_for(r)))
            .collect::<Result<_>>()?,
        DuplicateScope::Pooled => {
            let mut out: Vec<Option<ValidityReport>> = vec![None; runs.len()];
            let mut cells: Vec<(&RunManifest, Vec<usize>)> = Vec::new();
            for (i, r) in runs.iter().enumerate() {
                let same = |c: &&mut (&RunManifest, Vec<usize>)| {
                    (&c.0.dataset_id, c.0.training_method, c.0.generation_method)
                        == (&r.dataset_id, r.training_method, r.generation_method)
                };
                match cells.iter_mut().find(same) {
                    Some(c) => c.1.push(i),
                    None => cells.push((r, vec![i])),
                }
            }
            for (_, members) in cells {
                let configs: Vec<FilterConfig> = members.iter().map(|&i| filter_for(&runs[i])).collect();
                let jobs: Vec<(&ImageSet, &ImageSet, &FilterConfig)> = members
                    .iter()
                    .zip(&configs)
                    .map(|(&i, c)| (&sets[i], &refs[runs[i].dataset_id.as_str()], c))
                    .collect();
                for (&i, rep) in members.iter().zip(run_pipeline_pooled(&jobs)?) {
                    out[i] = Some(rep);
                }
            }
            out.into_iter().map(|r| r.expect("every run belongs to a cell")).collect()
        }
    };

    runs.par_iter()
        .zip(&sets)
        .zip(reports)
        .map(|((r, s), rep)| Ok((summarize(r, s, &refs[r.dataset_id.as_str()], &rep)?, rep)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullReport {
    pub breakdown: BreakdownTable,
    pub metrics: MetricsTable,
    pub runs: Vec<RunResult>,
}

pub fn build_report(results: &[RunResult], decimals: usize) -> Result<FullReport> {
    Ok(FullReport {
        breakdown: invalid_breakdown_table(results, None)?,
        metrics: metrics_table(&metrics_cells(results), decimals)?,
        runs: results.to_vec(),
    })
}

impl FullReport {
    pub fn to_markdown(&self) -> String {
        format!(
            "## Invalid images\n\n{}\n## Fidelity and diversity\n\n{}",
            self.breakdown.to_markdown(),
            self.metrics.to_markdown()
        )
    }
}

/// Keeps only the four ablation variants; each must have runs.
pub fn ablation_runs(runs: &[RunManifest]) -> Result<Vec<RunManifest>> {
    for t in TrainingMethod::ABLATION {
        if !runs.iter().any(|r| r.training_method == t) {
            return Err(Error::MissingGroup(t.to_string()));
        }
    }
    Ok(runs
        .iter()
        .filter(|r| TrainingMethod::ABLATION.contains(&r.training_method))
        .cloned()
        .collect())
}
