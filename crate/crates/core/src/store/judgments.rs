//! Human judgment records: pairwise comparisons and 1–5 ratings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::csv_error;
use crate::error::{Error, Result};

pub const COMPARISON_HEADER: [&str; 5] = ["participant_id", "dataset", "method_a", "method_b", "outcome"];
pub const RATING_HEADER: [&str; 5] = ["rater_id", "dataset", "method", "image_id", "score"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    /// "A is better"
    AWins,
    /// "B is better"
    BWins,
    /// "Both fit equally"
    Tie,
    /// "Neither fits"
    NeitherFits,
}

impl Outcome {
    pub fn code(self) -> &'static str {
        match self {
            Outcome::AWins => "a",
            Outcome::BWins => "b",
            Outcome::Tie => "tie",
            Outcome::NeitherFits => "neither",
        }
    }

    pub fn from_code(s: &str) -> Option<Self> {
        Some(match s {
            "a" => Outcome::AWins,
            "b" => Outcome::BWins,
            "tie" => Outcome::Tie,
            "neither" => Outcome::NeitherFits,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub participant_id: String,
    pub dataset: String,
    pub method_a: String,
    pub method_b: String,
    pub outcome: Outcome,
}

impl ComparisonRecord {
    pub fn new(
        participant_id: impl Into<String>,
        dataset: impl Into<String>,
        method_a: impl Into<String>,
        method_b: impl Into<String>,
        outcome: Outcome,
    ) -> Self {
        Self {
            participant_id: participant_id.into(),
            dataset: dataset.into(),
            method_a: method_a.into(),
            method_b: method_b.into(),
            outcome,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub rater_id: String,
    pub dataset: String,
    pub method: String,
    pub image_id: String,
    /// 1 ..= 5
    pub score: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JudgmentKind {
    Comparisons,
    Ratings,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Judgments {
    Comparisons(Vec<ComparisonRecord>),
    Ratings(Vec<RatingRecord>),
}

pub fn load_judgments(path: impl AsRef<Path>, kind: JudgmentKind) -> Result<Judgments> {
    match kind {
        JudgmentKind::Comparisons => load_comparisons(path).map(Judgments::Comparisons),
        JudgmentKind::Ratings => load_ratings(path).map(Judgments::Ratings),
    }
}

/// Reads rows after checking the header; yields `(line, fields)`.
fn read_rows(path: &Path, header: &[&str; 5]) -> Result<Vec<(u64, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let found = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::MalformedRow {
            line: 1,
            reason: format!("expected header {:?}, found {:?}", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        if let Some(i) = rec.iter().position(str::is_empty) {
            return Err(Error::MalformedRow {
                line,
                reason: format!("empty field {:?}", header[i]),
            });
        }
        rows.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(rows)
}

pub fn load_comparisons(path: impl AsRef<Path>) -> Result<Vec<ComparisonRecord>> {
    read_rows(path.as_ref(), &COMPARISON_HEADER)?
        .into_iter()
        .map(|(line, mut f)| {
            let outcome = Outcome::from_code(&f[4]).ok_or_else(|| Error::UnknownOutcome {
                line,
                value: f[4].clone(),
            })?;
            if f[2] == f[3] {
                return Err(Error::MalformedRow {
                    line,
                    reason: format!("method {:?} compared against itself", f[2]),
                });
            }
            let method_b = f.swap_remove(3);
            let method_a = f.swap_remove(2);
            let dataset = f.swap_remove(1);
            let participant_id = f.swap_remove(0);
            Ok(ComparisonRecord {
                participant_id,
                dataset,
                method_a,
                method_b,
                outcome,
            })
        })
        .collect()
}

pub fn load_ratings(path: impl AsRef<Path>) -> Result<Vec<RatingRecord>> {
    read_rows(path.as_ref(), &RATING_HEADER)?
        .into_iter()
        .map(|(line, mut f)| {
            let score: i64 = f[4].parse().map_err(|_| Error::MalformedRow {
                line,
                reason: format!("score {:?} is not an integer", f[4]),
            })?;
            if !(1..=5).contains(&score) {
                return Err(Error::ScoreOutOfRange { line, score });
            }
            let image_id = f.swap_remove(3);
            let method = f.swap_remove(2);
            let dataset = f.swap_remove(1);
            let rater_id = f.swap_remove(0);
            Ok(RatingRecord {
                rater_id,
                dataset,
                method,
                image_id,
                score: score as u8,
            })
        })
        .collect()
}

fn write_rows<'a>(path: &Path, header: &[&str; 5], rows: impl Iterator<Item = [&'a str; 5]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn save_comparisons(records: &[ComparisonRecord], path: impl AsRef<Path>) -> Result<()> {
    write_rows(
        path.as_ref(),
        &COMPARISON_HEADER,
        records.iter().map(|r| {
            [
                r.participant_id.as_str(),
                r.dataset.as_str(),
                r.method_a.as_str(),
                r.method_b.as_str(),
                r.outcome.code(),
            ]
        }),
    )
}

pub fn save_ratings(records: &[RatingRecord], path: impl AsRef<Path>) -> Result<()> {
    const SCORES: [&str; 6] = ["0", "1", "2", "3", "4", "5"];
    write_rows(
        path.as_ref(),
        &RATING_HEADER,
        records.iter().map(|r| {
            [
                r.rater_id.as_str(),
                r.dataset.as_str(),
                r.method.as_str(),
                r.image_id.as_str(),
                SCORES[usize::from(r.score.min(5))],
            ]
        }),
    )
}
