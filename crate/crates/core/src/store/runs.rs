use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::matrix::{csv_error, resolve};
use crate::error::{Error, Result};

/// Number of independently trained copies of each training method.
pub const MODEL_COPIES: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrainingMethod {
    TI,
    DB,
    #[serde(rename = "DB_L")]
    DbL,
    #[serde(rename = "DB_noReg")]
    DbNoReg,
    #[serde(rename = "DB_MTC_Reg")]
    DbMtcReg,
    #[serde(rename = "DB_MTR_L")]
    DbMtrL,
    #[serde(rename = "DB_MTC_L")]
    DbMtcL,
}

impl TrainingMethod {
    pub const ALL: [TrainingMethod; 7] = [
        TrainingMethod::TI,
        TrainingMethod::DB,
        TrainingMethod::DbL,
        TrainingMethod::DbNoReg,
        TrainingMethod::DbMtcReg,
        TrainingMethod::DbMtrL,
        TrainingMethod::DbMtcL,
    ];

    /// The four LoRA variants crossing single/multi-token training with and
    /// without a regularization set, in table order.
    pub const ABLATION: [TrainingMethod; 4] = [
        TrainingMethod::DbL,
        TrainingMethod::DbMtcReg,
        TrainingMethod::DbNoReg,
        TrainingMethod::DbMtcL,
    ];

    pub fn id(self) -> &'static str {
        match self {
            TrainingMethod::TI => "TI",
            TrainingMethod::DB => "DB",
            TrainingMethod::DbL => "DB_L",
            TrainingMethod::DbNoReg => "DB_noReg",
            TrainingMethod::DbMtcReg => "DB_MTC_Reg",
            TrainingMethod::DbMtrL => "DB_MTR_L",
            TrainingMethod::DbMtcL => "DB_MTC_L",
        }
    }

    /// `(multi_token, regularization_set)` for the ablation variants.
    pub fn ablation_factors(self) -> Option<(bool, bool)> {
        match self {
            TrainingMethod::DbL => Some((false, true)),
            TrainingMethod::DbMtcReg => Some((true, true)),
            TrainingMethod::DbNoReg => Some((false, false)),
            TrainingMethod::DbMtcL => Some((true, false)),
            _ => None,
        }
    }
}

impl fmt::Display for TrainingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for TrainingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown training method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GenerationMethod {
    Token,
    Univar,
    Multivar,
}

impl GenerationMethod {
    pub const ALL: [GenerationMethod; 3] = [
        GenerationMethod::Token,
        GenerationMethod::Univar,
        GenerationMethod::Multivar,
    ];
}

impl fmt::Display for GenerationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GenerationMethod::Token => "Token",
            GenerationMethod::Univar => "Univar",
            GenerationMethod::Multivar => "Multivar",
        })
    }
}

/// One trained model copy and the images generated from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset_id: String,
    pub training_method: TrainingMethod,
    pub generation_method: GenerationMethod,
    /// 1 ..= 5
    pub copy_index: u8,
    pub image_set_ref: PathBuf,
}

/// Reads `runs.csv`. Relative `image_set_ref` paths are resolved against the
/// CSV's directory.
pub fn load_runs(path: impl AsRef<Path>) -> Result<Vec<RunManifest>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut runs = Vec::new();
    for rec in reader.deserialize::<RunManifest>() {
        let mut run = rec.map_err(|e| csv_error(path, e))?;
        if !(1..=MODEL_COPIES).contains(&run.copy_index) {
            return Err(Error::MalformedRow {
                line: runs.len() as u64 + 2,
                reason: format!("copy_index {} outside 1..={MODEL_COPIES}", run.copy_index),
            });
        }
        run.image_set_ref = resolve(path, &run.image_set_ref.to_string_lossy());
        runs.push(run);
    }
    Ok(runs)
}

pub fn save_runs(runs: &[RunManifest], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in runs {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("runs.csv");
        std::fs::write(
            &p,
            "dataset_id,training_method,generation_method,copy_index,image_set_ref\n\
             virus,DB_MTC_L,Multivar,3,gen/v3.json\n",
        )
        .unwrap();
        let runs = load_runs(&p).unwrap();
        assert_eq!(runs[0].training_method, TrainingMethod::DbMtcL);
        assert_eq!(runs[0].generation_method, GenerationMethod::Multivar);
        assert_eq!(runs[0].image_set_ref, dir.path().join("gen/v3.json"));

        std::fs::write(
            &p,
            "dataset_id,training_method,generation_method,copy_index,image_set_ref\n\
             virus,DB_L,Token,6,x.json\n",
        )
        .unwrap();
        assert!(matches!(load_runs(&p), Err(Error::MalformedRow { line: 2, .. })));
    }

    #[test]
    fn ablation_matrix_covers_all_factor_combinations() {
        let mut f: Vec<_> = TrainingMethod::ABLATION
            .iter()
            .map(|m| m.ablation_factors().unwrap())
            .collect();
        f.sort();
        assert_eq!(f, vec![(false, false), (false, true), (true, false), (true, true)]);
        assert_eq!("DB_MTR_L".parse::<TrainingMethod>().unwrap(), TrainingMethod::DbMtrL);
    }
}
