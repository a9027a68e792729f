//! Ingestion and persistence of embeddings, vocabularies, judgment records
//! and run lists. Everything loaded is validated; nothing is silently
//! repaired.

mod images;
mod judgments;
mod matrix;
mod runs;
mod vocab;

pub use images::{load_image_set, save_image_set, ImageSet};
pub use judgments::{
    load_comparisons, load_judgments, load_ratings, save_comparisons, save_ratings, ComparisonRecord,
    JudgmentKind, Judgments, Outcome, RatingRecord, COMPARISON_HEADER, RATING_HEADER,
};
pub use matrix::{
    load_matrix, load_matrix_with_manifest, save_matrix, save_matrix_as, EmbeddingMatrix, MatrixManifest,
    CSV_ROW_LIMIT, DTYPE, FORMAT_VERSION, NORM_TOLERANCE,
};
pub use runs::{load_runs, save_runs, GenerationMethod, RunManifest, TrainingMethod, MODEL_COPIES};
pub use vocab::{load_vocabulary, save_vocabulary, TokenEntry, TokenVocabulary};

pub(crate) use matrix::{csv_error, read_json, resolve, write_json};
