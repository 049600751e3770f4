//! Translation and grounding metrics.

pub mod bleu;
pub mod matching;
pub mod report;
pub mod tokenize;

use thiserror::Error;

use crate::geometry::GeometryError;

pub use bleu::{corpus_bleu, BleuStats, Smoothing};
pub use matching::{grounding_iou, match_boxes, MatchMethod, Matching};
pub use report::{
    aggregate, evaluate_fullimage, evaluate_instances, evaluate_region, score_fullimage_image, CategoryReport, EvalOptions, EvalReport,
    Evaluation, FullImageScore, ImageDiagnostic, ImageResult, TextPair,
};
pub use tokenize::{tokenize, TokenizerMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no hypothesis/reference pairs")]
    NoPairs,
    #[error("no gold boxes")]
    NoGold,
    #[error("{queries} queries but {records} prediction records")]
    CountMismatch { queries: usize, records: usize },
    #[error("{0}: no scenario label, cannot assign an evaluation category")]
    MissingScenario(String),
    #[error("{image_id}: {message}")]
    Parse { image_id: String, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
