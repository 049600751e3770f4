//! Zero-shot scenario categorization over precomputed embeddings.
//!
//! Text embeddings for every (label, prompt template) pair and one embedding
//! per image are produced outside this crate. Here each label's template
//! vectors are averaged and re-normalized, and an image is assigned the
//! superclass of the label with the highest cosine similarity.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norm below which an averaged label vector is considered degenerate.
const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("label bank is empty")]
    EmptyBank,
    #[error("label {label:?} has no template vectors")]
    NoVectors { label: String },
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimMismatch {
        expected: usize,
        got: usize,
        context: String,
    },
    #[error("label {label:?} averages to a zero vector")]
    DegenerateLabel { label: String },
    #[error("image vector has zero norm")]
    ZeroImageVector,
    #[error("unknown scenario label {0:?}")]
    UnknownLabel(String),
    #[error("invalid embedding file: {0}")]
    Format(String),
}

/// One of the ten image scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioLabel {
    #[serde(rename = "ads")]
    Ads,
    #[serde(rename = "book")]
    Book,
    #[serde(rename = "poster")]
    Poster,
    #[serde(rename = "natural")]
    Natural,
    #[serde(rename = "street")]
    Street,
    #[serde(rename = "hand-written")]
    HandWritten,
    #[serde(rename = "infographic")]
    Infographic,
    #[serde(rename = "document")]
    Document,
    #[serde(rename = "chart")]
    Chart,
    #[serde(rename = "table")]
    Table,
}

impl ScenarioLabel {
    pub const ALL: [ScenarioLabel; 10] = [
        ScenarioLabel::Ads,
        ScenarioLabel::Book,
        ScenarioLabel::Poster,
        ScenarioLabel::Natural,
        ScenarioLabel::Street,
        ScenarioLabel::HandWritten,
        ScenarioLabel::Infographic,
        ScenarioLabel::Document,
        ScenarioLabel::Chart,
        ScenarioLabel::Table,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioLabel::Ads => "ads",
            ScenarioLabel::Book => "book",
            ScenarioLabel::Poster => "poster",
            ScenarioLabel::Natural => "natural",
            ScenarioLabel::Street => "street",
            ScenarioLabel::HandWritten => "hand-written",
            ScenarioLabel::Infographic => "infographic",
            ScenarioLabel::Document => "document",
            ScenarioLabel::Chart => "chart",
            ScenarioLabel::Table => "table",
        }
    }
}

impl fmt::Display for ScenarioLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioLabel {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| ScenarioError::UnknownLabel(s.to_string()))
    }
}

/// The six categories results are reported under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EvalCategory {
    #[serde(rename = "ads&book&poster")]
    AdsBookPoster,
    #[serde(rename = "chart&table")]
    ChartTable,
    #[serde(rename = "document")]
    Document,
    #[serde(rename = "hand-written")]
    HandWritten,
    #[serde(rename = "infographic")]
    Infographic,
    #[serde(rename = "natural&street")]
    NaturalStreet,
}

impl EvalCategory {
    pub const ALL: [EvalCategory; 6] = [
        EvalCategory::AdsBookPoster,
        EvalCategory::ChartTable,
        EvalCategory::Document,
        EvalCategory::HandWritten,
        EvalCategory::Infographic,
        EvalCategory::NaturalStreet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalCategory::AdsBookPoster => "ads&book&poster",
            EvalCategory::ChartTable => "chart&table",
            EvalCategory::Document => "document",
            EvalCategory::HandWritten => "hand-written",
            EvalCategory::Infographic => "infographic",
            EvalCategory::NaturalStreet => "natural&street",
        }
    }
}

impl fmt::Display for EvalCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Hard,
}

/// Documents and infographics go through the layout engine; everything else
/// is handled by spatial merging alone.
pub fn difficulty(s: ScenarioLabel) -> Difficulty {
    match s {
        ScenarioLabel::Document | ScenarioLabel::Infographic => Difficulty::Hard,
        ScenarioLabel::Ads
        | ScenarioLabel::Book
        | ScenarioLabel::Poster
        | ScenarioLabel::Natural
        | ScenarioLabel::Street
        | ScenarioLabel::HandWritten
        | ScenarioLabel::Chart
        | ScenarioLabel::Table => Difficulty::Easy,
    }
}

pub fn eval_category(s: ScenarioLabel) -> EvalCategory {
    match s {
        ScenarioLabel::Ads | ScenarioLabel::Book | ScenarioLabel::Poster => EvalCategory::AdsBookPoster,
        ScenarioLabel::Chart | ScenarioLabel::Table => EvalCategory::ChartTable,
        ScenarioLabel::Natural | ScenarioLabel::Street => EvalCategory::NaturalStreet,
        ScenarioLabel::Document => EvalCategory::Document,
        ScenarioLabel::HandWritten => EvalCategory::HandWritten,
        ScenarioLabel::Infographic => EvalCategory::Infographic,
    }
}

/// Label texts grouped by superclass, plus the prompt templates (`{}` marks
/// where the label goes). The adapter that computes text embeddings reads
/// this to know which prompts to encode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    pub templates: Vec<String>,
    pub classes: Vec<LabelClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelClass {
    pub superclass: ScenarioLabel,
    pub labels: Vec<String>,
}

const DEFAULT_LABELS: &str = include_str!("../data/scenario_labels.json");

impl Default for LabelConfig {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_LABELS).expect("bundled label config is valid")
    }
}

impl LabelConfig {
    /// Every `(label, superclass, prompt)` triple in bank order.
    pub fn prompts(&self) -> Vec<(String, ScenarioLabel, Vec<String>)> {
        self.classes
            .iter()
            .flat_map(|class| {
                class.labels.iter().map(move |label| {
                    let prompts = self.templates.iter().map(|t| t.replace("{}", label)).collect();
                    (label.clone(), class.superclass, prompts)
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelEntry {
    pub label_text: String,
    pub superclass: ScenarioLabel,
    /// One vector per prompt template.
    pub embeddings: Vec<Vec<f64>>,
}

/// Label embeddings, all of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelBank {
    dim: usize,
    entries: Vec<LabelEntry>,
}

impl LabelBank {
    pub fn new(entries: Vec<LabelEntry>) -> Result<Self, ScenarioError> {
        let first = entries.first().ok_or(ScenarioError::EmptyBank)?;
        let dim = first
            .embeddings
            .first()
            .ok_or_else(|| ScenarioError::NoVectors {
                label: first.label_text.clone(),
            })?
            .len();
        for entry in &entries {
            if entry.embeddings.is_empty() {
                return Err(ScenarioError::NoVectors {
                    label: entry.label_text.clone(),
                });
            }
            for v in &entry.embeddings {
                if v.len() != dim {
                    return Err(ScenarioError::DimMismatch {
                        expected: dim,
                        got: v.len(),
                        context: format!("label {:?}", entry.label_text),
                    });
                }
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[LabelEntry] {
        &self.entries
    }

    /// Superclasses no label maps to.
    pub fn missing_superclasses(&self) -> Vec<ScenarioLabel> {
        ScenarioLabel::ALL
            .into_iter()
            .filter(|s| !self.entries.iter().any(|e| e.superclass == *s))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembledLabel {
    pub label_text: String,
    pub superclass: ScenarioLabel,
    /// Unit-norm mean of the template vectors.
    pub vector: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Averages each label's template vectors and re-normalizes the mean.
pub fn ensemble(bank: &LabelBank) -> Result<Vec<EnsembledLabel>, ScenarioError> {
    bank.entries
        .iter()
        .map(|entry| {
            let n = entry.embeddings.len() as f64;
            let mut mean = vec![0.0; bank.dim];
            for v in &entry.embeddings {
                for (m, x) in mean.iter_mut().zip(v) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let len = norm(&mean);
            if len < DEGENERATE_NORM {
                return Err(ScenarioError::DegenerateLabel {
                    label: entry.label_text.clone(),
                });
            }
            mean.iter_mut().for_each(|m| *m /= len);
            Ok(EnsembledLabel {
                label_text: entry.label_text.clone(),
                superclass: entry.superclass,
                vector: mean,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub superclass: ScenarioLabel,
    /// Index of the winning label in bank order.
    pub label_index: usize,
    pub similarity: f64,
}

/// Cosine argmax over ensembled labels; the first label wins ties.
pub fn classify(image_vec: &[f64], labels: &[EnsembledLabel]) -> Result<Classification, ScenarioError> {
    let first = labels.first().ok_or(ScenarioError::EmptyBank)?;
    if image_vec.len() != first.vector.len() {
        return Err(ScenarioError::DimMismatch {
            expected: first.vector.len(),
            got: image_vec.len(),
            context: "image vector".into(),
        });
    }
    let len = norm(image_vec);
    if len < DEGENERATE_NORM {
        return Err(ScenarioError::ZeroImageVector);
    }
    let mut best: Option<Classification> = None;
    for (i, label) in labels.iter().enumerate() {
        let sim = dot(image_vec, &label.vector) / len;
        if best.as_ref().is_none_or(|b| sim > b.similarity) {
            best = Some(Classification {
                superclass: label.superclass,
                label_index: i,
                similarity: sim,
            });
        }
    }
    Ok(best.expect("non-empty labels"))
}

#[derive(Debug, Deserialize)]
struct RawEmbeddingFile {
    dim: usize,
    labels: Vec<RawLabel>,
    #[serde(default)]
    images: Vec<RawImage>,
}

#[derive(Debug, Deserialize)]
struct RawLabel {
    text: String,
    superclass: String,
    vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct RawImage {
    image_id: String,
    vector: Vec<f64>,
}

/// Parsed embedding interchange document.
#[derive(Debug, Clone)]
pub struct EmbeddingFile {
    pub bank: LabelBank,
    pub images: Vec<(String, Vec<f64>)>,
}

pub fn parse_embeddings(bytes: &[u8]) -> Result<EmbeddingFile, ScenarioError> {
    let raw: RawEmbeddingFile =
        serde_json::from_slice(bytes).map_err(|e| ScenarioError::Format(e.to_string()))?;
    let entries = raw
        .labels
        .into_iter()
        .map(|l| {
            Ok(LabelEntry {
                superclass: l.superclass.parse()?,
                label_text: l.text,
                embeddings: l.vectors,
            })
        })
        .collect::<Result<Vec<_>, ScenarioError>>()?;
    let bank = LabelBank::new(entries)?;
    if bank.dim() != raw.dim {
        return Err(ScenarioError::DimMismatch {
            expected: raw.dim,
            got: bank.dim(),
            context: "label vectors vs declared dim".into(),
        });
    }
    let mut images = Vec::with_capacity(raw.images.len());
    for img in raw.images {
        if img.vector.len() != raw.dim {
            return Err(ScenarioError::DimMismatch {
                expected: raw.dim,
                got: img.vector.len(),
                context: format!("image {:?}", img.image_id),
            });
        }
        images.push((img.image_id, img.vector));
    }
    Ok(EmbeddingFile { bank, images })
}
