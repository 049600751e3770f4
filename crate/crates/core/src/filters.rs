//! Coarse image filtering on raw OCR output.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::OcrLine;
use crate::geometry::ImageDims;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("repetition_len must be at least 2, got {0}")]
    RepetitionLen(usize),
    #[error("coverage_threshold must lie in (0, 1), got {0}")]
    Coverage(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterReason {
    EmptyOcr,
    Repetition,
    LowCoverage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub keep: bool,
    pub reasons: Vec<FilterReason>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterParams {
    /// Shortest run of one repeated character that rejects an image.
    pub repetition_len: usize,
    /// Minimum share of the image area covered by text boxes.
    pub coverage_threshold: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            repetition_len: 3,
            coverage_threshold: 0.03,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<(), FilterError> {
        if self.repetition_len < 2 {
            return Err(FilterError::RepetitionLen(self.repetition_len));
        }
        if !(self.coverage_threshold > 0.0 && self.coverage_threshold < 1.0) {
            return Err(FilterError::Coverage(self.coverage_threshold));
        }
        Ok(())
    }
}

/// True when some non-whitespace character repeats `k` or more times in a row.
/// Whitespace never forms a run and breaks any run in progress.
pub fn detect_repetition(text: &str, k: usize) -> bool {
    let mut prev: Option<char> = None;
    let mut run = 0;
    for c in text.chars() {
        if c.is_whitespace() {
            prev = None;
            run = 0;
            continue;
        }
        if prev == Some(c) {
            run += 1;
        } else {
            prev = Some(c);
            run = 1;
        }
        if run >= k {
            return true;
        }
    }
    false
}

/// Summed line-box area over image area. Overlapping boxes count twice.
pub fn text_coverage(lines: &[OcrLine], dims: ImageDims) -> f64 {
    lines.iter().map(|l| l.bbox.area()).sum::<f64>() / dims.area()
}

/// Applies the three exclusion rules. Coverage is only judged when there is
/// at least one line, so an empty image is rejected for `EmptyOcr` alone.
pub fn check_image(lines: &[OcrLine], dims: ImageDims, p: &FilterParams) -> FilterVerdict {
    let mut reasons = Vec::new();
    if lines.is_empty() {
        reasons.push(FilterReason::EmptyOcr);
    } else {
        if lines.iter().any(|l| detect_repetition(&l.text, p.repetition_len)) {
            reasons.push(FilterReason::Repetition);
        }
        if text_coverage(lines, dims) < p.coverage_threshold {
            reasons.push(FilterReason::LowCoverage);
        }
    }
    FilterVerdict {
        keep: reasons.is_empty(),
        reasons,
    }
}
