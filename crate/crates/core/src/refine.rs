//! Difficulty-dependent block construction.
//!
//! Easy scenarios are spatially merged from OCR lines. Hard scenarios start
//! from the layout engine's blocks; OCR lines the engine missed are found by
//! box overlap, merged among themselves, and slotted back in reading order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ImageAnnotation, LayoutBlock, OcrLine};
use crate::geometry::{overlap_ratio, GeometryError};
use crate::merge::{spatial_merge, MergeParams, MergeParamsError};
use crate::scenario::{difficulty, Difficulty, ScenarioLabel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("{image_id}: hard scenario {scenario} requires layout blocks")]
    MissingBlocks { image_id: String, scenario: ScenarioLabel },
    #[error("{image_id}: no scenario label")]
    MissingScenario { image_id: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("coverage_tau must lie in (0, 1], got {0}")]
    Tau(f64),
    #[error(transparent)]
    Merge(#[from] MergeParamsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineParams {
    /// A line whose best block overlap reaches this ratio counts as covered.
    pub coverage_tau: f64,
    pub merge: MergeParams,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            coverage_tau: 0.5,
            merge: MergeParams::default(),
        }
    }
}

impl RefineParams {
    pub fn validate(&self) -> Result<(), RefineError> {
        if !(self.coverage_tau > 0.0 && self.coverage_tau <= 1.0) {
            return Err(RefineError::Tau(self.coverage_tau));
        }
        self.merge.validate()?;
        Ok(())
    }
}

/// Highest fraction of `line` covered by any single block; 0 with no blocks.
pub fn best_coverage(line: &OcrLine, blocks: &[LayoutBlock]) -> Result<f64, GeometryError> {
    blocks
        .iter()
        .map(|b| overlap_ratio(&line.bbox, &b.bbox))
        .try_fold(0.0_f64, |acc, r| r.map(|r| acc.max(r)))
}

/// Lines no block (of any kind) covers to at least `tau`.
pub fn find_omitted(lines: &[OcrLine], blocks: &[LayoutBlock], tau: f64) -> Result<Vec<OcrLine>, GeometryError> {
    let mut out = Vec::new();
    for line in lines {
        if best_coverage(line, blocks)? < tau {
            out.push(line.clone());
        }
    }
    Ok(out)
}

/// Stable sort by top edge, then left edge.
pub fn sort_reading_order(blocks: &mut [LayoutBlock]) {
    blocks.sort_by(|a, b| {
        a.bbox
            .y1()
            .total_cmp(&b.bbox.y1())
            .then(a.bbox.x1().total_cmp(&b.bbox.x1()))
    });
}

/// Appends merged blocks for omitted lines to the engine's blocks, then
/// sorts everything into reading order. Original blocks are not modified.
pub fn refine_blocks(lines: &[OcrLine], blocks: &[LayoutBlock], p: &RefineParams) -> Result<Vec<LayoutBlock>, RefineError> {
    let omitted = find_omitted(lines, blocks, p.coverage_tau)?;
    let mut out = blocks.to_vec();
    out.extend(spatial_merge(&omitted, &p.merge)?);
    sort_reading_order(&mut out);
    Ok(out)
}

/// Routes an image by scenario difficulty. `blocks` are the layout engine's
/// output and are required for hard scenarios only.
pub fn adaptive_process(
    annotation: &ImageAnnotation,
    blocks: Option<&[LayoutBlock]>,
    p: &RefineParams,
) -> Result<Vec<LayoutBlock>, RefineError> {
    let scenario = annotation.scenario.ok_or_else(|| RefineError::MissingScenario {
        image_id: annotation.image_id.clone(),
    })?;
    match difficulty(scenario) {
        Difficulty::Hard => {
            let blocks = blocks.ok_or_else(|| RefineError::MissingBlocks {
                image_id: annotation.image_id.clone(),
                scenario,
            })?;
            refine_blocks(annotation.lines(), blocks, p)
        }
        Difficulty::Easy => Ok(spatial_merge(annotation.lines(), &p.merge)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::BlockKind;
    use crate::geometry::{BBox, ImageDims};
    use proptest::prelude::*;

    fn line(text: &str, x1: f64, y1: f64, x2: f64, y2: f64) -> OcrLine {
        OcrLine::new(text, BBox::abs(x1, y1, x2, y2))
    }

    fn block(text: &str, x1: f64, y1: f64, x2: f64, y2: f64) -> LayoutBlock {
        LayoutBlock::text(BBox::abs(x1, y1, x2, y2), text)
    }

    #[test]
    fn omitted_examples() {
        let blocks = [block("b", 0.0, 0.0, 100.0, 50.0)];
        let inside = line("in", 10.0, 10.0, 90.0, 20.0);
        let below = line("out", 10.0, 60.0, 90.0, 70.0);
        assert!(find_omitted(&[inside.clone()], &blocks, 0.5).unwrap().is_empty());
        assert_eq!(find_omitted(&[below.clone()], &blocks, 0.5).unwrap(), vec![below.clone()]);
        assert_eq!(find_omitted(&[inside.clone(), below.clone()], &[], 0.5).unwrap().len(), 2);
    }

    #[test]
    fn image_blocks_count_as_cover() {
        let img = LayoutBlock {
            kind: BlockKind::Image,
            bbox: BBox::abs(0.0, 0.0, 100.0, 100.0),
            text: None,
            translation: None,
        };
        assert!(find_omitted(&[line("x", 5.0, 5.0, 50.0, 15.0)], &[img], 0.5).unwrap().is_empty());
    }

    #[test]
    fn refine_without_omissions_only_sorts() {
        let blocks = [block("second", 0.0, 100.0, 50.0, 120.0), block("first", 0.0, 0.0, 50.0, 20.0)];
        let out = refine_blocks(&[line("c", 1.0, 1.0, 40.0, 10.0)], &blocks, &RefineParams::default()).unwrap();
        assert_eq!(out, vec![blocks[1].clone(), blocks[0].clone()]);
    }

    #[test]
    fn stray_line_below_is_appended_last() {
        let blocks = [block("top", 0.0, 0.0, 100.0, 50.0)];
        let lines = [line("inside", 10.0, 10.0, 90.0, 20.0), line("stray", 10.0, 200.0, 90.0, 210.0)];
        let out = refine_blocks(&lines, &blocks, &RefineParams::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0], blocks[0]);
        assert_eq!(out[1].text.as_deref(), Some("stray"));
        assert_eq!(out[1].bbox.coords(), [10.0, 200.0, 90.0, 210.0]);
    }

    #[test]
    fn adjacent_omitted_lines_merge_into_one_block() {
        let blocks = [block("top", 0.0, 0.0, 100.0, 50.0)];
        let lines = [line("one", 0.0, 200.0, 100.0, 210.0), line("two", 0.0, 212.0, 100.0, 222.0)];
        let out = refine_blocks(&lines, &blocks, &RefineParams::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].text.as_deref(), Some("one two"));
    }

    fn annotation(scenario: ScenarioLabel, lines: Vec<OcrLine>) -> ImageAnnotation {
        let mut a = ImageAnnotation::new("img", ImageDims::new(1000, 1000).unwrap());
        a.scenario = Some(scenario);
        a.lines = Some(lines);
        a
    }

    #[test]
    fn easy_scenarios_merge_directly() {
        let lines = vec![
            line("SALE", 0.0, 0.0, 100.0, 20.0),
            line("TODAY", 0.0, 22.0, 100.0, 42.0),
            line("ONLY", 0.0, 44.0, 100.0, 64.0),
        ];
        let ann = annotation(ScenarioLabel::Poster, lines.clone());
        let p = RefineParams::default();
        let out = adaptive_process(&ann, None, &p).unwrap();
        assert_eq!(out, spatial_merge(&lines, &p.merge).unwrap());
        assert_eq!(out[0].text.as_deref(), Some("SALE TODAY ONLY"));
    }

    #[test]
    fn hard_scenarios_refine() {
        let ann = annotation(ScenarioLabel::Document, vec![line("stray", 0.0, 500.0, 80.0, 520.0)]);
        let blocks = [block("body", 0.0, 0.0, 500.0, 400.0)];
        let out = adaptive_process(&ann, Some(&blocks), &RefineParams::default()).unwrap();
        assert_eq!(out.len(), 2);
        let ann = annotation(ScenarioLabel::Infographic, vec![]);
        assert!(matches!(
            adaptive_process(&ann, None, &RefineParams::default()),
            Err(RefineError::MissingBlocks { .. })
        ));
    }

    #[test]
    fn tau_validation() {
        assert!(RefineParams::default().validate().is_ok());
        assert!(RefineParams { coverage_tau: 0.0, ..Default::default() }.validate().is_err());
        assert!(RefineParams { coverage_tau: 1.5, ..Default::default() }.validate().is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0u32..400, 0u32..400, 1u32..120, 1u32..60).prop_map(|(x, y, w, h)| BBox::abs(x as f64, y as f64, (x + w) as f64, (y + h) as f64))
    }

    proptest! {
        #[test]
        fn omitted_monotone_in_tau(
            boxes in prop::collection::vec(arb_box(), 0..8),
            block_boxes in prop::collection::vec(arb_box(), 0..4),
            t1 in 0.01..1.0f64,
            t2 in 0.01..1.0f64,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let lines: Vec<OcrLine> = boxes.into_iter().enumerate().map(|(i, b)| OcrLine::new(format!("w{i}"), b)).collect();
            let blocks: Vec<LayoutBlock> = block_boxes.into_iter().map(|b| LayoutBlock::text(b, "blk")).collect();
            let small = find_omitted(&lines, &blocks, lo).unwrap();
            let big = find_omitted(&lines, &blocks, hi).unwrap();
            for l in &small {
                prop_assert!(big.contains(l));
            }
        }

        #[test]
        fn conservation(
            boxes in prop::collection::vec(arb_box(), 0..8),
            block_boxes in prop::collection::vec(arb_box(), 0..4),
        ) {
            let p = RefineParams::default();
            let lines: Vec<OcrLine> = boxes.into_iter().enumerate().map(|(i, b)| OcrLine::new(format!("w{i}"), b)).collect();
            let blocks: Vec<LayoutBlock> = block_boxes.into_iter().map(|b| LayoutBlock::text(b, "blk")).collect();
            let out = refine_blocks(&lines, &blocks, &p).unwrap();
            for b in &blocks {
                prop_assert!(out.contains(b));
            }
            prop_assert!(out.len() >= blocks.len());
            let appended: Vec<&LayoutBlock> = out.iter().filter(|b| b.text.as_deref() != Some("blk")).collect();
            for l in &lines {
                let covered = best_coverage(l, &blocks).unwrap() >= p.coverage_tau;
                let hits = appended
                    .iter()
                    .filter(|b| b.text.as_deref().unwrap().split(' ').any(|w| w == l.text))
                    .count();
                prop_assert_eq!(hits, if covered { 0 } else { 1 });
            }
        }
    }
}
