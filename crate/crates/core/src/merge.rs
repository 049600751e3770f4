//! Spatial merge of line-level OCR boxes into reading-ordered text blocks.
//!
//! Grouping is greedy and sequential: a group is seeded with the first
//! ungrouped line, then grows one line at a time by absorbing the first
//! ungrouped line (in input order) that touches the group's extent widened
//! by `x_ths * h` horizontally and `y_ths * h` vertically, where `h` is the
//! mean line height of the group so far. When nothing touches, the next
//! group is opened.
//!
//! Inside a group, text is read row by row: the row is every line whose
//! vertical center sits within `row_tolerance * h_top` of the topmost
//! remaining line, and the leftmost line of that row is emitted next.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LayoutBlock, OcrLine};
use crate::geometry::{union_box, BBox, GeometryError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MergeParamsError {
    #[error("{name} must be finite and non-negative, got {value}")]
    Negative { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeParams {
    pub x_ths: f64,
    pub y_ths: f64,
    /// Row band half-width, in units of the topmost line's height.
    pub row_tolerance: f64,
    /// Inserted between line texts. Empty for scripts written without spaces.
    pub joiner: String,
}

impl Default for MergeParams {
    fn default() -> Self {
        Self {
            x_ths: 1.0,
            y_ths: 0.5,
            row_tolerance: 0.5,
            joiner: " ".into(),
        }
    }
}

impl MergeParams {
    pub fn validate(&self) -> Result<(), MergeParamsError> {
        for (name, value) in [("x_ths", self.x_ths), ("y_ths", self.y_ths), ("row_tolerance", self.row_tolerance)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(MergeParamsError::Negative { name, value });
            }
        }
        Ok(())
    }

    pub fn cjk() -> Self {
        Self {
            joiner: String::new(),
            ..Self::default()
        }
    }
}

/// Per-line working record of the grouping loop.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingBox {
    pub text: String,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub h: f64,
    pub y_center: f64,
    /// 0 while ungrouped, otherwise the 1-based group number.
    pub group: usize,
    bbox: BBox,
}

impl WorkingBox {
    pub fn from_line(line: &OcrLine) -> Self {
        let b = line.bbox;
        Self {
            text: line.text.clone(),
            x_min: b.x1(),
            x_max: b.x2(),
            y_min: b.y1(),
            y_max: b.y2(),
            h: b.height(),
            y_center: (b.y1() + b.y2()) / 2.0,
            group: 0,
            bbox: b,
        }
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeGroup {
    pub members: Vec<WorkingBox>,
    pub bbox: BBox,
    pub text: String,
}

#[derive(Debug, Clone, Copy)]
struct Extent {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Extent {
    fn of(b: &WorkingBox) -> Self {
        Self {
            x_min: b.x_min,
            x_max: b.x_max,
            y_min: b.y_min,
            y_max: b.y_max,
        }
    }

    fn absorb(&mut self, b: &WorkingBox) {
        self.x_min = self.x_min.min(b.x_min);
        self.x_max = self.x_max.max(b.x_max);
        self.y_min = self.y_min.min(b.y_min);
        self.y_max = self.y_max.max(b.y_max);
    }

    fn touches(&self, b: &WorkingBox, dx: f64, dy: f64) -> bool {
        b.x_min <= self.x_max + dx && b.x_max >= self.x_min - dx && b.y_min <= self.y_max + dy && b.y_max >= self.y_min - dy
    }
}

/// Runs the grouping loop and records each box's group number in place.
/// Returns the groups as index lists, in creation order.
fn assign_groups(boxes: &mut [WorkingBox], p: &MergeParams) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut remaining = boxes.len();
    while remaining > 0 {
        let seed = boxes.iter().position(|b| b.group == 0).expect("ungrouped box exists");
        let g = groups.len() + 1;
        boxes[seed].group = g;
        remaining -= 1;
        let mut members = vec![seed];
        let mut extent = Extent::of(&boxes[seed]);
        let mut h_sum = boxes[seed].h;
        loop {
            let h_mean = h_sum / members.len() as f64;
            let (dx, dy) = (p.x_ths * h_mean, p.y_ths * h_mean);
            let Some(next) = boxes.iter().position(|b| b.group == 0 && extent.touches(b, dx, dy)) else {
                break;
            };
            boxes[next].group = g;
            remaining -= 1;
            extent.absorb(&boxes[next]);
            h_sum += boxes[next].h;
            members.push(next);
        }
        groups.push(members);
    }
    groups
}

/// Partitions line indices into spatial groups, in group-creation order.
/// Indices within a group are in assignment order.
pub fn group_boxes(lines: &[OcrLine], p: &MergeParams) -> Vec<Vec<usize>> {
    let mut boxes: Vec<WorkingBox> = lines.iter().map(WorkingBox::from_line).collect();
    assign_groups(&mut boxes, p)
}

/// Emits a group's text in reading order together with its enclosing box.
/// Returns `None` for an empty group.
pub fn order_and_merge(group: &[WorkingBox], p: &MergeParams) -> Option<MergeGroup> {
    let mut remaining: Vec<&WorkingBox> = group.iter().collect();
    let mut ordered = Vec::with_capacity(group.len());
    let mut text = String::new();
    let mut bbox: Option<BBox> = None;
    while !remaining.is_empty() {
        let top = remaining
            .iter()
            .copied()
            .reduce(|a, b| if b.y_center < a.y_center { b } else { a })
            .expect("non-empty");
        let band = p.row_tolerance * top.h;
        let top_center = top.y_center;
        let (pick, _) = remaining
            .iter()
            .enumerate()
            .filter(|(_, b)| (b.y_center - top_center).abs() <= band)
            .reduce(|a, b| if b.1.x_min < a.1.x_min { b } else { a })
            .expect("topmost box is in its own row");
        let chosen = remaining.remove(pick);
        if !text.is_empty() {
            text.push_str(&p.joiner);
        }
        text.push_str(&chosen.text);
        bbox = Some(match bbox {
            None => chosen.bbox,
            // group members share one coordinate space
            Some(acc) => union_box(&acc, &chosen.bbox).unwrap_or(acc),
        });
        ordered.push(chosen.clone());
    }
    Some(MergeGroup {
        members: ordered,
        bbox: bbox?,
        text: text.trim().to_string(),
    })
}

/// Groups lines and merges each group into one text block.
pub fn spatial_merge(lines: &[OcrLine], p: &MergeParams) -> Result<Vec<LayoutBlock>, GeometryError> {
    if let Some(first) = lines.first() {
        if let Some(other) = lines.iter().find(|l| l.bbox.space() != first.bbox.space()) {
            return Err(GeometryError::SpaceMismatch(first.bbox.space(), other.bbox.space()));
        }
    }
    Ok(merge_groups(lines, p).into_iter().map(|g| LayoutBlock::text(g.bbox, g.text)).collect())
}

/// Like [`spatial_merge`] but keeps the member lists.
pub fn merge_groups(lines: &[OcrLine], p: &MergeParams) -> Vec<MergeGroup> {
    let mut boxes: Vec<WorkingBox> = lines.iter().map(WorkingBox::from_line).collect();
    let groups = assign_groups(&mut boxes, p);
    groups
        .iter()
        .filter_map(|idx| {
            let members: Vec<WorkingBox> = idx.iter().map(|&i| boxes[i].clone()).collect();
            order_and_merge(&members, p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(text: &str, x1: f64, y1: f64, x2: f64, y2: f64) -> OcrLine {
        OcrLine::new(text, BBox::abs(x1, y1, x2, y2))
    }

    fn sorted(mut groups: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
        for g in &mut groups {
            g.sort_unstable();
        }
        groups
    }

    #[test]
    fn close_lines_group_together() {
        let p = MergeParams::default();
        let l1 = line("L1", 0.0, 0.0, 100.0, 10.0);
        let l2 = line("L2", 0.0, 12.0, 100.0, 22.0);
        assert_eq!(sorted(group_boxes(&[l1.clone(), l2.clone()], &p)), vec![vec![0, 1]]);
        let l3 = line("L3", 0.0, 40.0, 100.0, 50.0);
        assert_eq!(sorted(group_boxes(&[l1, l2, l3], &p)), vec![vec![0, 1], vec![2]]);
        assert!(group_boxes(&[], &p).is_empty());
    }

    #[test]
    fn reading_order_within_group() {
        let p = MergeParams::default();
        let lines = [
            line("Hello", 0.0, 0.0, 50.0, 10.0),
            line("World", 60.0, 0.0, 110.0, 10.0),
            line("Again", 0.0, 15.0, 110.0, 25.0),
        ];
        let blocks = spatial_merge(&lines, &p).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].text.as_deref(), Some("Hello World Again"));
        assert_eq!(blocks[0].bbox.coords(), [0.0, 0.0, 110.0, 25.0]);
    }

    #[test]
    fn single_box_is_identity() {
        let p = MergeParams::default();
        let l = line("  solo  ", 5.0, 6.0, 7.0, 8.0);
        let blocks = spatial_merge(&[l.clone()], &p).unwrap();
        assert_eq!(blocks[0].text.as_deref(), Some("solo"));
        assert_eq!(blocks[0].bbox, l.bbox);
    }

    #[test]
    fn leftmost_first_regardless_of_input_order() {
        let p = MergeParams::default();
        let lines = [line("right", 60.0, 0.0, 110.0, 10.0), line("left", 0.0, 1.0, 50.0, 11.0)];
        let blocks = spatial_merge(&lines, &p).unwrap();
        assert_eq!(blocks[0].text.as_deref(), Some("left right"));
    }

    #[test]
    fn two_columns_stay_apart() {
        let p = MergeParams::default();
        let lines = [
            line("a1", 0.0, 0.0, 100.0, 10.0),
            line("b1", 500.0, 0.0, 600.0, 10.0),
            line("a2", 0.0, 12.0, 100.0, 22.0),
            line("b2", 500.0, 12.0, 600.0, 22.0),
        ];
        let blocks = spatial_merge(&lines, &p).unwrap();
        let texts: Vec<_> = blocks.iter().map(|b| b.text.clone().unwrap()).collect();
        assert_eq!(texts, ["a1 a2", "b1 b2"]);
    }

    #[test]
    fn cjk_joiner_concatenates() {
        let lines = [line("你好", 0.0, 0.0, 20.0, 10.0), line("世界", 0.0, 11.0, 20.0, 21.0)];
        let blocks = spatial_merge(&lines, &MergeParams::cjk()).unwrap();
        assert_eq!(blocks[0].text.as_deref(), Some("你好世界"));
    }

    #[test]
    fn empty_input_yields_nothing() {
        assert!(spatial_merge(&[], &MergeParams::default()).unwrap().is_empty());
        assert!(order_and_merge(&[], &MergeParams::default()).is_none());
    }

    #[test]
    fn mixed_spaces_rejected() {
        let unit = OcrLine::new("u", BBox::new(0.0, 0.0, 0.1, 0.1, crate::geometry::CoordSpace::NormalizedUnit).unwrap());
        assert!(spatial_merge(&[line("a", 0.0, 0.0, 1.0, 1.0), unit], &MergeParams::default()).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(MergeParams::default().validate().is_ok());
        let bad = MergeParams { y_ths: -0.1, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    /// Direct transcription of the grouping loop over plain arrays, used as
    /// an independent reference for the production implementation.
    fn simulate(boxes: &[[f64; 4]], x_ths: f64, y_ths: f64) -> Vec<Vec<usize>> {
        let n = boxes.len();
        let mut group = vec![0usize; n];
        let mut g = 1;
        let mut out: Vec<Vec<usize>> = Vec::new();
        while group.iter().any(|&x| x == 0) {
            let members: Vec<usize> = (0..n).filter(|&i| group[i] == g).collect();
            if members.is_empty() {
                let first = (0..n).find(|&i| group[i] == 0).unwrap();
                group[first] = g;
                out.push(vec![first]);
                continue;
            }
            let hbar = members.iter().map(|&i| boxes[i][3] - boxes[i][1]).sum::<f64>() / members.len() as f64;
            let lo_x = members.iter().map(|&i| boxes[i][0]).fold(f64::INFINITY, f64::min) - x_ths * hbar;
            let hi_x = members.iter().map(|&i| boxes[i][2]).fold(f64::NEG_INFINITY, f64::max) + x_ths * hbar;
            let lo_y = members.iter().map(|&i| boxes[i][1]).fold(f64::INFINITY, f64::min) - y_ths * hbar;
            let hi_y = members.iter().map(|&i| boxes[i][3]).fold(f64::NEG_INFINITY, f64::max) + y_ths * hbar;
            let hit = (0..n).find(|&u| {
                group[u] == 0 && boxes[u][0] <= hi_x && boxes[u][2] >= lo_x && boxes[u][1] <= hi_y && boxes[u][3] >= lo_y
            });
            match hit {
                Some(u) => {
                    group[u] = g;
                    out.last_mut().unwrap().push(u);
                }
                None => g += 1,
            }
        }
        out
    }

    fn arb_layout() -> impl Strategy<Value = Vec<[f64; 4]>> {
        prop::collection::vec((0u32..300, 0u32..300, 5u32..80, 4u32..30), 0..9).prop_map(|v| {
            v.into_iter()
                .map(|(x, y, w, h)| [x as f64, y as f64, (x + w) as f64, (y + h) as f64])
                .collect()
        })
    }

    fn to_lines(boxes: &[[f64; 4]]) -> Vec<OcrLine> {
        boxes
            .iter()
            .enumerate()
            .map(|(i, b)| line(&format!("t{i}"), b[0], b[1], b[2], b[3]))
            .collect()
    }

    proptest! {
        #[test]
        fn matches_reference_simulator(boxes in arb_layout(), x_ths in 0.0..2.0f64, y_ths in 0.0..1.5f64) {
            let p = MergeParams { x_ths, y_ths, ..Default::default() };
            prop_assert_eq!(group_boxes(&to_lines(&boxes), &p), simulate(&boxes, x_ths, y_ths));
        }

        #[test]
        fn partition_and_union_properties(boxes in arb_layout()) {
            let p = MergeParams::default();
            let lines = to_lines(&boxes);
            let groups = merge_groups(&lines, &p);
            prop_assert!(groups.len() <= lines.len());
            let total: usize = groups.iter().map(|g| g.members.len()).sum();
            prop_assert_eq!(total, lines.len());
            for g in &groups {
                let u = g.members.iter().map(|m| m.bbox()).reduce(|a, b| union_box(&a, &b).unwrap()).unwrap();
                prop_assert_eq!(u, g.bbox);
            }
            // every line text (unique tokens) appears exactly once overall
            let all: Vec<String> = groups.iter().flat_map(|g| g.text.split(' ').map(str::to_string)).collect();
            let mut seen = all.clone();
            seen.sort();
            seen.dedup();
            prop_assert_eq!(seen.len(), lines.len());
            prop_assert_eq!(all.len(), lines.len());
        }

        #[test]
        fn rows_read_top_to_bottom(cells in prop::collection::vec((0u32..300, 0u32..200, 5u32..80), 0..9)) {
            // uniform line height, so row bands are comparable
            let p = MergeParams::default();
            let boxes: Vec<[f64; 4]> = cells
                .into_iter()
                .map(|(x, y, w)| [x as f64, y as f64, (x + w) as f64, y as f64 + 12.0])
                .collect();
            for g in merge_groups(&to_lines(&boxes), &p) {
                for (i, a) in g.members.iter().enumerate() {
                    for b in &g.members[i + 1..] {
                        let band = p.row_tolerance * 12.0;
                        // b is in a strictly higher, disjoint row yet emitted later
                        prop_assert!(b.y_center + band >= a.y_center - band);
                        if (a.y_center - b.y_center).abs() < 1e-9 {
                            prop_assert!(a.x_min <= b.x_min);
                        }
                    }
                }
            }
        }

        #[test]
        fn deterministic(boxes in arb_layout()) {
            let p = MergeParams::default();
            let lines = to_lines(&boxes);
            prop_assert_eq!(spatial_merge(&lines, &p).unwrap(), spatial_merge(&lines, &p).unwrap());
        }
    }
}
