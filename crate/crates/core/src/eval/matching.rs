//! One-to-one matching of predicted boxes to gold boxes by IoU.

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::geometry::{iou, BBox, GeometryError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMethod {
    /// Assignment with the largest total IoU.
    #[default]
    Optimal,
    /// Repeatedly takes the highest-IoU pair among unmatched boxes.
    Greedy,
}

impl std::str::FromStr for MatchMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "optimal" => Ok(MatchMethod::Optimal),
            "greedy" => Ok(MatchMethod::Greedy),
            _ => Err(format!("unknown match method {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// (gold index, pred index), sorted by gold index. Only pairs with IoU > 0.
    pub pairs: Vec<(usize, usize)>,
    pub ious: Vec<f64>,
    pub method: MatchMethod,
}

impl Matching {
    pub fn total_iou(&self) -> f64 {
        self.ious.iter().sum()
    }

    pub fn pred_for(&self, gold: usize) -> Option<usize> {
        self.pairs.iter().find(|(g, _)| *g == gold).map(|&(_, p)| p)
    }
}

pub fn iou_matrix(gold: &[BBox], pred: &[BBox]) -> Result<Vec<Vec<f64>>, GeometryError> {
    gold.iter().map(|g| pred.iter().map(|p| iou(g, p)).collect()).collect()
}

/// Minimum-cost assignment for `rows <= cols` by shortest augmenting paths
/// with potentials. Returns the column of each row.
fn assign_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    debug_assert!(n <= m);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Row-to-column assignment maximizing total weight on a rectangular matrix.
pub fn max_weight_assignment(w: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = w.len();
    let cols = w.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    if rows <= cols {
        let cost: Vec<Vec<f64>> = w.iter().map(|r| r.iter().map(|x| -x).collect()).collect();
        assign_min(&cost).into_iter().enumerate().collect()
    } else {
        let cost: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| -w[r][c]).collect()).collect();
        let mut pairs: Vec<(usize, usize)> = assign_min(&cost).into_iter().enumerate().map(|(c, r)| (r, c)).collect();
        pairs.sort_unstable();
        pairs
    }
}

fn greedy(w: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let mut cands: Vec<(f64, usize, usize)> = w
        .iter()
        .enumerate()
        .flat_map(|(g, row)| row.iter().enumerate().map(move |(p, &x)| (x, g, p)))
        .filter(|(x, _, _)| *x > 0.0)
        .collect();
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut gold_used = vec![false; w.len()];
    let mut pred_used = vec![false; w.first().map_or(0, Vec::len)];
    let mut pairs = Vec::new();
    for (_, g, p) in cands {
        if !gold_used[g] && !pred_used[p] {
            gold_used[g] = true;
            pred_used[p] = true;
            pairs.push((g, p));
        }
    }
    pairs.sort_unstable();
    pairs
}

pub fn match_boxes(gold: &[BBox], pred: &[BBox], method: MatchMethod) -> Result<Matching, GeometryError> {
    let w = iou_matrix(gold, pred)?;
    let pairs = match method {
        MatchMethod::Optimal => max_weight_assignment(&w),
        MatchMethod::Greedy => greedy(&w),
    };
    let (pairs, ious) = pairs.into_iter().map(|(g, p)| ((g, p), w[g][p])).filter(|(_, x)| *x > 0.0).unzip();
    Ok(Matching { pairs, ious, method })
}

/// Mean matched IoU per gold box; unmatched gold boxes count 0 and unmatched
/// predictions are ignored.
pub fn grounding_iou(gold: &[BBox], pred: &[BBox], method: MatchMethod) -> Result<f64, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::NoGold);
    }
    Ok(match_boxes(gold, pred, method)?.total_iou() / gold.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(c: [f64; 4]) -> BBox {
        BBox::abs(c[0], c[1], c[2], c[3])
    }

    #[test]
    fn two_by_two_example() {
        let gold = [b([0.0, 0.0, 10.0, 10.0]), b([20.0, 20.0, 30.0, 30.0])];
        let pred = [b([1.0, 1.0, 10.0, 10.0]), b([20.0, 20.0, 29.0, 29.0])];
        for method in [MatchMethod::Optimal, MatchMethod::Greedy] {
            let m = match_boxes(&gold, &pred, method).unwrap();
            assert_eq!(m.pairs, vec![(0, 0), (1, 1)]);
            assert_eq!(m.ious, vec![0.81, 0.81]);
        }
        assert!((grounding_iou(&gold, &pred, MatchMethod::Optimal).unwrap() - 0.81).abs() < 1e-12);
    }

    #[test]
    fn trivial_cases() {
        let gold = [b([0.0, 0.0, 10.0, 10.0]), b([20.0, 20.0, 30.0, 30.0])];
        assert!(match_boxes(&gold, &[], MatchMethod::Optimal).unwrap().pairs.is_empty());
        assert_eq!(grounding_iou(&gold, &[], MatchMethod::Optimal).unwrap(), 0.0);
        let m = match_boxes(&gold, &gold, MatchMethod::Optimal).unwrap();
        assert_eq!(m.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(m.ious, vec![1.0, 1.0]);
        assert_eq!(grounding_iou(&gold, &gold, MatchMethod::Optimal).unwrap(), 1.0);
        assert_eq!(grounding_iou(&[], &gold, MatchMethod::Optimal), Err(EvalError::NoGold));
    }

    #[test]
    fn zero_iou_pairs_are_dropped() {
        let gold = [b([0.0, 0.0, 10.0, 10.0])];
        let pred = [b([50.0, 50.0, 60.0, 60.0])];
        assert!(match_boxes(&gold, &pred, MatchMethod::Optimal).unwrap().pairs.is_empty());
    }

    #[test]
    fn optimal_beats_greedy_on_crafted_case() {
        // greedy grabs the 0.9 pair and leaves the other gold box with nothing
        let w = vec![vec![0.9, 0.8], vec![0.7, 0.0]];
        assert_eq!(greedy(&w), vec![(0, 0)]);
        assert_eq!(max_weight_assignment(&w), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn rectangular_assignments() {
        let tall = vec![vec![0.1], vec![0.9], vec![0.5]];
        assert_eq!(max_weight_assignment(&tall), vec![(1, 0)]);
        let wide = vec![vec![0.1, 0.9, 0.5]];
        assert_eq!(max_weight_assignment(&wide), vec![(0, 1)]);
    }

    fn brute_force(w: &[Vec<f64>]) -> f64 {
        fn go(w: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
            if row == w.len() {
                return 0.0;
            }
            let mut best = go(w, row + 1, used);
            for c in 0..used.len() {
                if !used[c] {
                    used[c] = true;
                    best = best.max(w[row][c] + go(w, row + 1, used));
                    used[c] = false;
                }
            }
            best
        }
        let cols = w.first().map_or(0, Vec::len);
        go(w, 0, &mut vec![false; cols])
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0u32..40, 0u32..40, 1u32..25, 1u32..25).prop_map(|(x, y, w, h)| BBox::abs(x as f64, y as f64, (x + w) as f64, (y + h) as f64))
    }

    proptest! {
        #[test]
        fn optimal_matches_brute_force(gold in prop::collection::vec(arb_box(), 0..6), pred in prop::collection::vec(arb_box(), 0..6)) {
            let w = iou_matrix(&gold, &pred).unwrap();
            let opt = match_boxes(&gold, &pred, MatchMethod::Optimal).unwrap();
            let gr = match_boxes(&gold, &pred, MatchMethod::Greedy).unwrap();
            prop_assert!((opt.total_iou() - brute_force(&w)).abs() < 1e-9);
            prop_assert!(opt.total_iou() + 1e-12 >= gr.total_iou());
            prop_assert!(gr.total_iou() >= 0.0);
        }

        #[test]
        fn matchings_are_one_to_one(gold in prop::collection::vec(arb_box(), 0..6), pred in prop::collection::vec(arb_box(), 0..6)) {
            for method in [MatchMethod::Optimal, MatchMethod::Greedy] {
                let m = match_boxes(&gold, &pred, method).unwrap();
                let mut g: Vec<usize> = m.pairs.iter().map(|p| p.0).collect();
                let mut p: Vec<usize> = m.pairs.iter().map(|p| p.1).collect();
                g.dedup();
                p.sort_unstable();
                p.dedup();
                prop_assert_eq!(g.len(), m.pairs.len());
                prop_assert_eq!(p.len(), m.pairs.len());
                prop_assert!(m.ious.iter().all(|&x| x > 0.0 && x <= 1.0));
            }
        }

        #[test]
        fn improving_a_matched_prediction_never_hurts(
            gold in prop::collection::vec(arb_box(), 1..5),
            pred in prop::collection::vec(arb_box(), 1..5),
        ) {
            let before = grounding_iou(&gold, &pred, MatchMethod::Optimal).unwrap();
            let m = match_boxes(&gold, &pred, MatchMethod::Optimal).unwrap();
            if let Some(&(g, p)) = m.pairs.first() {
                let mut better = pred.clone();
                better[p] = gold[g];
                let after = grounding_iou(&gold, &better, MatchMethod::Optimal).unwrap();
                prop_assert!(after + 1e-12 >= before);
            }
        }
    }
}
