//! Per-image scoring, category aggregation and the evaluation report.

use std::collections::{BTreeMap, HashMap};

use log::warn;
use serde::{Deserialize, Serialize};

use super::bleu::{BleuStats, Smoothing};
use super::matching::{match_boxes, MatchMethod, Matching};
use super::tokenize::TokenizerMode;
use super::EvalError;
use crate::instruct::{GoldRecord, InstructionInstance, Task};
use crate::par::{self, Exec};
use crate::predparse::{parse_output, ParseStrictness, PredictionRecord, RawPrediction};
use crate::scenario::{eval_category, EvalCategory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub method: MatchMethod,
    pub smoothing: Smoothing,
    /// Pair translations by position when box matching finds nothing.
    pub fallback: bool,
    /// Count unmatched predictions against both IoU and BLEU.
    pub penalize_extra: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            method: MatchMethod::Optimal,
            smoothing: Smoothing::None,
            fallback: true,
            penalize_extra: false,
        }
    }
}

/// BLEU over one region prediction per gold translation.
pub fn evaluate_region<G: AsRef<str>>(
    preds: &[PredictionRecord],
    golds: &[G],
    mode: TokenizerMode,
    smoothing: Smoothing,
) -> Result<f64, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::CountMismatch {
            queries: golds.len(),
            records: preds.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::NoPairs);
    }
    let stats: BleuStats = preds
        .iter()
        .zip(golds)
        .map(|(p, g)| BleuStats::from_pair(&p.translation, g.as_ref(), mode))
        .sum();
    Ok(stats.score(smoothing))
}

/// Full-image scores of one image, kept as sums so images can be pooled.
#[derive(Debug, Clone, PartialEq)]
pub struct FullImageScore {
    pub bleu: BleuStats,
    pub iou_sum: f64,
    /// Gold boxes, plus unmatched predictions when those are penalized.
    pub iou_weight: usize,
    pub matching: Matching,
    pub fallback_used: bool,
    /// (hypothesis, reference) segments behind `bleu`.
    pub pairs: Vec<(String, String)>,
}

impl FullImageScore {
    pub fn iou(&self) -> f64 {
        if self.iou_weight == 0 {
            0.0
        } else {
            self.iou_sum / self.iou_weight as f64
        }
    }
}

/// Scores one image. Returns `None` (with a warning) when there is no gold.
pub fn score_fullimage_image(
    gold: &[GoldRecord],
    preds: &[PredictionRecord],
    mode: TokenizerMode,
    opts: &EvalOptions,
) -> Result<Option<FullImageScore>, EvalError> {
    if gold.is_empty() {
        warn!("image without gold regions skipped");
        return Ok(None);
    }
    let boxed: Vec<usize> = (0..preds.len()).filter(|&i| preds[i].bbox.is_some()).collect();
    let pred_boxes: Vec<_> = boxed.iter().map(|&i| preds[i].bbox.expect("filtered")).collect();
    let gold_boxes: Vec<_> = gold.iter().map(|g| g.bbox).collect();
    let local = match_boxes(&gold_boxes, &pred_boxes, opts.method)?;
    let matching = Matching {
        pairs: local.pairs.iter().map(|&(g, p)| (g, boxed[p])).collect(),
        ious: local.ious.clone(),
        method: local.method,
    };

    let mut bleu = BleuStats::default();
    let mut pairs = Vec::new();
    let mut add = |hyp: &str, reference: &str| {
        bleu += BleuStats::from_pair(hyp, reference, mode);
        pairs.push((hyp.to_string(), reference.to_string()));
    };
    let mut pred_used = vec![false; preds.len()];
    let fallback_used = matching.pairs.is_empty() && opts.fallback;
    if fallback_used {
        for (i, g) in gold.iter().enumerate() {
            let hyp = preds.get(i).map_or("", |p| p.translation.as_str());
            add(hyp, &g.translation);
            if i < preds.len() {
                pred_used[i] = true;
            }
        }
    } else {
        for (gi, g) in gold.iter().enumerate() {
            let hyp = match matching.pred_for(gi) {
                Some(p) => {
                    pred_used[p] = true;
                    preds[p].translation.as_str()
                }
                None => "",
            };
            add(hyp, &g.translation);
        }
    }

    let mut iou_weight = gold.len();
    if opts.penalize_extra {
        for (p, used) in preds.iter().zip(&pred_used) {
            if !used {
                add(&p.translation, "");
            }
        }
        let matched_preds = matching.pairs.len();
        iou_weight += preds.len() - matched_preds;
    }
    Ok(Some(FullImageScore {
        bleu,
        iou_sum: matching.total_iou(),
        iou_weight,
        matching,
        fallback_used,
        pairs,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FullImageMetrics {
    pub bleu: f64,
    pub iou: f64,
}

/// Corpus BLEU pooled over images and IoU weighted by gold box count.
pub fn evaluate_fullimage(
    images: &[(Vec<GoldRecord>, Vec<PredictionRecord>)],
    mode: TokenizerMode,
    opts: &EvalOptions,
) -> Result<FullImageMetrics, EvalError> {
    let mut bleu = BleuStats::default();
    let (mut iou_sum, mut weight) = (0.0, 0);
    for (gold, preds) in images {
        if let Some(s) = score_fullimage_image(gold, preds, mode, opts)? {
            bleu += s.bleu;
            iou_sum += s.iou_sum;
            weight += s.iou_weight;
        }
    }
    if weight == 0 {
        return Err(EvalError::NoPairs);
    }
    Ok(FullImageMetrics {
        bleu: bleu.score(opts.smoothing),
        iou: iou_sum / weight as f64,
    })
}

/// Sums for one image, ready to be pooled by category.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageResult {
    pub image_id: String,
    pub category: Option<EvalCategory>,
    pub region: Option<(BleuStats, usize)>,
    pub full: Option<(BleuStats, f64, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionMetrics {
    pub bleu: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FullMetrics {
    pub bleu: f64,
    pub iou: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryReport {
    pub n_images: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full_image: Option<FullMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverallReport {
    pub categories: usize,
    pub region: Option<f64>,
    pub full_image: Option<FullImageMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_category: BTreeMap<EvalCategory, CategoryReport>,
    pub overall: OverallReport,
    pub config: EvalOptions,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Unweighted mean over the categories that have the metric.
pub fn overall(per_category: &BTreeMap<EvalCategory, CategoryReport>) -> OverallReport {
    let region = mean(per_category.values().filter_map(|c| c.region.map(|r| r.bleu)));
    let full_bleu = mean(per_category.values().filter_map(|c| c.full_image.map(|f| f.bleu)));
    let full_iou = mean(per_category.values().filter_map(|c| c.full_image.map(|f| f.iou)));
    OverallReport {
        categories: per_category.len(),
        region,
        full_image: full_bleu.zip(full_iou).map(|(bleu, iou)| FullImageMetrics { bleu, iou }),
    }
}

#[derive(Default)]
struct Accum {
    images: usize,
    region: BleuStats,
    region_n: usize,
    full: BleuStats,
    full_n: usize,
    iou_sum: f64,
    iou_weight: usize,
}

pub fn aggregate(results: &[ImageResult], opts: &EvalOptions) -> EvalReport {
    let mut acc: BTreeMap<EvalCategory, Accum> = BTreeMap::new();
    for r in results {
        let Some(cat) = r.category else {
            warn!("{}: no evaluation category, left out of the report", r.image_id);
            continue;
        };
        let a = acc.entry(cat).or_default();
        a.images += 1;
        if let Some((s, n)) = r.region {
            a.region += s;
            a.region_n += n;
        }
        if let Some((s, iou_sum, w)) = r.full {
            a.full += s;
            a.full_n += 1;
            a.iou_sum += iou_sum;
            a.iou_weight += w;
        }
    }
    for cat in EvalCategory::ALL {
        if !acc.contains_key(&cat) {
            warn!("category {cat} has no images, left out of the overall mean");
        }
    }
    let per_category: BTreeMap<EvalCategory, CategoryReport> = acc
        .into_iter()
        .map(|(cat, a)| {
            let report = CategoryReport {
                n_images: a.images,
                region: (a.region_n > 0).then(|| RegionMetrics {
                    bleu: a.region.score(opts.smoothing),
                    n: a.region_n,
                }),
                full_image: (a.iou_weight > 0).then(|| FullMetrics {
                    bleu: a.full.score(opts.smoothing),
                    iou: a.iou_sum / a.iou_weight as f64,
                    n: a.full_n,
                }),
            };
            (cat, report)
        })
        .collect();
    EvalReport {
        overall: overall(&per_category),
        per_category,
        config: *opts,
    }
}

/// Per-image detail written alongside the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageDiagnostic {
    pub image_id: String,
    pub category: Option<EvalCategory>,
    pub region_bleu: Option<f64>,
    pub full_image_bleu: Option<f64>,
    pub iou: Option<f64>,
    pub fallback_used: bool,
    pub messages: Vec<String>,
}

/// One scored segment, for handing to external scorers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TextPair {
    pub image_id: String,
    pub task: Task,
    pub hypothesis: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub images: Vec<ImageDiagnostic>,
    pub pairs: Vec<TextPair>,
}

struct ImageGold<'a> {
    image_id: &'a str,
    region: Vec<&'a InstructionInstance>,
    full: Option<&'a InstructionInstance>,
}

type PredIndex<'a> = HashMap<(&'a str, Task), Vec<&'a RawPrediction>>;

fn parse_pred(
    inst: &InstructionInstance,
    pred: Option<&RawPrediction>,
    strictness: ParseStrictness,
    messages: &mut Vec<String>,
) -> Result<Vec<PredictionRecord>, EvalError> {
    let Some(pred) = pred else {
        messages.push(format!("{} prediction missing", inst.task.as_str()));
        return Ok(Vec::new());
    };
    let outcome = parse_output(&pred.output, inst.task, inst.format, inst.dialect, inst.dims, strictness).map_err(|e| EvalError::Parse {
        image_id: inst.image_id.clone(),
        message: e.to_string(),
    })?;
    messages.extend(outcome.diagnostics.into_iter().map(|d| format!("{}: {d}", inst.task.as_str())));
    Ok(outcome.records)
}

fn evaluate_image(
    img: &ImageGold<'_>,
    preds: &PredIndex<'_>,
    opts: &EvalOptions,
    strictness: ParseStrictness,
) -> Result<(ImageResult, ImageDiagnostic, Vec<TextPair>), EvalError> {
    let first = img.region.first().copied().or(img.full).expect("image has at least one instance");
    let scenario = first.scenario.ok_or_else(|| EvalError::MissingScenario(img.image_id.to_string()))?;
    let category = eval_category(scenario);
    let mode = TokenizerMode::for_target(first.lang_pair);
    let mut messages = Vec::new();
    let mut pairs = Vec::new();
    let mut pair = |task: Task, hypothesis: &str, reference: &str| {
        pairs.push(TextPair {
            image_id: img.image_id.to_string(),
            task,
            hypothesis: hypothesis.to_string(),
            reference: reference.to_string(),
        })
    };
    let empty = Vec::new();

    let region_preds = preds.get(&(img.image_id, Task::Region)).unwrap_or(&empty);
    if region_preds.len() > img.region.len() {
        messages.push(format!("{} extra region predictions ignored", region_preds.len() - img.region.len()));
    }
    let mut region = None;
    if !img.region.is_empty() {
        let mut stats = BleuStats::default();
        for (k, inst) in img.region.iter().enumerate() {
            let records = parse_pred(inst, region_preds.get(k).copied(), strictness, &mut messages)?;
            if records.len() > 1 {
                messages.push(format!("region {k}: {} records, first one scored", records.len()));
            }
            let hyp = records.first().map_or("", |r| r.translation.as_str());
            stats += BleuStats::from_pair(hyp, &inst.gold[0].translation, mode);
            pair(Task::Region, hyp, &inst.gold[0].translation);
        }
        region = Some((stats, img.region.len()));
    }

    let mut full = None;
    let mut full_score = None;
    if let Some(inst) = img.full {
        let fp = preds.get(&(img.image_id, Task::FullImage)).unwrap_or(&empty);
        if fp.len() > 1 {
            messages.push(format!("{} extra full-image predictions ignored", fp.len() - 1));
        }
        let records = parse_pred(inst, fp.first().copied(), strictness, &mut messages)?;
        if let Some(s) = score_fullimage_image(&inst.gold, &records, mode, opts)? {
            for (h, r) in &s.pairs {
                pair(Task::FullImage, h, r);
            }
            full = Some((s.bleu, s.iou_sum, s.iou_weight));
            full_score = Some(s);
        }
    }

    let diag = ImageDiagnostic {
        image_id: img.image_id.to_string(),
        category: Some(category),
        region_bleu: region.map(|(s, _)| s.score(opts.smoothing)),
        full_image_bleu: full_score.as_ref().map(|s| s.bleu.score(opts.smoothing)),
        iou: full_score.as_ref().map(FullImageScore::iou),
        fallback_used: full_score.as_ref().is_some_and(|s| s.fallback_used),
        messages,
    };
    let result = ImageResult {
        image_id: img.image_id.to_string(),
        category: Some(category),
        region,
        full,
    };
    Ok((result, diag, pairs))
}

/// Scores a prediction file against gold instances. The k-th prediction for
/// an (image, task) answers the k-th gold instance for it; a missing
/// prediction scores as an empty answer.
pub fn evaluate_instances(
    gold: &[InstructionInstance],
    preds: &[RawPrediction],
    opts: &EvalOptions,
    strictness: ParseStrictness,
    exec: Exec,
) -> Result<Evaluation, EvalError> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_image: HashMap<&str, ImageGold<'_>> = HashMap::new();
    for inst in gold {
        let entry = by_image.entry(inst.image_id.as_str()).or_insert_with(|| {
            order.push(inst.image_id.as_str());
            ImageGold {
                image_id: inst.image_id.as_str(),
                region: Vec::new(),
                full: None,
            }
        });
        match inst.task {
            Task::Region => entry.region.push(inst),
            Task::FullImage => {
                if entry.full.replace(inst).is_some() {
                    warn!("{}: several full-image gold instances, the last one is used", inst.image_id);
                }
            }
        }
    }
    let mut index: PredIndex<'_> = HashMap::new();
    for p in preds {
        if !by_image.contains_key(p.image_id.as_str()) {
            warn!("{}: prediction for an image without gold, ignored", p.image_id);
            continue;
        }
        index.entry((p.image_id.as_str(), p.task)).or_default().push(p);
    }
    let images: Vec<ImageGold<'_>> = order.into_iter().map(|id| by_image.remove(id).expect("ordered id")).collect();
    let scored = par::map_result(exec, &images, |img| evaluate_image(img, &index, opts, strictness))?;
    let mut results = Vec::with_capacity(scored.len());
    let mut diagnostics = Vec::with_capacity(scored.len());
    let mut pairs = Vec::new();
    for (r, d, p) in scored {
        results.push(r);
        diagnostics.push(d);
        pairs.extend(p);
    }
    Ok(Evaluation {
        report: aggregate(&results, opts),
        images: diagnostics,
        pairs,
    })
}
