//! Instruction instances: one region question per translated text block and
//! one full-image question per image, in a plain-text or JSON answer format,
//! with boxes rendered in the target model's dialect.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::{bbox_coords, ImageAnnotation, LangPair, LayoutBlock};
use crate::geometry::{convert, BBox, CoordSpace, ImageDims};
use crate::scenario::ScenarioLabel;

/// Separates source text from its translation in plain-text answers.
pub const TRANSLATION_SEP: &str = "<|translation|>";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstructError {
    #[error("{0}: no translated text blocks")]
    NoTranslatedBlocks(String),
    #[error("{0}: language pair not set")]
    MissingLangPair(String),
    #[error("invalid question pool: {0}")]
    Pool(String),
    #[error("instance record {record}: {message}")]
    Record { record: usize, message: String },
}

/// Surface syntax and coordinate space of boxes for one model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxDialect {
    /// `[0.13, 0.09, 0.28, 0.15]`, ratios with two decimals.
    PlainUnit,
    /// `<box>[[130, 90, 280, 150]]</box>`, integers in `[0, 1000]`.
    #[serde(rename = "boxed-1000")]
    Boxed1000,
    /// `<|det|>[130, 90, 280, 150]<|/det|>`, integers in `[0, 999]`.
    #[serde(rename = "det-999")]
    Det999,
    /// `[40, 553, 730, 596]`, integer pixels.
    Absolute,
}

impl BoxDialect {
    pub const ALL: [BoxDialect; 4] = [BoxDialect::PlainUnit, BoxDialect::Boxed1000, BoxDialect::Det999, BoxDialect::Absolute];

    pub fn space(self) -> CoordSpace {
        match self {
            BoxDialect::PlainUnit => CoordSpace::NormalizedUnit,
            BoxDialect::Boxed1000 => CoordSpace::Normalized1000,
            BoxDialect::Det999 => CoordSpace::Normalized999,
            BoxDialect::Absolute => CoordSpace::AbsolutePixels,
        }
    }

    /// Smallest representable step in the dialect's own space.
    pub fn quantum(self) -> f64 {
        match self {
            BoxDialect::PlainUnit => 0.01,
            _ => 1.0,
        }
    }

    /// Whether the dialect has its own wrapper tokens around the list.
    pub fn is_wrapped(self) -> bool {
        matches!(self, BoxDialect::Boxed1000 | BoxDialect::Det999)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BoxDialect::PlainUnit => "plain-unit",
            BoxDialect::Boxed1000 => "boxed-1000",
            BoxDialect::Det999 => "det-999",
            BoxDialect::Absolute => "absolute",
        }
    }

    fn wrap(self, list: &str) -> String {
        match self {
            BoxDialect::Boxed1000 => format!("<box>[{list}]</box>"),
            BoxDialect::Det999 => format!("<|det|>{list}<|/det|>"),
            _ => list.to_string(),
        }
    }
}

impl fmt::Display for BoxDialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BoxDialect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BoxDialect::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown box dialect {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceFormat {
    PlainText,
    Structured,
}

impl InstanceFormat {
    pub const ALL: [InstanceFormat; 2] = [InstanceFormat::PlainText, InstanceFormat::Structured];

    pub fn as_str(self) -> &'static str {
        match self {
            InstanceFormat::PlainText => "plain-text",
            InstanceFormat::Structured => "structured",
        }
    }
}

impl fmt::Display for InstanceFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InstanceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain-text" => Ok(InstanceFormat::PlainText),
            "structured" => Ok(InstanceFormat::Structured),
            _ => Err(format!("unknown instance format {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Region,
    FullImage,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Region => "region",
            Task::FullImage => "full-image",
        }
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "region" => Ok(Task::Region),
            "full-image" => Ok(Task::FullImage),
            _ => Err(format!("unknown task {s:?}")),
        }
    }
}

fn round_half_away(v: f64) -> i64 {
    // f64::round already rounds ties away from zero
    v.round() as i64
}

/// Box coordinates in the dialect's space, quantized as they would print.
pub fn quantized_coords(b: &BBox, dialect: BoxDialect, dims: ImageDims) -> [f64; 4] {
    let c = convert(b, dialect.space(), dims).coords();
    match dialect {
        BoxDialect::PlainUnit => c.map(|v| round_half_away(v * 100.0) as f64 / 100.0),
        _ => c.map(|v| round_half_away(v) as f64),
    }
}

/// Bare dialect form of a box, e.g. `[0.25, 0.25, 0.50, 0.50]` or
/// `<box>[[100, 200, 300, 400]]</box>`.
pub fn render_box(b: &BBox, dialect: BoxDialect, dims: ImageDims) -> String {
    let q = quantized_coords(b, dialect, dims);
    let list = match dialect {
        BoxDialect::PlainUnit => format!("[{:.2}, {:.2}, {:.2}, {:.2}]", q[0], q[1], q[2], q[3]),
        _ => format!("[{}, {}, {}, {}]", q[0] as i64, q[1] as i64, q[2] as i64, q[3] as i64),
    };
    dialect.wrap(&list)
}

/// Box as it appears inside questions and plain-text answers. List dialects
/// get a `Box(...)` marker; wrapped dialects already carry their own tokens.
pub fn box_token(b: &BBox, dialect: BoxDialect, dims: ImageDims) -> String {
    let rendered = render_box(b, dialect, dims);
    if dialect.is_wrapped() {
        rendered
    } else {
        format!("Box({rendered})")
    }
}

fn box_placeholder(dialect: BoxDialect) -> String {
    if dialect.is_wrapped() {
        dialect.wrap("[x1, y1, x2, y2]")
    } else {
        "Box([x1, y1, x2, y2])".into()
    }
}

/// Question templates. `{box}` marks where a region's box goes; `{source}`
/// and `{target}` expand to language names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionPool {
    pub region_questions: Vec<String>,
    pub fullimage_questions: Vec<String>,
}

const DEFAULT_QUESTIONS: &str = include_str!("../data/questions.json");

impl Default for QuestionPool {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_QUESTIONS).expect("bundled question pool is valid")
    }
}

impl QuestionPool {
    pub fn from_json(bytes: &[u8]) -> Result<Self, InstructError> {
        let pool: QuestionPool = serde_json::from_slice(bytes).map_err(|e| InstructError::Pool(e.to_string()))?;
        pool.validate()?;
        Ok(pool)
    }

    pub fn validate(&self) -> Result<(), InstructError> {
        if self.region_questions.is_empty() || self.fullimage_questions.is_empty() {
            return Err(InstructError::Pool("both question lists must be non-empty".into()));
        }
        if let Some(q) = self.region_questions.iter().find(|q| !q.contains("{box}")) {
            return Err(InstructError::Pool(format!("region question lacks {{box}}: {q:?}")));
        }
        if let Some(q) = self.fullimage_questions.iter().find(|q| q.contains("{box}")) {
            return Err(InstructError::Pool(format!("full-image question has {{box}}: {q:?}")));
        }
        Ok(())
    }
}

/// One gold region: absolute-pixel box, source text and translation.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldRecord {
    pub bbox: BBox,
    pub text: String,
    pub translation: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstructionInstance {
    pub image_id: String,
    pub task: Task,
    pub question: String,
    pub answer: String,
    pub gold: Vec<GoldRecord>,
    pub scenario: Option<ScenarioLabel>,
    pub lang_pair: LangPair,
    pub dims: ImageDims,
    pub dialect: BoxDialect,
    pub format: InstanceFormat,
    pub seed: u64,
}

/// Everything about the rendering that is shared by all instances of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    pub format: InstanceFormat,
    pub dialect: BoxDialect,
    pub seed: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            format: InstanceFormat::PlainText,
            dialect: BoxDialect::Absolute,
            seed: 0,
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325_u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Per-image, per-stream generator so results do not depend on processing order.
fn image_rng(seed: u64, image_id: &str, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(image_id.as_bytes()));
    rng.set_stream(stream);
    rng
}

/// Collapses line breaks and trims, so a field survives a line-oriented answer.
fn clean(s: &str) -> String {
    s.split(['\n', '\r']).map(str::trim).filter(|p| !p.is_empty()).collect::<Vec<_>>().join(" ")
}

fn fill(template: &str, pair: LangPair, boxed: Option<&str>) -> String {
    let q = template.replace("{source}", pair.source_name()).replace("{target}", pair.target_name());
    match boxed {
        Some(b) => q.replace("{box}", b),
        None => q,
    }
}

fn format_hint(task: Task, format: InstanceFormat, dialect: BoxDialect) -> String {
    let placeholder = box_placeholder(dialect);
    match (task, format) {
        (Task::Region, InstanceFormat::PlainText) => {
            format!("Output only the recognized text content and translation result in format: text {TRANSLATION_SEP} translation.")
        }
        (Task::FullImage, InstanceFormat::PlainText) => format!(
            "Return the recognized text content, translation result and boxes in format: text {TRANSLATION_SEP} translation {placeholder}, one region per line."
        ),
        (Task::Region, InstanceFormat::Structured) => format!(
            "Output result in the following JSON format (xxx is a text placeholder, x1,y1,x2,y2 are coordinate placeholders).{{\"bbox_2d\": {placeholder}, \"text_content\": xxx, \"translation\": xxx}}"
        ),
        (Task::FullImage, InstanceFormat::Structured) => format!(
            "Output result in the following JSON format (xxx is a text placeholder, x1,y1,x2,y2 are coordinate placeholders, ... means more regions may follow).[{{\"bbox_2d\": {placeholder}, \"text_content\": xxx, \"translation\": xxx}},...]"
        ),
    }
}

fn structured_object(g: &GoldRecord, dialect: BoxDialect, dims: ImageDims) -> String {
    let rendered = render_box(&g.bbox, dialect, dims);
    let bbox = if dialect.is_wrapped() {
        Value::String(rendered).to_string()
    } else {
        rendered
    };
    format!(
        "{{\"bbox_2d\": {bbox}, \"text_content\": {}, \"translation\": {}}}",
        Value::String(g.text.clone()),
        Value::String(g.translation.clone())
    )
}

/// Renders the answer for a list of gold records.
pub fn render_answer(task: Task, gold: &[GoldRecord], format: InstanceFormat, dialect: BoxDialect, dims: ImageDims) -> String {
    match (task, format) {
        (Task::Region, InstanceFormat::PlainText) => gold
            .first()
            .map(|g| format!("{} {TRANSLATION_SEP} {}", g.text, g.translation))
            .unwrap_or_default(),
        (Task::FullImage, InstanceFormat::PlainText) => gold
            .iter()
            .map(|g| format!("{} {TRANSLATION_SEP} {} {}", g.text, g.translation, box_token(&g.bbox, dialect, dims)))
            .collect::<Vec<_>>()
            .join("\n"),
        (Task::Region, InstanceFormat::Structured) => {
            gold.first().map(|g| structured_object(g, dialect, dims)).unwrap_or_default()
        }
        (Task::FullImage, InstanceFormat::Structured) => format!(
            "[{}]",
            gold.iter().map(|g| structured_object(g, dialect, dims)).collect::<Vec<_>>().join(", ")
        ),
    }
}

/// Gold records for the translated text blocks, in block order. Untranslated
/// blocks are skipped with a warning.
pub fn gold_records(ann: &ImageAnnotation) -> Vec<GoldRecord> {
    let mut out = Vec::new();
    for (i, block) in ann.blocks().iter().enumerate().filter(|(_, b)| b.is_text()) {
        let text = clean(block.text.as_deref().unwrap_or_default());
        match block.translation.as_deref().map(clean) {
            Some(t) if !t.is_empty() && !text.is_empty() => out.push(GoldRecord {
                bbox: block.bbox,
                text,
                translation: t,
            }),
            _ => warn!("{}: block {i} has no usable text or translation, skipped", ann.image_id),
        }
    }
    out
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &'a [String]) -> &'a str {
    &pool[rng.random_range(0..pool.len())]
}

pub fn build_region_instances(
    ann: &ImageAnnotation,
    pool: &QuestionPool,
    opts: &BuildOptions,
) -> Result<Vec<InstructionInstance>, InstructError> {
    let pair = ann.lang_pair.ok_or_else(|| InstructError::MissingLangPair(ann.image_id.clone()))?;
    let mut rng = image_rng(opts.seed, &ann.image_id, 0);
    let hint = format_hint(Task::Region, opts.format, opts.dialect);
    Ok(gold_records(ann)
        .into_iter()
        .map(|g| {
            let token = box_token(&g.bbox, opts.dialect, ann.dims);
            let question = format!("{} {hint}", fill(pick(&mut rng, &pool.region_questions), pair, Some(&token)));
            let gold = vec![g];
            InstructionInstance {
                image_id: ann.image_id.clone(),
                task: Task::Region,
                question,
                answer: render_answer(Task::Region, &gold, opts.format, opts.dialect, ann.dims),
                gold,
                scenario: ann.scenario,
                lang_pair: pair,
                dims: ann.dims,
                dialect: opts.dialect,
                format: opts.format,
                seed: opts.seed,
            }
        })
        .collect())
}

pub fn build_fullimage_instance(
    ann: &ImageAnnotation,
    pool: &QuestionPool,
    opts: &BuildOptions,
) -> Result<InstructionInstance, InstructError> {
    let pair = ann.lang_pair.ok_or_else(|| InstructError::MissingLangPair(ann.image_id.clone()))?;
    let gold = gold_records(ann);
    if gold.is_empty() {
        return Err(InstructError::NoTranslatedBlocks(ann.image_id.clone()));
    }
    let mut rng = image_rng(opts.seed, &ann.image_id, 1);
    let hint = format_hint(Task::FullImage, opts.format, opts.dialect);
    let question = format!("{} {hint}", fill(pick(&mut rng, &pool.fullimage_questions), pair, None));
    Ok(InstructionInstance {
        image_id: ann.image_id.clone(),
        task: Task::FullImage,
        question,
        answer: render_answer(Task::FullImage, &gold, opts.format, opts.dialect, ann.dims),
        gold,
        scenario: ann.scenario,
        lang_pair: pair,
        dims: ann.dims,
        dialect: opts.dialect,
        format: opts.format,
        seed: opts.seed,
    })
}

/// All instances for one image: region instances followed by the full-image
/// instance. Images with nothing translated yield an empty list.
pub fn build_instances(ann: &ImageAnnotation, pool: &QuestionPool, opts: &BuildOptions) -> Result<Vec<InstructionInstance>, InstructError> {
    let mut out = build_region_instances(ann, pool, opts)?;
    match build_fullimage_instance(ann, pool, opts) {
        Ok(inst) => out.push(inst),
        Err(InstructError::NoTranslatedBlocks(id)) => warn!("{id}: no translated blocks, no full-image instance"),
        Err(e) => return Err(e),
    }
    Ok(out)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TranslateError {
    #[error("translator timed out")]
    Timeout,
    #[error("no translation for {0:?}")]
    NotFound(String),
    #[error("translator failure: {0}")]
    Service(String),
}

/// A machine translation backend.
pub trait Translator: Send + Sync {
    fn translate(&self, text: &str, pair: LangPair) -> Result<String, TranslateError>;

    /// Backends that cannot take concurrent calls return true.
    fn is_serial(&self) -> bool {
        false
    }
}

/// Lookup-table translator for tests and offline runs.
#[derive(Debug, Clone, Default)]
pub struct DictionaryTranslator {
    entries: HashMap<String, String>,
    passthrough: bool,
}

impl DictionaryTranslator {
    pub fn new(entries: HashMap<String, String>) -> Self {
        Self { entries, passthrough: false }
    }

    /// Unknown texts translate to themselves instead of failing.
    pub fn passthrough(mut self) -> Self {
        self.passthrough = true;
        self
    }
}

impl Translator for DictionaryTranslator {
    fn translate(&self, text: &str, _pair: LangPair) -> Result<String, TranslateError> {
        match self.entries.get(text) {
            Some(t) => Ok(t.clone()),
            None if self.passthrough => Ok(text.to_string()),
            None => Err(TranslateError::NotFound(text.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslateOutcome {
    pub blocks: Vec<LayoutBlock>,
    /// Block index and failure for each block left untranslated.
    pub errors: Vec<(usize, TranslateError)>,
}

/// Fills in missing translations of text blocks. Blocks that already have a
/// translation are not sent to the translator.
pub fn translate_blocks(blocks: &[LayoutBlock], pair: LangPair, translator: &dyn Translator) -> TranslateOutcome {
    let mut out = TranslateOutcome {
        blocks: blocks.to_vec(),
        errors: Vec::new(),
    };
    for (i, block) in out.blocks.iter_mut().enumerate() {
        if !block.is_text() || block.translation.is_some() {
            continue;
        }
        let Some(text) = block.text.as_deref() else { continue };
        match translator.translate(text, pair) {
            Ok(t) => block.translation = Some(t),
            Err(e) => {
                warn!("block {i}: {e}");
                out.errors.push((i, e));
            }
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct GoldOut {
    bbox: [f64; 4],
    text: String,
    translation: String,
}

#[derive(Serialize)]
struct InstanceOut<'a> {
    image_id: &'a str,
    task: Task,
    question: &'a str,
    answer: &'a str,
    gold: Vec<serde_json::Map<String, Value>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scenario: Option<ScenarioLabel>,
    lang_pair: LangPair,
    width: u32,
    height: u32,
    dialect: BoxDialect,
    format: InstanceFormat,
    seed: u64,
}

#[derive(Deserialize)]
struct InstanceIn {
    image_id: String,
    task: Task,
    question: String,
    answer: String,
    gold: Vec<GoldOut>,
    #[serde(default)]
    scenario: Option<ScenarioLabel>,
    lang_pair: LangPair,
    width: i64,
    height: i64,
    dialect: BoxDialect,
    format: InstanceFormat,
    #[serde(default)]
    seed: u64,
}

impl InstructionInstance {
    pub fn to_json_line(&self) -> String {
        let gold = self
            .gold
            .iter()
            .map(|g| {
                let mut m = serde_json::Map::new();
                m.insert("bbox".into(), serde_json::to_value(bbox_coords(&g.bbox)).expect("coords"));
                m.insert("text".into(), Value::String(g.text.clone()));
                m.insert("translation".into(), Value::String(g.translation.clone()));
                m
            })
            .collect();
        let out = InstanceOut {
            image_id: &self.image_id,
            task: self.task,
            question: &self.question,
            answer: &self.answer,
            gold,
            scenario: self.scenario,
            lang_pair: self.lang_pair,
            width: self.dims.width(),
            height: self.dims.height(),
            dialect: self.dialect,
            format: self.format,
            seed: self.seed,
        };
        serde_json::to_string(&out).expect("instance serialization is infallible")
    }
}

/// Reads a line-delimited instance file. Gold files are parsed strictly.
pub fn parse_instances(bytes: &[u8]) -> Result<Vec<InstructionInstance>, InstructError> {
    let text = std::str::from_utf8(bytes).map_err(|e| InstructError::Record {
        record: 0,
        message: e.to_string(),
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(record, line)| {
            let err = |message: String| InstructError::Record { record, message };
            let raw: InstanceIn = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            let dims = ImageDims::new(raw.width, raw.height).map_err(|e| err(e.to_string()))?;
            let gold = raw
                .gold
                .into_iter()
                .map(|g| {
                    Ok(GoldRecord {
                        bbox: BBox::from_array(g.bbox, CoordSpace::AbsolutePixels).map_err(|e| err(e.to_string()))?,
                        text: g.text,
                        translation: g.translation,
                    })
                })
                .collect::<Result<Vec<_>, InstructError>>()?;
            if raw.task == Task::Region && gold.len() != 1 {
                return Err(err(format!("region instance needs exactly one gold record, got {}", gold.len())));
            }
            Ok(InstructionInstance {
                image_id: raw.image_id,
                task: raw.task,
                question: raw.question,
                answer: raw.answer,
                gold,
                scenario: raw.scenario,
                lang_pair: raw.lang_pair,
                dims,
                dialect: raw.dialect,
                format: raw.format,
                seed: raw.seed,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(w: i64, h: i64) -> ImageDims {
        ImageDims::new(w, h).unwrap()
    }

    #[test]
    fn serde_names_match_display_names() {
        for d in BoxDialect::ALL {
            assert_eq!(serde_json::to_value(d).unwrap(), d.as_str());
            assert_eq!(serde_json::from_value::<BoxDialect>(d.as_str().into()).unwrap(), d);
            assert_eq!(d.as_str().parse::<BoxDialect>().unwrap(), d);
        }
        for f in InstanceFormat::ALL {
            assert_eq!(serde_json::to_value(f).unwrap(), f.as_str());
        }
        for t in [Task::Region, Task::FullImage] {
            assert_eq!(serde_json::to_value(t).unwrap(), t.as_str());
        }
    }

    #[test]
    fn render_examples() {
        let b = BBox::abs(100.0, 50.0, 200.0, 100.0);
        assert_eq!(render_box(&b, BoxDialect::PlainUnit, dims(400, 200)), "[0.25, 0.25, 0.50, 0.50]");
        let b = BBox::abs(10.0, 20.0, 30.0, 40.0);
        assert_eq!(render_box(&b, BoxDialect::Absolute, dims(640, 480)), "[10, 20, 30, 40]");
        assert_eq!(render_box(&b, BoxDialect::Boxed1000, dims(100, 100)), "<box>[[100, 200, 300, 400]]</box>");
        assert_eq!(render_box(&b, BoxDialect::Det999, dims(999, 999)), "<|det|>[10, 20, 30, 40]<|/det|>");
    }

    #[test]
    fn integer_dialects_round_half_away() {
        let b = BBox::abs(10.5, 20.49, 30.5, 41.5);
        assert_eq!(render_box(&b, BoxDialect::Absolute, dims(100, 100)), "[11, 20, 31, 42]");
    }

    #[test]
    fn box_tokens() {
        let b = BBox::abs(140.0, 170.0, 430.0, 260.0);
        let d = dims(1000, 1000);
        assert_eq!(box_token(&b, BoxDialect::PlainUnit, d), "Box([0.14, 0.17, 0.43, 0.26])");
        assert_eq!(box_token(&b, BoxDialect::Boxed1000, d), "<box>[[140, 170, 430, 260]]</box>");
    }

    fn annotation(blocks: Vec<LayoutBlock>, pair: LangPair, d: ImageDims) -> ImageAnnotation {
        let mut a = ImageAnnotation::new("img-1", d);
        a.lang_pair = Some(pair);
        a.scenario = Some(ScenarioLabel::Poster);
        a.blocks = Some(blocks);
        a
    }

    #[test]
    fn plain_region_answer() {
        let d = dims(1000, 1000);
        let block = LayoutBlock::text(BBox::abs(130.0, 90.0, 280.0, 150.0), "step1").with_translation("步骤1");
        let ann = annotation(vec![block], LangPair::EnZh, d);
        let opts = BuildOptions {
            dialect: BoxDialect::PlainUnit,
            ..Default::default()
        };
        let inst = build_region_instances(&ann, &QuestionPool::default(), &opts).unwrap();
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].answer, "step1 <|translation|> 步骤1");
        assert!(inst[0].question.contains("Box([0.13, 0.09, 0.28, 0.15])"), "{}", inst[0].question);
        assert!(inst[0].question.contains("Chinese"));
    }

    #[test]
    fn structured_region_answer() {
        let d = dims(800, 700);
        let block = LayoutBlock::text(BBox::abs(40.0, 553.0, 730.0, 596.0), "GIVE THEM A SAFE CUDDLE SPACE")
            .with_translation("给他们一个安全的拥抱空间");
        let ann = annotation(vec![block], LangPair::EnZh, d);
        let opts = BuildOptions {
            format: InstanceFormat::Structured,
            dialect: BoxDialect::Absolute,
            seed: 0,
        };
        let inst = build_region_instances(&ann, &QuestionPool::default(), &opts).unwrap();
        assert_eq!(
            inst[0].answer,
            r#"{"bbox_2d": [40, 553, 730, 596], "text_content": "GIVE THEM A SAFE CUDDLE SPACE", "translation": "给他们一个安全的拥抱空间"}"#
        );
    }

    #[test]
    fn no_text_blocks_no_region_instances() {
        let ann = annotation(vec![], LangPair::EnZh, dims(10, 10));
        assert!(build_region_instances(&ann, &QuestionPool::default(), &BuildOptions::default()).unwrap().is_empty());
        assert!(matches!(
            build_fullimage_instance(&ann, &QuestionPool::default(), &BuildOptions::default()),
            Err(InstructError::NoTranslatedBlocks(_))
        ));
    }

    #[test]
    fn full_image_plain_answer() {
        let d = dims(1000, 1000);
        let first = LayoutBlock::text(BBox::abs(140.0, 170.0, 430.0, 260.0), "画好眼妆微笑找到卧蚕位置")
            .with_translation("Apply your eye makeup, then smile to locate the tear trough area");
        let ann = annotation(vec![first.clone()], LangPair::ZhEn, d);
        let opts = BuildOptions {
            dialect: BoxDialect::PlainUnit,
            ..Default::default()
        };
        let inst = build_fullimage_instance(&ann, &QuestionPool::default(), &opts).unwrap();
        assert_eq!(
            inst.answer,
            "画好眼妆微笑找到卧蚕位置 <|translation|> Apply your eye makeup, then smile to locate the tear trough area Box([0.14, 0.17, 0.43, 0.26])"
        );
        let second = LayoutBlock::text(BBox::abs(0.0, 500.0, 100.0, 600.0), "二").with_translation("two");
        let ann = annotation(vec![first, second], LangPair::ZhEn, d);
        let inst = build_fullimage_instance(&ann, &QuestionPool::default(), &opts).unwrap();
        let lines: Vec<&str> = inst.answer.split('\n').collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].ends_with("Box([0.14, 0.17, 0.43, 0.26])"));
        assert_eq!(lines[1], "二 <|translation|> two Box([0.00, 0.50, 0.10, 0.60])");
    }

    #[test]
    fn instance_count_law_and_untranslated_skip() {
        let d = dims(100, 100);
        let blocks = vec![
            LayoutBlock::text(BBox::abs(0.0, 0.0, 10.0, 10.0), "a").with_translation("甲"),
            LayoutBlock::text(BBox::abs(0.0, 20.0, 10.0, 30.0), "b"),
            LayoutBlock::text(BBox::abs(0.0, 40.0, 10.0, 50.0), "c").with_translation("丙"),
        ];
        let ann = annotation(blocks, LangPair::EnZh, d);
        let all = build_instances(&ann, &QuestionPool::default(), &BuildOptions::default()).unwrap();
        assert_eq!(all.len(), 3);
        assert_eq!(all.iter().filter(|i| i.task == Task::Region).count(), 2);
        assert_eq!(all.last().unwrap().gold.len(), 2);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let d = dims(100, 100);
        let blocks = (0..6)
            .map(|i| LayoutBlock::text(BBox::abs(0.0, i as f64 * 10.0, 10.0, i as f64 * 10.0 + 5.0), format!("t{i}")).with_translation("x"))
            .collect();
        let ann = annotation(blocks, LangPair::EnZh, d);
        let pool = QuestionPool::default();
        let a = build_instances(&ann, &pool, &BuildOptions { seed: 7, ..Default::default() }).unwrap();
        let b = build_instances(&ann, &pool, &BuildOptions { seed: 7, ..Default::default() }).unwrap();
        assert_eq!(a, b);
        let c = build_instances(&ann, &pool, &BuildOptions { seed: 8, ..Default::default() }).unwrap();
        let qa: Vec<_> = a.iter().map(|i| &i.question).collect();
        let qc: Vec<_> = c.iter().map(|i| &i.question).collect();
        assert_ne!(qa, qc);
    }

    #[test]
    fn pool_validation() {
        assert!(QuestionPool::default().validate().is_ok());
        let bad = QuestionPool {
            region_questions: vec!["no box here".into()],
            fullimage_questions: vec!["fine".into()],
        };
        assert!(bad.validate().is_err());
        assert!(QuestionPool::from_json(br#"{"region_questions": [], "fullimage_questions": ["x"]}"#).is_err());
    }

    struct Failing;
    impl Translator for Failing {
        fn translate(&self, _: &str, _: LangPair) -> Result<String, TranslateError> {
            Err(TranslateError::Timeout)
        }
    }

    #[test]
    fn translation_client_contract() {
        let stub = DictionaryTranslator::new(HashMap::from([("hello".to_string(), "你好".to_string())]));
        let blocks = vec![
            LayoutBlock::text(BBox::abs(0.0, 0.0, 1.0, 1.0), "hello"),
            LayoutBlock::text(BBox::abs(0.0, 0.0, 1.0, 1.0), "done").with_translation("已完成"),
        ];
        let out = translate_blocks(&blocks, LangPair::EnZh, &stub);
        assert_eq!(out.blocks[0].translation.as_deref(), Some("你好"));
        assert_eq!(out.blocks[1], blocks[1]);
        assert!(out.errors.is_empty());

        let out = translate_blocks(&blocks, LangPair::EnZh, &Failing);
        assert_eq!(out.blocks[0].translation, None);
        assert_eq!(out.errors, vec![(0, TranslateError::Timeout)]);
        assert_eq!(out.blocks[1], blocks[1]);
    }

    #[test]
    fn instance_lines_round_trip() {
        let d = dims(300, 200);
        let ann = annotation(
            vec![LayoutBlock::text(BBox::abs(1.0, 2.0, 30.0, 40.5), "Hi \"there\"").with_translation("你好")],
            LangPair::EnZh,
            d,
        );
        let all = build_instances(&ann, &QuestionPool::default(), &BuildOptions::default()).unwrap();
        let doc: String = all.iter().map(|i| i.to_json_line() + "\n").collect();
        assert_eq!(parse_instances(doc.as_bytes()).unwrap(), all);
    }

    #[test]
    fn plain_unit_prints_two_decimals() {
        let d = dims(777, 333);
        for i in 0..50 {
            let x = i as f64 * 13.7;
            let b = BBox::abs(x, x / 3.0, x + 50.0, x / 3.0 + 20.0);
            let r = render_box(&b, BoxDialect::PlainUnit, d);
            for part in r.trim_matches(['[', ']']).split(", ") {
                assert_eq!(part.split('.').nth(1).map(str::len), Some(2), "{r}");
            }
            for dialect in [BoxDialect::Absolute, BoxDialect::Boxed1000, BoxDialect::Det999] {
                assert!(!render_box(&b, dialect, d).contains('.'));
            }
        }
    }
}
