//! Canonical data model, the line-delimited interchange files, and corpus
//! statistics.
//!
//! Both interchange dialects share one record shape, one JSON object per
//! line and one line per image:
//!
//! ```text
//! {"image_id": str, "width": int, "height": int,
//!  "scenario": str?, "lang_pair": "EN-ZH"|"ZH-EN"?,
//!  "lines": [{"text": str, "bbox": [x1,y1,x2,y2], "confidence": num?}]?,
//!  "blocks": [{"kind": str, "bbox": [x1,y1,x2,y2], "text": str?, "translation": str?}]?}
//! ```
//!
//! A lines file requires `lines`, a blocks file requires `blocks`. Boxes are
//! absolute pixels.

use std::fmt;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::geometry::{BBox, CoordSpace, ImageDims};
use crate::scenario::ScenarioLabel;
use crate::text::count_words;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("record {record}: field `{field}`: {message}")]
pub struct ParseError {
    /// Zero-based index of the offending record (non-blank line).
    pub record: usize,
    pub field: String,
    pub message: String,
}

/// One line-level OCR detection.
#[derive(Debug, Clone, PartialEq)]
pub struct OcrLine {
    pub text: String,
    pub bbox: BBox,
    pub confidence: Option<f64>,
}

impl OcrLine {
    pub fn new(text: impl Into<String>, bbox: BBox) -> Self {
        Self {
            text: text.into(),
            bbox,
            confidence: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Text,
    Image,
    Table,
    Other,
}

impl BlockKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockKind::Text => "text",
            BlockKind::Image => "image",
            BlockKind::Table => "table",
            BlockKind::Other => "other",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "text" => Some(BlockKind::Text),
            "image" => Some(BlockKind::Image),
            "table" => Some(BlockKind::Table),
            "other" => Some(BlockKind::Other),
            _ => None,
        }
    }
}

/// A semantically coherent region of the image.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutBlock {
    pub kind: BlockKind,
    pub bbox: BBox,
    pub text: Option<String>,
    pub translation: Option<String>,
}

impl LayoutBlock {
    pub fn text(bbox: BBox, text: impl Into<String>) -> Self {
        Self {
            kind: BlockKind::Text,
            bbox,
            text: Some(text.into()),
            translation: None,
        }
    }

    pub fn with_translation(mut self, translation: impl Into<String>) -> Self {
        self.translation = Some(translation.into());
        self
    }

    pub fn is_text(&self) -> bool {
        self.kind == BlockKind::Text
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LangPair {
    #[serde(rename = "EN-ZH")]
    EnZh,
    #[serde(rename = "ZH-EN")]
    ZhEn,
}

impl LangPair {
    pub fn as_str(self) -> &'static str {
        match self {
            LangPair::EnZh => "EN-ZH",
            LangPair::ZhEn => "ZH-EN",
        }
    }

    pub fn source_name(self) -> &'static str {
        match self {
            LangPair::EnZh => "English",
            LangPair::ZhEn => "Chinese",
        }
    }

    pub fn target_name(self) -> &'static str {
        match self {
            LangPair::EnZh => "Chinese",
            LangPair::ZhEn => "English",
        }
    }

    /// Whether the target language is written without spaces.
    pub fn target_is_cjk(self) -> bool {
        self == LangPair::EnZh
    }
}

impl fmt::Display for LangPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LangPair {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "EN-ZH" => Ok(LangPair::EnZh),
            "ZH-EN" => Ok(LangPair::ZhEn),
            _ => Err(format!("unknown language pair {s:?}, expected EN-ZH or ZH-EN")),
        }
    }
}

/// Everything known about one image. `lines` and `blocks` are `None` when the
/// record did not carry them, which is distinct from an empty list.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageAnnotation {
    pub image_id: String,
    pub dims: ImageDims,
    pub scenario: Option<ScenarioLabel>,
    pub lang_pair: Option<LangPair>,
    pub lines: Option<Vec<OcrLine>>,
    pub blocks: Option<Vec<LayoutBlock>>,
}

impl ImageAnnotation {
    pub fn new(image_id: impl Into<String>, dims: ImageDims) -> Self {
        Self {
            image_id: image_id.into(),
            dims,
            scenario: None,
            lang_pair: None,
            lines: None,
            blocks: None,
        }
    }

    pub fn lines(&self) -> &[OcrLine] {
        self.lines.as_deref().unwrap_or(&[])
    }

    pub fn blocks(&self) -> &[LayoutBlock] {
        self.blocks.as_deref().unwrap_or(&[])
    }

    pub fn text_blocks(&self) -> impl Iterator<Item = &LayoutBlock> {
        self.blocks().iter().filter(|b| b.is_text())
    }
}

/// Which list a parse requires each record to carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordShape {
    Lines,
    Blocks,
    Any,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRecords {
    pub records: Vec<ImageAnnotation>,
    pub warnings: Vec<String>,
}

pub fn parse_lines_file(bytes: &[u8]) -> Result<ParsedRecords, ParseError> {
    parse_records(bytes, RecordShape::Lines)
}

pub fn parse_blocks_file(bytes: &[u8]) -> Result<ParsedRecords, ParseError> {
    parse_records(bytes, RecordShape::Blocks)
}

/// Parses a line-delimited record file. Blank lines are ignored.
pub fn parse_records(bytes: &[u8], shape: RecordShape) -> Result<ParsedRecords, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ParseError {
        record: 0,
        field: "<document>".into(),
        message: format!("invalid UTF-8: {e}"),
    })?;
    let mut out = ParsedRecords {
        records: Vec::new(),
        warnings: Vec::new(),
    };
    for (index, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let value: Value = serde_json::from_str(line).map_err(|e| ParseError {
            record: index,
            field: "<record>".into(),
            message: format!("malformed JSON: {e}"),
        })?;
        let mut ctx = RecordCtx {
            index,
            warnings: &mut out.warnings,
        };
        out.records.push(ctx.record(&value, shape)?);
    }
    Ok(out)
}

struct RecordCtx<'a> {
    index: usize,
    warnings: &'a mut Vec<String>,
}

impl RecordCtx<'_> {
    fn err(&self, field: &str, message: impl Into<String>) -> ParseError {
        ParseError {
            record: self.index,
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn object<'v>(&self, v: &'v Value, field: &str) -> Result<&'v Map<String, Value>, ParseError> {
        v.as_object().ok_or_else(|| self.err(field, "expected an object"))
    }

    fn string(&self, obj: &Map<String, Value>, key: &str, path: &str) -> Result<Option<String>, ParseError> {
        match obj.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(self.err(path, "expected a string")),
        }
    }

    fn required_string(&self, obj: &Map<String, Value>, key: &str, path: &str) -> Result<String, ParseError> {
        self.string(obj, key, path)?.ok_or_else(|| self.err(path, "missing"))
    }

    fn integer(&self, obj: &Map<String, Value>, key: &str) -> Result<i64, ParseError> {
        let v = obj.get(key).ok_or_else(|| self.err(key, "missing"))?;
        if let Some(i) = v.as_i64() {
            return Ok(i);
        }
        match v.as_f64() {
            Some(f) if f.fract() == 0.0 && f.abs() < 9.0e15 => Ok(f as i64),
            _ => Err(self.err(key, "expected an integer")),
        }
    }

    fn bbox(&self, obj: &Map<String, Value>, path: &str) -> Result<BBox, ParseError> {
        let field = format!("{path}.bbox");
        let arr = obj
            .get("bbox")
            .ok_or_else(|| self.err(&field, "missing"))?
            .as_array()
            .ok_or_else(|| self.err(&field, "expected an array of 4 numbers"))?;
        if arr.len() != 4 {
            return Err(self.err(&field, format!("expected 4 numbers, got {}", arr.len())));
        }
        let mut c = [0.0; 4];
        for (slot, v) in c.iter_mut().zip(arr) {
            *slot = v.as_f64().ok_or_else(|| self.err(&field, "expected an array of 4 numbers"))?;
        }
        BBox::from_array(c, CoordSpace::AbsolutePixels).map_err(|e| self.err(&field, e.to_string()))
    }

    fn list<'v>(&self, obj: &'v Map<String, Value>, key: &str, required: bool) -> Result<Option<&'v Vec<Value>>, ParseError> {
        match obj.get(key) {
            None if required => Err(self.err(key, "missing")),
            None => Ok(None),
            Some(Value::Array(items)) => Ok(Some(items)),
            Some(_) => Err(self.err(key, "expected an array")),
        }
    }

    fn record(&mut self, value: &Value, shape: RecordShape) -> Result<ImageAnnotation, ParseError> {
        let obj = self.object(value, "<record>")?;
        let image_id = self.required_string(obj, "image_id", "image_id")?;
        let width = self.integer(obj, "width")?;
        let height = self.integer(obj, "height")?;
        let dims = ImageDims::new(width, height).map_err(|e| self.err("width/height", e.to_string()))?;
        let scenario = self
            .string(obj, "scenario", "scenario")?
            .map(|s| s.parse::<ScenarioLabel>())
            .transpose()
            .map_err(|e| self.err("scenario", e.to_string()))?;
        let lang_pair = self
            .string(obj, "lang_pair", "lang_pair")?
            .map(|s| s.parse::<LangPair>())
            .transpose()
            .map_err(|e| self.err("lang_pair", e))?;

        let lines = match self.list(obj, "lines", shape == RecordShape::Lines)? {
            None => None,
            Some(items) => Some(
                items
                    .iter()
                    .enumerate()
                    .map(|(i, item)| self.line(item, &format!("lines[{i}]")))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        let blocks = match self.list(obj, "blocks", shape == RecordShape::Blocks)? {
            None => None,
            Some(items) => Some(
                items
                    .iter()
                    .enumerate()
                    .map(|(i, item)| self.block(item, &format!("blocks[{i}]")))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        Ok(ImageAnnotation {
            image_id,
            dims,
            scenario,
            lang_pair,
            lines,
            blocks,
        })
    }

    fn line(&self, item: &Value, path: &str) -> Result<OcrLine, ParseError> {
        let obj = self.object(item, path)?;
        let text_path = format!("{path}.text");
        let text = self.required_string(obj, "text", &text_path)?;
        if text.trim().is_empty() {
            return Err(self.err(&text_path, "empty text"));
        }
        let bbox = self.bbox(obj, path)?;
        let confidence = match obj.get("confidence") {
            None | Some(Value::Null) => None,
            Some(v) => match v.as_f64() {
                Some(c) if (0.0..=1.0).contains(&c) => Some(c),
                _ => return Err(self.err(&format!("{path}.confidence"), "expected a number in [0, 1]")),
            },
        };
        Ok(OcrLine { text, bbox, confidence })
    }

    fn block(&mut self, item: &Value, path: &str) -> Result<LayoutBlock, ParseError> {
        let obj = self.object(item, path)?;
        let kind_path = format!("{path}.kind");
        let raw_kind = self.required_string(obj, "kind", &kind_path)?;
        let kind = BlockKind::parse(&raw_kind).unwrap_or_else(|| {
            let msg = format!("record {}: {kind_path}: unknown kind {raw_kind:?} mapped to \"other\"", self.index);
            warn!("{msg}");
            self.warnings.push(msg);
            BlockKind::Other
        });
        let bbox = self.bbox(obj, path)?;
        let text = self.string(obj, "text", &format!("{path}.text"))?;
        if kind == BlockKind::Text && text.is_none() {
            return Err(self.err(&format!("{path}.text"), "required for text blocks"));
        }
        let translation = self.string(obj, "translation", &format!("{path}.translation"))?;
        Ok(LayoutBlock {
            kind,
            bbox,
            text,
            translation,
        })
    }
}

/// Serializes integral values without a fractional part.
pub(crate) struct Coord(f64);

impl Serialize for Coord {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.fract() == 0.0 && self.0.abs() < 9.0e15 {
            s.serialize_i64(self.0 as i64)
        } else {
            s.serialize_f64(self.0)
        }
    }
}

pub(crate) fn bbox_coords(b: &BBox) -> [Coord; 4] {
    b.coords().map(Coord)
}

#[derive(Serialize)]
struct LineOut<'a> {
    text: &'a str,
    bbox: [Coord; 4],
    #[serde(skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
}

#[derive(Serialize)]
struct BlockOut<'a> {
    kind: BlockKind,
    bbox: [Coord; 4],
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    translation: Option<&'a str>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    image_id: &'a str,
    width: u32,
    height: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    scenario: Option<ScenarioLabel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lang_pair: Option<LangPair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lines: Option<Vec<LineOut<'a>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    blocks: Option<Vec<BlockOut<'a>>>,
}

/// Canonical single-line JSON form of a record, without the trailing newline.
/// Boxes must already be in pixel space.
pub fn record_to_line(rec: &ImageAnnotation) -> String {
    let out = RecordOut {
        image_id: &rec.image_id,
        width: rec.dims.width(),
        height: rec.dims.height(),
        scenario: rec.scenario,
        lang_pair: rec.lang_pair,
        lines: rec.lines.as_ref().map(|ls| {
            ls.iter()
                .map(|l| LineOut {
                    text: &l.text,
                    bbox: bbox_coords(&l.bbox),
                    confidence: l.confidence,
                })
                .collect()
        }),
        blocks: rec.blocks.as_ref().map(|bs| {
            bs.iter()
                .map(|b| BlockOut {
                    kind: b.kind,
                    bbox: bbox_coords(&b.bbox),
                    text: b.text.as_deref(),
                    translation: b.translation.as_deref(),
                })
                .collect()
        }),
    };
    serde_json::to_string(&out).expect("record serialization is infallible")
}

/// Joins records into a document, one line each with a trailing newline.
pub fn records_to_document<'a>(records: impl IntoIterator<Item = &'a ImageAnnotation>) -> String {
    let mut doc = String::new();
    for r in records {
        doc.push_str(&record_to_line(r));
        doc.push('\n');
    }
    doc
}

/// Corpus totals in the shape of the dataset statistics table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub images: u64,
    pub ocr_boxes: u64,
    pub boxes: u64,
    pub src_words: u64,
    pub tgt_words: u64,
}

impl Add for CorpusStats {
    type Output = CorpusStats;

    fn add(self, o: CorpusStats) -> CorpusStats {
        CorpusStats {
            images: self.images + o.images,
            ocr_boxes: self.ocr_boxes + o.ocr_boxes,
            boxes: self.boxes + o.boxes,
            src_words: self.src_words + o.src_words,
            tgt_words: self.tgt_words + o.tgt_words,
        }
    }
}

impl AddAssign for CorpusStats {
    fn add_assign(&mut self, o: CorpusStats) {
        *self = *self + o;
    }
}

/// Counts for a single image. Text blocks without a translation add nothing
/// to `tgt_words` and log a warning.
pub fn image_stats(rec: &ImageAnnotation) -> CorpusStats {
    let mut s = CorpusStats {
        images: 1,
        ocr_boxes: rec.lines().len() as u64,
        ..Default::default()
    };
    let mut untranslated = 0;
    for block in rec.text_blocks() {
        s.boxes += 1;
        s.src_words += block.text.as_deref().map_or(0, count_words) as u64;
        match block.translation.as_deref() {
            Some(t) => s.tgt_words += count_words(t) as u64,
            None => untranslated += 1,
        }
    }
    if untranslated > 0 {
        warn!("{}: {untranslated} text block(s) without translation", rec.image_id);
    }
    s
}

pub fn corpus_stats(corpus: &[ImageAnnotation]) -> CorpusStats {
    corpus.iter().map(image_stats).fold(CorpusStats::default(), Add::add)
}
