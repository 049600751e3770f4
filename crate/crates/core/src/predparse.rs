//! Parsing model outputs back into boxed translation records.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::bbox_coords;
use crate::geometry::{convert, BBox, CoordSpace, ImageDims};
use crate::instruct::{BoxDialect, InstanceFormat, Task, TRANSLATION_SEP};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredParseError {
    #[error("no parseable record in output")]
    EmptyOutput,
    #[error("malformed output: {0}")]
    Malformed(String),
    #[error("prediction record {record}: {message}")]
    Record { record: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParseStrictness {
    Strict,
    #[default]
    Salvage,
}

impl std::str::FromStr for ParseStrictness {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(ParseStrictness::Strict),
            "salvage" => Ok(ParseStrictness::Salvage),
            _ => Err(format!("unknown strictness {s:?}")),
        }
    }
}

/// One predicted region. Boxes are in absolute pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub bbox: Option<BBox>,
    pub text: Option<String>,
    pub translation: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParseOutcome {
    pub records: Vec<PredictionRecord>,
    pub diagnostics: Vec<String>,
}

const NUMS: &str = r"(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)";

struct BoxPatterns {
    boxed: Regex,
    det: Regex,
    list: Regex,
}

static BOXES: LazyLock<BoxPatterns> = LazyLock::new(|| BoxPatterns {
    boxed: Regex::new(&format!(r"^<box>\s*\[\s*\[\s*{NUMS}\s*\]\s*\]\s*</box>$")).unwrap(),
    det: Regex::new(&format!(r"^<\|det\|>\s*\[\s*{NUMS}\s*\]\s*<\|/det\|>$")).unwrap(),
    list: Regex::new(&format!(r"^\[\s*\[?\s*{NUMS}\s*\]?\s*\]$")).unwrap(),
});

/// A box at the very end of a line: `Box(...)`, a dialect wrapper or a bare list.
static TRAILING_BOX: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"(?s)^(.*?)\s*(Box\(\s*[^()]*\)|<box>\s*\[\s*\[[^\]]*\]\s*\]\s*</box>|<\|det\|>\s*\[[^\]]*\]\s*<\|/det\|>|\[\s*{NUMS}\s*\])\s*$"
    ))
    .unwrap()
});

/// Same as [`TRAILING_BOX`] without the bare list form.
static TRAILING_MARKED_BOX: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?s)^(.*?)\s*(Box\(\s*[^()]*\)|<box>\s*\[\s*\[[^\]]*\]\s*\]\s*</box>|<\|det\|>\s*\[[^\]]*\]\s*<\|/det\|>)\s*$").unwrap()
});

fn nums(c: &regex::Captures<'_>) -> Result<[f64; 4], String> {
    let mut out = [0.0; 4];
    for (i, v) in out.iter_mut().enumerate() {
        *v = c[i + 1].parse::<f64>().map_err(|e| e.to_string())?;
    }
    Ok(out)
}

/// Reads one box in any recognized surface form and converts it to absolute
/// pixels. Wrappers fix their own space; bare lists are read in `dialect`'s.
pub fn parse_box(s: &str, dialect: BoxDialect, dims: ImageDims) -> Result<BBox, String> {
    let mut s = s.trim();
    if let Some(inner) = s.strip_prefix("Box(").and_then(|r| r.strip_suffix(')')) {
        s = inner.trim();
    }
    let (coords, space) = if let Some(c) = BOXES.boxed.captures(s) {
        (nums(&c)?, CoordSpace::Normalized1000)
    } else if let Some(c) = BOXES.det.captures(s) {
        (nums(&c)?, CoordSpace::Normalized999)
    } else if let Some(c) = BOXES.list.captures(s) {
        (nums(&c)?, dialect.space())
    } else {
        return Err(format!("unrecognized box {s:?}"));
    };
    let b = BBox::from_array(coords, space).map_err(|e| e.to_string())?;
    Ok(convert(&b, CoordSpace::AbsolutePixels, dims))
}

fn non_empty(s: &str) -> Option<String> {
    let t = s.trim();
    (!t.is_empty()).then(|| t.to_string())
}

/// Line-oriented answers: `text <|translation|> translation [box]`, one
/// region per line. For region answers only marked boxes (`Box(...)` or a
/// wrapper) are split off, so a translation ending in brackets survives.
pub fn parse_plain(
    output: &str,
    task: Task,
    dialect: BoxDialect,
    dims: ImageDims,
    strictness: ParseStrictness,
) -> Result<ParseOutcome, PredParseError> {
    let mut out = ParseOutcome::default();
    let trailing = match task {
        Task::Region => &*TRAILING_MARKED_BOX,
        Task::FullImage => &*TRAILING_BOX,
    };
    for (n, line) in output.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((text, rest)) = line.split_once(TRANSLATION_SEP) else {
            out.diagnostics.push(format!("line {n}: no translation separator"));
            continue;
        };
        let (translation, bbox) = match trailing.captures(rest) {
            Some(c) => match parse_box(&c[2], dialect, dims) {
                Ok(b) => (c[1].to_string(), Some(b)),
                Err(e) if strictness == ParseStrictness::Strict => {
                    return Err(PredParseError::Malformed(format!("line {n}: {e}")));
                }
                Err(e) => {
                    out.diagnostics.push(format!("line {n}: {e}"));
                    (c[1].to_string(), None)
                }
            },
            None => (rest.to_string(), None),
        };
        let Some(translation) = non_empty(&translation) else {
            out.diagnostics.push(format!("line {n}: empty translation"));
            continue;
        };
        out.records.push(PredictionRecord {
            bbox,
            text: non_empty(text),
            translation,
        });
    }
    if out.records.is_empty() && strictness == ParseStrictness::Strict {
        return Err(PredParseError::EmptyOutput);
    }
    Ok(out)
}

/// Removes a surrounding code fence and a bare leading `json` tag.
fn strip_fences(s: &str) -> &str {
    let mut s = s.trim();
    if let Some(rest) = s.strip_prefix("```") {
        s = rest.split_once('\n').map_or("", |(_, body)| body);
        s = s.trim_end();
        s = s.strip_suffix("```").unwrap_or(s);
    }
    let s = s.trim();
    s.strip_prefix("json").map_or(s, |rest| rest.trim_start())
}

/// Drops commas that directly precede a closing bracket, ignoring string contents.
fn drop_trailing_commas(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    let (mut in_str, mut escaped) = (false, false);
    for (i, &c) in chars.iter().enumerate() {
        if in_str {
            out.push(c);
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        if c == '"' {
            in_str = true;
        }
        if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

/// Balanced `{...}` spans at the shallowest object depth present. A span
/// still open at end of input is dropped.
fn complete_objects(s: &str) -> Vec<&str> {
    let mut spans = Vec::new();
    let (mut in_str, mut escaped) = (false, false);
    let mut depth = 0usize;
    let mut start = None;
    for (i, c) in s.char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => {
                if depth == 0 {
                    start = Some(i);
                }
                depth += 1;
            }
            '}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    if let Some(st) = start.take() {
                        spans.push(&s[st..=i]);
                    }
                }
            }
            _ => {}
        }
    }
    spans
}

fn record_from_value(v: &Value, dialect: BoxDialect, dims: ImageDims) -> Result<PredictionRecord, String> {
    let obj = v.as_object().ok_or("element is not an object")?;
    let translation = obj
        .get("translation")
        .and_then(Value::as_str)
        .and_then(non_empty)
        .ok_or("missing or empty translation")?;
    let text = match obj.get("text_content") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => non_empty(s),
        Some(_) => return Err("text_content is not a string".into()),
    };
    let bbox = match obj.get("bbox_2d") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(parse_box(s, dialect, dims)?),
        Some(Value::Array(a)) => {
            let flat: Vec<&Value> = match a.as_slice() {
                [Value::Array(inner)] => inner.iter().collect(),
                _ => a.iter().collect(),
            };
            let c: Vec<f64> = flat.iter().filter_map(|v| v.as_f64()).collect();
            let c: [f64; 4] = c.try_into().map_err(|_| "bbox_2d needs four numbers".to_string())?;
            let b = BBox::from_array(c, dialect.space()).map_err(|e| e.to_string())?;
            Some(convert(&b, CoordSpace::AbsolutePixels, dims))
        }
        Some(_) => return Err("bbox_2d is neither a list nor a string".into()),
    };
    Ok(PredictionRecord { bbox, text, translation })
}

/// JSON answers: one object or a list of objects with keys `bbox_2d`,
/// `text_content` and `translation`, optionally inside a code fence.
///
/// Salvage mode never fails: unparseable documents fall back to whatever
/// complete objects can be cut out of the text, and bad elements are
/// skipped with a diagnostic.
pub fn parse_structured(
    output: &str,
    dialect: BoxDialect,
    dims: ImageDims,
    strictness: ParseStrictness,
) -> Result<ParseOutcome, PredParseError> {
    let body = strip_fences(output);
    let mut out = ParseOutcome::default();
    if strictness == ParseStrictness::Strict {
        let v: Value = serde_json::from_str(body).map_err(|e| PredParseError::Malformed(e.to_string()))?;
        let items = match v {
            Value::Array(items) => items,
            obj @ Value::Object(_) => vec![obj],
            _ => return Err(PredParseError::Malformed("expected an object or a list".into())),
        };
        for (i, item) in items.iter().enumerate() {
            let rec = record_from_value(item, dialect, dims).map_err(|e| PredParseError::Malformed(format!("element {i}: {e}")))?;
            out.records.push(rec);
        }
        if out.records.is_empty() {
            return Err(PredParseError::EmptyOutput);
        }
        return Ok(out);
    }

    let repaired = drop_trailing_commas(body);
    let items: Vec<Value> = match serde_json::from_str::<Value>(&repaired) {
        Ok(Value::Array(items)) => items,
        Ok(obj @ Value::Object(_)) => vec![obj],
        Ok(_) => {
            out.diagnostics.push("expected an object or a list".into());
            Vec::new()
        }
        Err(e) => {
            out.diagnostics.push(format!("invalid JSON ({e}), salvaging complete objects"));
            complete_objects(&repaired)
                .into_iter()
                .filter_map(|span| match serde_json::from_str::<Value>(span) {
                    Ok(v) => Some(v),
                    Err(e) => {
                        out.diagnostics.push(format!("dropped fragment: {e}"));
                        None
                    }
                })
                .collect()
        }
    };
    for (i, item) in items.iter().enumerate() {
        match record_from_value(item, dialect, dims) {
            Ok(rec) => out.records.push(rec),
            Err(e) => out.diagnostics.push(format!("element {i}: {e}")),
        }
    }
    if out.records.is_empty() {
        out.diagnostics.push("no records recovered".into());
    }
    Ok(out)
}

/// Parses an answer in the given format.
pub fn parse_output(
    output: &str,
    task: Task,
    format: InstanceFormat,
    dialect: BoxDialect,
    dims: ImageDims,
    strictness: ParseStrictness,
) -> Result<ParseOutcome, PredParseError> {
    match format {
        InstanceFormat::PlainText => parse_plain(output, task, dialect, dims, strictness),
        InstanceFormat::Structured => parse_structured(output, dialect, dims, strictness),
    }
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPrediction {
    pub image_id: String,
    pub task: Task,
    pub output: String,
}

pub fn parse_prediction_file(bytes: &[u8]) -> Result<Vec<RawPrediction>, PredParseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| PredParseError::Record {
        record: 0,
        message: e.to_string(),
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(record, l)| {
            serde_json::from_str(l).map_err(|e| PredParseError::Record {
                record,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Serialize)]
struct RecordOut {
    bbox: Option<[crate::corpus::Coord; 4]>,
    text: Option<String>,
    translation: String,
}

#[derive(Serialize)]
struct NormalizedOut<'a> {
    image_id: &'a str,
    task: Task,
    records: Vec<RecordOut>,
    diagnostics: &'a [String],
}

/// Normalized, inspectable form of one parsed prediction.
pub fn normalized_line(image_id: &str, task: Task, outcome: &ParseOutcome) -> String {
    let out = NormalizedOut {
        image_id,
        task,
        records: outcome
            .records
            .iter()
            .map(|r| RecordOut {
                bbox: r.bbox.as_ref().map(bbox_coords),
                text: r.text.clone(),
                translation: r.translation.clone(),
            })
            .collect(),
        diagnostics: &outcome.diagnostics,
    };
    serde_json::to_string(&out).expect("normalized record serialization is infallible")
}
