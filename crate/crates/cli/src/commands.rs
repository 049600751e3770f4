//! Subcommand implementations. Each returns its summary line.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;
use std::process::{Command as Process, Stdio};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use serde_json::{json, Value};

use patimt_core::corpus::{corpus_stats, parse_records, records_to_document, ImageAnnotation, RecordShape};
use patimt_core::eval::{evaluate_instances, EvalOptions};
use patimt_core::instruct::{parse_instances, BuildOptions, QuestionPool, Task};
use patimt_core::pipeline::{build_corpus, classify_images, filter_corpus, merge_corpus, refine_corpus, translate_corpus};
use patimt_core::predparse::{normalized_line, parse_output, parse_prediction_file, ParseOutcome};
use patimt_core::scenario::{ensemble, parse_embeddings};
use patimt_core::{par, Exec, LayoutBlock};

use crate::config::ToolConfig;
use crate::translator;
use crate::{BuildArgs, ClassifyArgs, Cli, Command, EvaluateArgs, FilterArgs, GlobalArgs, MergeArgs, ParsePredArgs, RefineArgs, StatsArgs, UsageError};

/// Tolerance for the unit-norm check on embedding vectors.
const UNIT_NORM_TOL: f64 = 1e-4;
const DEFAULT_TRANSLATOR_TIMEOUT_SECS: u64 = 30;

pub fn dispatch(cli: Cli) -> Result<String> {
    let cfg = resolve_config(&cli.global)?;
    let exec = if cfg.jobs == Some(1) { Exec::Sequential } else { Exec::Parallel };
    let jobs = cfg.jobs;
    par::with_jobs(jobs, move || match cli.command {
        Command::Classify(a) => classify(&a, exec),
        Command::Filter(a) => filter(&a, cfg, exec),
        Command::Merge(a) => merge(&a, cfg, exec),
        Command::Refine(a) => refine(&a, cfg, exec),
        Command::BuildInstructions(a) => build(&a, &cfg, exec),
        Command::ParsePredictions(a) => parse_predictions(&a, &cfg, exec),
        Command::Evaluate(a) => evaluate(&a, cfg, exec),
        Command::Stats(a) => stats(&a),
    })
}

fn resolve_config(g: &GlobalArgs) -> Result<ToolConfig> {
    let mut cfg = match &g.config {
        Some(p) => ToolConfig::load(p)?,
        None => ToolConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if g.jobs.is_some() {
        cfg.jobs = g.jobs;
    }
    if let Some(d) = g.dialect {
        cfg.dialect = d;
    }
    if let Some(f) = g.format {
        cfg.format = f;
    }
    if g.strictness.is_some() {
        cfg.strictness = g.strictness;
    }
    Ok(cfg)
}

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    anyhow!(UsageError(e.to_string()))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_records(path: &Path, shape: RecordShape) -> Result<Vec<ImageAnnotation>> {
    let parsed = parse_records(&read(path)?, shape).with_context(|| format!("in {}", path.display()))?;
    for w in &parsed.warnings {
        warn!("{}: {w}", path.display());
    }
    Ok(parsed.records)
}

fn jsonl<T: serde::Serialize>(items: impl IntoIterator<Item = T>) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item)?);
        out.push('\n');
    }
    Ok(out)
}

fn classify(a: &ClassifyArgs, exec: Exec) -> Result<String> {
    let file = parse_embeddings(&read(&a.embeddings)?).with_context(|| format!("in {}", a.embeddings.display()))?;
    let missing = file.bank.missing_superclasses();
    if !missing.is_empty() {
        let names: Vec<_> = missing.iter().map(|s| s.as_str()).collect();
        warn!("no label maps to {}", names.join(", "));
    }
    if a.check {
        let mut bad = Vec::new();
        for e in file.bank.entries() {
            for (i, v) in e.embeddings.iter().enumerate() {
                if (norm(v) - 1.0).abs() > UNIT_NORM_TOL {
                    bad.push(format!("label {:?} template {i}", e.label_text));
                }
            }
        }
        for (id, v) in &file.images {
            if (norm(v) - 1.0).abs() > UNIT_NORM_TOL {
                bad.push(format!("image {id:?}"));
            }
        }
        if !bad.is_empty() {
            bail!("{} vector(s) not unit-norm: {}", bad.len(), bad.join("; "));
        }
        return Ok(format!(
            "command=classify check=ok labels={} images={} dim={}",
            file.bank.entries().len(),
            file.images.len(),
            file.bank.dim()
        ));
    }
    let out = a.out.as_deref().expect("clap requires --out without --check");
    let labels = ensemble(&file.bank)?;
    let classes = classify_images(&file.images, &labels, exec)?;
    match &a.input {
        Some(input) => {
            let mut records = load_records(input, RecordShape::Any)?;
            let by_id: HashMap<&str, _> = file.images.iter().map(|(id, _)| id.as_str()).zip(&classes).collect();
            let mut unlabeled = 0;
            for r in &mut records {
                match by_id.get(r.image_id.as_str()) {
                    Some(c) => r.scenario = Some(c.superclass),
                    None => {
                        warn!("{}: no embedding, scenario left as is", r.image_id);
                        unlabeled += 1;
                    }
                }
            }
            write(out, &records_to_document(&records))?;
            Ok(format!("command=classify images={} labeled={} unlabeled={unlabeled}", records.len(), records.len() - unlabeled))
        }
        None => {
            let lines = file.images.iter().zip(&classes).map(|((id, _), c)| {
                json!({
                    "image_id": id,
                    "scenario": c.superclass,
                    "label": labels[c.label_index].label_text,
                    "similarity": c.similarity,
                })
            });
            write(out, &jsonl(lines)?)?;
            Ok(format!("command=classify images={} labels={}", classes.len(), labels.len()))
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn filter(a: &FilterArgs, mut cfg: ToolConfig, exec: Exec) -> Result<String> {
    if let Some(k) = a.repetition_len {
        cfg.filter.repetition_len = k;
    }
    if let Some(t) = a.coverage_threshold {
        cfg.filter.coverage_threshold = t;
    }
    cfg.filter.validate().map_err(usage)?;
    let records = load_records(&a.input, RecordShape::Lines)?;
    if a.check {
        let lines: usize = records.iter().map(|r| r.lines().len()).sum();
        return Ok(format!("command=filter check=ok images={} lines={lines}", records.len()));
    }
    let out = a.out.as_deref().expect("clap requires --out without --check");
    let verdicts = filter_corpus(&records, &cfg.filter, exec);
    let kept: Vec<_> = records.iter().zip(&verdicts).filter(|(_, v)| v.keep).map(|(r, _)| r).collect();
    write(out, &records_to_document(kept.iter().copied()))?;
    let rejected: Vec<_> = records
        .iter()
        .zip(&verdicts)
        .filter(|(_, v)| !v.keep)
        .map(|(r, v)| json!({"image_id": r.image_id, "reasons": v.reasons}))
        .collect();
    if let Some(path) = &a.rejected {
        write(path, &jsonl(&rejected)?)?;
    }
    Ok(format!("command=filter images={} kept={} rejected={}", records.len(), kept.len(), rejected.len()))
}

fn merge(a: &MergeArgs, mut cfg: ToolConfig, exec: Exec) -> Result<String> {
    if a.cjk {
        cfg.merge.joiner = String::new();
    }
    if let Some(x) = a.x_ths {
        cfg.merge.x_ths = x;
    }
    if let Some(y) = a.y_ths {
        cfg.merge.y_ths = y;
    }
    if let Some(t) = a.row_tolerance {
        cfg.merge.row_tolerance = t;
    }
    cfg.merge.validate().map_err(usage)?;
    let records = load_records(&a.input, RecordShape::Lines)?;
    let merged = merge_corpus(&records, &cfg.merge, exec)?;
    write(&a.out, &records_to_document(&merged))?;
    let lines: usize = records.iter().map(|r| r.lines().len()).sum();
    let blocks: usize = merged.iter().map(|r| r.blocks().len()).sum();
    Ok(format!("command=merge images={} lines={lines} blocks={blocks}", merged.len()))
}

fn refine(a: &RefineArgs, mut cfg: ToolConfig, exec: Exec) -> Result<String> {
    if let Some(t) = a.tau {
        cfg.refine.coverage_tau = t;
    }
    let params = cfg.refine_params();
    params.validate().map_err(usage)?;
    let mut records = load_records(&a.input, RecordShape::Lines)?;
    let mut layout: HashMap<String, Vec<LayoutBlock>> = HashMap::new();
    if let Some(path) = &a.blocks {
        for r in load_records(path, RecordShape::Blocks)? {
            if layout.insert(r.image_id.clone(), r.blocks.unwrap_or_default()).is_some() {
                bail!("{}: duplicate image id {:?}", path.display(), r.image_id);
            }
        }
        let known: std::collections::HashSet<&str> = records.iter().map(|r| r.image_id.as_str()).collect();
        for id in layout.keys().filter(|id| !known.contains(id.as_str())) {
            warn!("{id}: layout blocks for an image missing from {}", a.input.display());
        }
    }
    if a.check {
        return Ok(format!("command=refine check=ok images={} layout_images={}", records.len(), layout.len()));
    }
    for r in &mut records {
        if let Some(b) = layout.remove(&r.image_id) {
            r.blocks = Some(b);
        }
    }
    let out = a.out.as_deref().expect("clap requires --out without --check");
    let refined = refine_corpus(&records, &params, exec)?;
    write(out, &records_to_document(&refined))?;
    let before: usize = records.iter().map(|r| r.blocks().len()).sum();
    let after: usize = refined.iter().map(|r| r.blocks().len()).sum();
    Ok(format!("command=refine images={} blocks_in={before} blocks_out={after}", refined.len()))
}

fn build(a: &BuildArgs, cfg: &ToolConfig, exec: Exec) -> Result<String> {
    let mut records = load_records(&a.input, RecordShape::Blocks)?;
    if let Some(pair) = a.lang_pair {
        for r in records.iter_mut().filter(|r| r.lang_pair.is_none()) {
            r.lang_pair = Some(pair);
        }
    }
    let mut translate_errors = 0;
    if let Some(spec) = a.translator.as_deref().or(cfg.translator.spec.as_deref()) {
        let timeout = Duration::from_secs(cfg.translator.timeout_secs.unwrap_or(DEFAULT_TRANSLATOR_TIMEOUT_SECS));
        let client = translator::from_spec(spec, cfg.translator.serial, timeout).map_err(usage)?;
        let (translated, errors) = translate_corpus(&records, client.as_ref(), exec);
        for (id, block, e) in &errors {
            warn!("{id}: block {block} left untranslated: {e}");
        }
        translate_errors = errors.len();
        records = translated;
    }
    if let Some(path) = &a.translated_out {
        write(path, &records_to_document(&records))?;
    }
    let pool = match &a.questions {
        Some(p) => QuestionPool::from_json(&read(p)?).with_context(|| format!("in {}", p.display()))?,
        None => QuestionPool::default(),
    };
    let opts = BuildOptions {
        format: cfg.format,
        dialect: cfg.dialect,
        seed: cfg.seed,
    };
    let instances = build_corpus(&records, &pool, &opts, exec)?;
    let mut doc = String::new();
    for inst in &instances {
        doc.push_str(&inst.to_json_line());
        doc.push('\n');
    }
    write(&a.out, &doc)?;
    let region = instances.iter().filter(|i| i.task == Task::Region).count();
    Ok(format!(
        "command=build-instructions images={} instances={} region={region} full_image={} translate_errors={translate_errors} seed={} dialect={} format={}",
        records.len(),
        instances.len(),
        instances.len() - region,
        cfg.seed,
        cfg.dialect,
        cfg.format
    ))
}

fn parse_predictions(a: &ParsePredArgs, cfg: &ToolConfig, exec: Exec) -> Result<String> {
    let gold = parse_instances(&read(&a.gold)?).with_context(|| format!("in {}", a.gold.display()))?;
    let preds = parse_prediction_file(&read(&a.pred)?).with_context(|| format!("in {}", a.pred.display()))?;
    let mut by_image = HashMap::new();
    for g in &gold {
        by_image.entry(g.image_id.as_str()).or_insert(g);
    }
    if let Some(p) = preds.iter().find(|p| !by_image.contains_key(p.image_id.as_str())) {
        bail!("{}: prediction for image {:?} has no gold instance", a.pred.display(), p.image_id);
    }
    let strictness = cfg.strictness.unwrap_or_default();
    let outcomes = par::map(exec, &preds, |p| {
        let g = by_image[p.image_id.as_str()];
        parse_output(&p.output, p.task, g.format, g.dialect, g.dims, strictness).unwrap_or_else(|e| ParseOutcome {
            records: Vec::new(),
            diagnostics: vec![e.to_string()],
        })
    });
    let mut doc = String::new();
    for (p, o) in preds.iter().zip(&outcomes) {
        doc.push_str(&normalized_line(&p.image_id, p.task, o));
        doc.push('\n');
    }
    write(&a.out, &doc)?;
    let records: usize = outcomes.iter().map(|o| o.records.len()).sum();
    let empty = outcomes.iter().filter(|o| o.records.is_empty()).count();
    Ok(format!("command=parse-predictions predictions={} records={records} empty={empty}", preds.len()))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn evaluate(a: &EvaluateArgs, cfg: ToolConfig, exec: Exec) -> Result<String> {
    let mut opts: EvalOptions = cfg.eval;
    if let Some(m) = a.method {
        opts.method = m;
    }
    if let Some(s) = a.smoothing {
        opts.smoothing = s;
    }
    if a.no_fallback {
        opts.fallback = false;
    }
    if a.penalize_extra {
        opts.penalize_extra = true;
    }
    let gold = parse_instances(&read(&a.gold)?).with_context(|| format!("in {}", a.gold.display()))?;
    let preds = parse_prediction_file(&read(&a.pred)?).with_context(|| format!("in {}", a.pred.display()))?;
    let ev = evaluate_instances(&gold, &preds, &opts, cfg.strictness.unwrap_or_default(), exec)?;
    let mut report = serde_json::to_value(&ev.report)?;
    if let Some(cmd) = &a.external_scorer {
        let external = run_external(cmd, &jsonl(&ev.pairs)?)?;
        report.as_object_mut().expect("report is an object").insert("external".into(), external);
    }
    write(&a.report, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    if let Some(path) = &a.diagnostics {
        write(path, &jsonl(&ev.images)?)?;
    }
    let overall = &ev.report.overall;
    Ok(format!(
        "command=evaluate images={} categories={} region_bleu={} full_image_bleu={} iou={}",
        ev.images.len(),
        overall.categories,
        fmt_opt(overall.region),
        fmt_opt(overall.full_image.map(|f| f.bleu)),
        fmt_opt(overall.full_image.map(|f| f.iou)),
    ))
}

/// Feeds `input` to `sh -c cmd` and parses its stdout as one JSON document.
fn run_external(cmd: &str, input: &str) -> Result<Value> {
    info!("running external scorer: {cmd}");
    let mut child = Process::new("sh")
        .arg("-c")
        .arg(cmd)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .context("starting external scorer")?;
    let mut stdin = child.stdin.take().expect("stdin is piped");
    let input = input.to_owned();
    let feeder = std::thread::spawn(move || stdin.write_all(input.as_bytes()));
    let output = child.wait_with_output().context("waiting for external scorer")?;
    if let Err(e) = feeder.join().expect("feeder thread panicked") {
        // a scorer may legitimately stop reading early
        warn!("external scorer closed its input: {e}");
    }
    if !output.status.success() {
        bail!("external scorer failed with {}", output.status);
    }
    serde_json::from_slice(&output.stdout).context("external scorer output is not JSON")
}

fn stats(a: &StatsArgs) -> Result<String> {
    let records = load_records(&a.input, RecordShape::Any)?;
    let s = corpus_stats(&records);
    if let Some(out) = &a.out {
        write(out, &(serde_json::to_string_pretty(&s)? + "\n"))?;
    }
    Ok(format!(
        "command=stats images={} ocr_boxes={} boxes={} src_words={} tgt_words={}",
        s.images, s.ocr_boxes, s.boxes, s.src_words, s.tgt_words
    ))
}
