use std::collections::HashMap;

use patimt_core::corpus::{corpus_stats, parse_records, records_to_document, RecordShape};
use patimt_core::eval::{evaluate_instances, EvalOptions};
use patimt_core::filters::FilterParams;
use patimt_core::instruct::{parse_instances, BoxDialect, BuildOptions, DictionaryTranslator, InstanceFormat, QuestionPool};
use patimt_core::merge::MergeParams;
use patimt_core::pipeline::{build_corpus, filter_corpus, merge_corpus, translate_corpus};
use patimt_core::predparse::{parse_prediction_file, ParseStrictness};
use patimt_core::Exec;

const LINES: &str = r#"{"image_id":"a","width":300,"height":200,"scenario":"ads","lang_pair":"EN-ZH","lines":[{"text":"big","bbox":[20,20,120,50]},{"text":"sale","bbox":[20,52,120,82]},{"text":"today only","bbox":[150,150,290,190]}]}
{"image_id":"b","width":300,"height":200,"scenario":"chart","lang_pair":"ZH-EN","lines":[{"text":"销量","bbox":[10,10,110,40]},{"text":"年份","bbox":[180,160,280,190]}]}
"#;

fn dict() -> DictionaryTranslator {
    let entries = [("big sale", "大促销"), ("today only", "仅限今天"), ("销量", "sales"), ("年份", "year")];
    DictionaryTranslator::new(entries.into_iter().map(|(k, v)| (k.to_owned(), v.to_owned())).collect::<HashMap<_, _>>())
}

#[test]
fn records_survive_each_stage_through_the_file_format() {
    let parsed = parse_records(LINES.as_bytes(), RecordShape::Lines).unwrap();
    assert!(parsed.warnings.is_empty());
    let verdicts = filter_corpus(&parsed.records, &FilterParams::default(), Exec::Parallel);
    assert!(verdicts.iter().all(|v| v.keep));

    let merged = merge_corpus(&parsed.records, &MergeParams::default(), Exec::Parallel).unwrap();
    let doc = records_to_document(&merged);
    let reread = parse_records(doc.as_bytes(), RecordShape::Blocks).unwrap().records;
    assert_eq!(reread, merged);
    assert_eq!(records_to_document(&reread), doc);

    let (translated, errors) = translate_corpus(&reread, &dict(), Exec::Parallel);
    assert!(errors.is_empty());
    let stats = corpus_stats(&translated);
    assert_eq!((stats.images, stats.ocr_boxes, stats.boxes), (2, 5, 4));
}

#[test]
fn gold_answers_score_perfectly_in_every_dialect_and_format() {
    let records = parse_records(LINES.as_bytes(), RecordShape::Lines).unwrap().records;
    let merged = merge_corpus(&records, &MergeParams::default(), Exec::Sequential).unwrap();
    let (translated, _) = translate_corpus(&merged, &dict(), Exec::Sequential);
    for format in InstanceFormat::ALL {
        for dialect in BoxDialect::ALL {
            let opts = BuildOptions { format, dialect, seed: 5 };
            let instances = build_corpus(&translated, &QuestionPool::default(), &opts, Exec::Parallel).unwrap();
            let doc: String = instances.iter().map(|i| i.to_json_line() + "\n").collect();
            let gold = parse_instances(doc.as_bytes()).unwrap();
            assert_eq!(gold, instances);

            let preds: String = gold
                .iter()
                .map(|g| serde_json::json!({"image_id": g.image_id, "task": g.task, "output": g.answer}).to_string() + "\n")
                .collect();
            let preds = parse_prediction_file(preds.as_bytes()).unwrap();
            let ev = evaluate_instances(&gold, &preds, &EvalOptions::default(), ParseStrictness::Strict, Exec::Parallel).unwrap();
            let overall = ev.report.overall;
            assert_eq!(overall.region, Some(100.0), "{format} {dialect}");
            assert_eq!(overall.full_image.unwrap().bleu, 100.0, "{format} {dialect}");
            // quantized dialects move box edges by less than one quantum
            let iou = overall.full_image.unwrap().iou;
            assert!(iou > 0.9, "{format} {dialect}: {iou}");
            if dialect == BoxDialect::Absolute {
                assert_eq!(iou, 1.0);
            }
        }
    }
}
