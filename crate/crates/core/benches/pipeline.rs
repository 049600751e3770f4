use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use patimt_core::corpus::{ImageAnnotation, LangPair, OcrLine};
use patimt_core::eval::{evaluate_instances, EvalOptions};
use patimt_core::geometry::{BBox, ImageDims};
use patimt_core::instruct::{BuildOptions, DictionaryTranslator, QuestionPool};
use patimt_core::merge::MergeParams;
use patimt_core::par::Exec;
use patimt_core::pipeline::{build_corpus, merge_corpus, translate_corpus};
use patimt_core::predparse::{ParseStrictness, RawPrediction};
use patimt_core::scenario::ScenarioLabel;

fn corpus(images: usize, lines_per_image: usize) -> Vec<ImageAnnotation> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..images)
        .map(|i| {
            let mut a = ImageAnnotation::new(format!("img{i}"), ImageDims::new(1600, 1200).unwrap());
            a.scenario = Some(ScenarioLabel::ALL[i % 10]);
            a.lang_pair = Some(if i % 2 == 0 { LangPair::EnZh } else { LangPair::ZhEn });
            a.lines = Some(
                (0..lines_per_image)
                    .map(|k| {
                        let x = rng.random_range(0..1400) as f64;
                        let y = rng.random_range(0..1150) as f64;
                        let w = rng.random_range(20..200) as f64;
                        OcrLine::new(format!("word{k} token{}", k % 7), BBox::abs(x, y, x + w, y + rng.random_range(12..40) as f64))
                    })
                    .collect(),
            );
            a
        })
        .collect()
}

fn bench_merge(c: &mut Criterion) {
    let data = corpus(200, 120);
    let p = MergeParams::default();
    let mut g = c.benchmark_group("merge_corpus");
    for exec in [Exec::Sequential, Exec::Parallel] {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| merge_corpus(&data, &p, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_evaluate(c: &mut Criterion) {
    let merged = merge_corpus(&corpus(200, 60), &MergeParams::default(), Exec::Parallel).unwrap();
    let dict = DictionaryTranslator::default().passthrough();
    let (translated, _) = translate_corpus(&merged, &dict, Exec::Parallel);
    let gold = build_corpus(&translated, &QuestionPool::default(), &BuildOptions::default(), Exec::Parallel).unwrap();
    let preds: Vec<RawPrediction> = gold
        .iter()
        .map(|i| RawPrediction {
            image_id: i.image_id.clone(),
            task: i.task,
            output: i.answer.clone(),
        })
        .collect();
    let opts = EvalOptions::default();
    let mut g = c.benchmark_group("evaluate_instances");
    for exec in [Exec::Sequential, Exec::Parallel] {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| evaluate_instances(&gold, &preds, &opts, ParseStrictness::Salvage, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_merge, bench_evaluate);
criterion_main!(benches);
