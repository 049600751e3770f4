//! Corpus-level stages: each applies a per-image operation to a whole corpus
//! and returns results in input order.

use log::warn;

use crate::corpus::{ImageAnnotation, LayoutBlock};
use crate::filters::{check_image, FilterParams, FilterVerdict};
use crate::geometry::GeometryError;
use crate::instruct::{build_instances, translate_blocks, BuildOptions, InstructError, InstructionInstance, QuestionPool, TranslateError, Translator};
use crate::merge::{spatial_merge, MergeParams};
use crate::par::{self, Exec};
use crate::refine::{adaptive_process, RefineError, RefineParams};
use crate::scenario::{classify, Classification, EnsembledLabel, ScenarioError};

pub fn classify_images(images: &[(String, Vec<f64>)], labels: &[EnsembledLabel], exec: Exec) -> Result<Vec<Classification>, ScenarioError> {
    par::map_result(exec, images, |(_, v)| classify(v, labels))
}

pub fn filter_corpus(records: &[ImageAnnotation], p: &FilterParams, exec: Exec) -> Vec<FilterVerdict> {
    par::map(exec, records, |r| check_image(r.lines(), r.dims, p))
}

/// Replaces each record's blocks with the spatial merge of its lines.
pub fn merge_corpus(records: &[ImageAnnotation], p: &MergeParams, exec: Exec) -> Result<Vec<ImageAnnotation>, GeometryError> {
    par::map_result(exec, records, |r| {
        let mut out = r.clone();
        out.blocks = Some(spatial_merge(r.lines(), p)?);
        Ok(out)
    })
}

/// Routes each record by scenario difficulty. A record's own blocks, when it
/// has any, are the layout engine's output for that image.
pub fn refine_corpus(records: &[ImageAnnotation], p: &RefineParams, exec: Exec) -> Result<Vec<ImageAnnotation>, RefineError> {
    par::map_result(exec, records, |r| {
        let mut out = r.clone();
        out.blocks = Some(adaptive_process(r, r.blocks.as_deref(), p)?);
        Ok(out)
    })
}

/// Translates untranslated text blocks. Serial translators are called from
/// one thread. Failures leave blocks untranslated and are returned per image.
pub fn translate_corpus(
    records: &[ImageAnnotation],
    translator: &dyn Translator,
    exec: Exec,
) -> (Vec<ImageAnnotation>, Vec<(String, usize, TranslateError)>) {
    let exec = if translator.is_serial() { Exec::Sequential } else { exec };
    let done = par::map(exec, records, |r| {
        let mut out = r.clone();
        let Some(pair) = r.lang_pair else {
            warn!("{}: no language pair, left untranslated", r.image_id);
            return (out, Vec::new());
        };
        let t = translate_blocks(r.blocks(), pair, translator);
        out.blocks = r.blocks.as_ref().map(|_| t.blocks);
        let errors = t.errors.into_iter().map(|(i, e)| (r.image_id.clone(), i, e)).collect();
        (out, errors)
    });
    let mut errors = Vec::new();
    let records = done
        .into_iter()
        .map(|(r, e)| {
            errors.extend(e);
            r
        })
        .collect();
    (records, errors)
}

/// Instances for the whole corpus, image by image.
pub fn build_corpus(records: &[ImageAnnotation], pool: &QuestionPool, opts: &BuildOptions, exec: Exec) -> Result<Vec<InstructionInstance>, InstructError> {
    let per_image = par::map_result(exec, records, |r| build_instances(r, pool, opts))?;
    Ok(per_image.into_iter().flatten().collect())
}

/// Blocks of a record that survive to instruction building.
pub fn translated_blocks(r: &ImageAnnotation) -> impl Iterator<Item = &LayoutBlock> {
    r.text_blocks().filter(|b| b.translation.as_deref().is_some_and(|t| !t.trim().is_empty()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LangPair, OcrLine};
    use crate::geometry::{BBox, ImageDims};
    use crate::instruct::DictionaryTranslator;
    use crate::scenario::ScenarioLabel;
    use std::collections::HashMap;

    fn corpus(n: usize) -> Vec<ImageAnnotation> {
        (0..n)
            .map(|i| {
                let mut a = ImageAnnotation::new(format!("img{i}"), ImageDims::new(200, 200).unwrap());
                a.scenario = Some(ScenarioLabel::Poster);
                a.lang_pair = Some(LangPair::EnZh);
                a.lines = Some(vec![
                    OcrLine::new("hello", BBox::abs(10.0, 10.0, 90.0, 30.0)),
                    OcrLine::new("world", BBox::abs(10.0, 32.0, 90.0, 52.0)),
                    OcrLine::new("far", BBox::abs(10.0, 150.0, 90.0, 170.0)),
                ]);
                a
            })
            .collect()
    }

    #[test]
    fn stages_agree_across_exec_modes() {
        let c = corpus(12);
        let dict = DictionaryTranslator::new(HashMap::new()).passthrough();
        let run = |exec| {
            let merged = merge_corpus(&c, &MergeParams::default(), exec).unwrap();
            let (translated, errors) = translate_corpus(&merged, &dict, exec);
            assert!(errors.is_empty());
            build_corpus(&translated, &QuestionPool::default(), &BuildOptions::default(), exec).unwrap()
        };
        let a = run(Exec::Parallel);
        assert_eq!(a, run(Exec::Sequential));
        // two merged blocks per image: two regions and one full-image instance
        assert_eq!(a.len(), 12 * 3);
        assert_eq!(filter_corpus(&c, &FilterParams::default(), Exec::Parallel).len(), 12);
    }

    #[test]
    fn refine_uses_record_blocks_for_hard_scenarios() {
        let mut c = corpus(1);
        c[0].scenario = Some(ScenarioLabel::Document);
        c[0].blocks = Some(vec![LayoutBlock::text(BBox::abs(0.0, 0.0, 100.0, 60.0), "hello world")]);
        let out = refine_corpus(&c, &RefineParams::default(), Exec::Sequential).unwrap();
        let texts: Vec<_> = out[0].blocks().iter().map(|b| b.text.clone().unwrap()).collect();
        assert_eq!(texts, ["hello world", "far"]);
    }
}
