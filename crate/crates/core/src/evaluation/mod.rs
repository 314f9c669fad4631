//! Generation error, retrieval metrics, and diagnostics.

mod classifier;
mod retrieval;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use classifier::{train_classifier, AttributeClassifier};
pub use retrieval::{
    align_gallery, align_with, euclidean, gallery_from, l2_normalize, pose_change_bins, rank, recall_at_k, retrieve,
    retrieve_all, sample_queries, self_alignment_rate, two_step_baseline, AlignedItem, Criterion, Feature,
    GalleryIndex, GalleryItem, PoseBin, RetrievalQuery, RetrievalResult,
};

use crate::dataset::{montage, write_image, SamplePair};
use crate::error::{Error, Result};
use crate::image::{AttributeVector, Image};
use crate::models::{encode_attribute, Checkpoint, Generator};

/// Mean over pairs of the per-pixel squared error between `generate(pair)`
/// and the pair's target, in raw gray levels.
pub fn generation_error_with<F>(pairs: &[SamplePair], generate: F) -> Result<f64>
where
    F: Fn(&SamplePair) -> Result<Image> + Sync,
{
    if pairs.is_empty() {
        return Err(Error::invalid("generation error over no pairs"));
    }
    let errs = pairs
        .par_iter()
        .map(|p| generate(p)?.mean_squared_error(&p.target))
        .collect::<Result<Vec<f64>>>()?;
    Ok(errs.iter().sum::<f64>() / pairs.len() as f64)
}

/// Generation error of stage 1 alone, or refined by stage 2 when given.
pub fn generation_error(pairs: &[SamplePair], stage1: &Checkpoint, stage2: Option<&Checkpoint>) -> Result<f64> {
    let generator = Generator::new(stage1, stage2)?;
    let vocab = generator.vocabulary();
    if let Some(p) = pairs.iter().find(|p| p.target_attr.size() != vocab) {
        return Err(Error::invalid(format!(
            "pairs use a {}-way vocabulary, checkpoint has {vocab}",
            p.target_attr.size()
        )));
    }
    generation_error_with(pairs, |p| Ok(generator.generate(&p.source, &p.target_attr, false)?.best().clone()))
}

/// Mean absolute error restricted to rows `[top, top + height)`.
pub fn region_mae(pred: &Image, target: &Image, top: usize, height: usize) -> Result<f64> {
    pred.check_compatible(target)?;
    if top + height > pred.height() || height == 0 {
        return Err(Error::invalid("region outside the image"));
    }
    let w = pred.width();
    let (a, b) = (&pred.pixels()[top * w..(top + height) * w], &target.pixels()[top * w..(top + height) * w]);
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Occluded-region MAE of the completion network and of the trivial
/// predictor that returns its occluded input, both averaged over pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletionScore {
    pub model: f64,
    pub trivial: f64,
}

pub fn completion_error(pairs: &[SamplePair], checkpoint: &Checkpoint, top: usize, height: usize) -> Result<CompletionScore> {
    if pairs.is_empty() {
        return Err(Error::invalid("completion error over no pairs"));
    }
    let generator = Generator::new(checkpoint, None)?;
    let scores = pairs
        .par_iter()
        .map(|p| {
            let out = generator.generate(&p.source, &p.target_attr, false)?;
            Ok((
                region_mae(out.best(), &p.target, top, height)?,
                region_mae(&p.source, &p.target, top, height)?,
            ))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let n = pairs.len() as f64;
    Ok(CompletionScore {
        model: scores.iter().map(|s| s.0).sum::<f64>() / n,
        trivial: scores.iter().map(|s| s.1).sum::<f64>() / n,
    })
}

/// Linear rescale of `values` onto `[0, 255]`; a constant map becomes all
/// zeros.
pub fn min_max_scale(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo) * 255.0).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// The attribute branch's maps for every attribute, each as its own raw
/// image. Outer index is the attribute, inner the map channel.
pub fn attribute_maps(checkpoint: &Checkpoint) -> Result<Vec<Vec<Image>>> {
    let generator = Generator::new(checkpoint, None)?;
    let vocab = generator.vocabulary();
    (0..vocab)
        .map(|a| {
            let maps = encode_attribute(&AttributeVector::one_hot(a, vocab)?, &checkpoint.network)?;
            let (h, w, c) = maps.hwc()?;
            (0..c)
                .map(|m| {
                    let v: Vec<f64> = (0..h * w).map(|i| maps.data()[i * c + m] as f64).collect();
                    Image::raw(h, w, min_max_scale(&v))
                })
                .collect()
        })
        .collect()
}

/// Writes `attr{a}_map{m}.pgm` for every attribute and map channel.
pub fn dump_attribute_maps(checkpoint: &Checkpoint, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for (a, maps) in attribute_maps(checkpoint)?.iter().enumerate() {
        for (m, img) in maps.iter().enumerate() {
            let p = out_dir.join(format!("attr{a}_map{m}.pgm"));
            write_image(&p, img)?;
            written.push(p);
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub criterion: Option<Criterion>,
    pub k: Option<usize>,
    pub value: f64,
}

/// CSV with header `metric,criterion,K,value`; absent fields are empty.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("metric,criterion,K,value\n");
    for r in rows {
        let c = r.criterion.map(|c| c.number().to_string()).unwrap_or_default();
        let k = r.k.map(|k| k.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{c},{k},{}", r.metric, r.value);
    }
    s
}

/// CSV with header `delta,recall_at_5,count`.
pub fn pose_bins_csv(bins: &[PoseBin]) -> String {
    let mut s = String::from("delta,recall_at_5,count\n");
    for b in bins {
        let _ = writeln!(s, "{},{},{}", b.delta, b.recall_at_5, b.count);
    }
    s
}

/// One row per query: the query, its generation, then the top retrieved
/// gallery images.
pub fn retrieval_montage(
    queries: &[RetrievalQuery],
    generations: &[Image],
    results: &[RetrievalResult],
    gallery: &[GalleryItem],
    top: usize,
) -> Result<Image> {
    let rows: Vec<Vec<Image>> = queries
        .iter()
        .zip(generations)
        .zip(results)
        .map(|((q, g), r)| {
            let mut row = vec![(*q.image).clone(), g.clone()];
            row.extend(r.ranked.iter().take(top).map(|&i| (*gallery[i].image).clone()));
            row
        })
        .collect();
    montage(&rows, 1)
}
