use std::cmp::Ordering;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{one_hot, Dataset, Split};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::models::{Generation, Generator};

/// Representation used for ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Feature {
    /// Raw gray levels of the (generated) image.
    Pixels,
    /// The refinement network's 16x16x64 activation feeding its unpooling
    /// layer.
    Stage2Mid,
}

impl Feature {
    pub fn name(self) -> &'static str {
        match self {
            Feature::Pixels => "pixels",
            Feature::Stage2Mid => "stage2-mid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pixels" => Some(Feature::Pixels),
            "stage2-mid" => Some(Feature::Stage2Mid),
            _ => None,
        }
    }

    /// Feature vector of one generation.
    pub fn of(self, g: &Generation) -> Result<Vec<f64>> {
        match self {
            Feature::Pixels => Ok(g.best().pixels().to_vec()),
            Feature::Stage2Mid => g
                .feature
                .as_ref()
                .map(|t| t.data().iter().map(|&v| v as f64).collect())
                .ok_or_else(|| Error::invalid("generation carries no stage-2 feature")),
        }
    }
}

/// Which labels a retrieved item has to share with the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Criterion {
    /// Identity and target attribute.
    One,
    /// Identity, target attribute, and illumination.
    Two,
}

impl Criterion {
    pub fn number(self) -> u8 {
        match self {
            Criterion::One => 1,
            Criterion::Two => 2,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Criterion::One),
            2 => Some(Criterion::Two),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryItem {
    pub image: Arc<Image>,
    pub identity: u32,
    pub attribute: usize,
    pub illumination: Option<u32>,
}

/// The images of one split as a gallery.
pub fn gallery_from(dataset: &Dataset, split: Split) -> Vec<GalleryItem> {
    dataset
        .indices(split)
        .into_iter()
        .map(|i| {
            let e = &dataset.entries()[i];
            GalleryItem {
                image: dataset.image(i).clone(),
                identity: e.identity,
                attribute: e.attribute_id,
                illumination: e.illumination_id,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalQuery {
    pub image: Arc<Image>,
    pub identity: u32,
    pub illumination: Option<u32>,
    pub source_attr: usize,
    pub target_attr: usize,
}

impl RetrievalQuery {
    fn matches(&self, item: &GalleryItem, criterion: Criterion) -> bool {
        let base = item.identity == self.identity && item.attribute == self.target_attr;
        match criterion {
            Criterion::One => base,
            Criterion::Two => base && item.illumination == self.illumination,
        }
    }
}

/// `n` queries drawn from the gallery with replacement, each paired with a
/// target attribute different from its own.
pub fn sample_queries(gallery: &[GalleryItem], vocab: usize, n: usize, seed: u64) -> Result<Vec<RetrievalQuery>> {
    if gallery.is_empty() || vocab < 2 {
        return Err(Error::invalid("queries need a non-empty gallery and at least two attributes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let item = &gallery[rng.random_range(0..gallery.len())];
            let mut target = rng.random_range(0..vocab - 1);
            if target >= item.attribute {
                target += 1;
            }
            RetrievalQuery {
                image: item.image.clone(),
                identity: item.identity,
                illumination: item.illumination,
                source_attr: item.attribute,
                target_attr: target,
            }
        })
        .collect())
}

/// Scales to unit Euclidean norm; an all-zero vector is returned as is.
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Indices of `candidates` sorted by distance to `query`, ties by index.
pub fn rank(query: &[f64], features: &[Vec<f64>], candidates: impl IntoIterator<Item = usize>) -> Vec<(usize, f64)> {
    let mut d: Vec<(usize, f64)> = candidates
        .into_iter()
        .map(|i| (i, euclidean(query, &features[i])))
        .collect();
    d.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    d
}

/// A gallery with one L2-normalized feature vector per item.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryIndex {
    pub items: Vec<GalleryItem>,
    pub features: Vec<Vec<f64>>,
}

impl GalleryIndex {
    /// Features taken directly from the gallery images (pixels only).
    pub fn from_pixels(items: Vec<GalleryItem>) -> GalleryIndex {
        let features = items.iter().map(|i| l2_normalize(i.image.pixels())).collect();
        GalleryIndex { items, features }
    }

    /// Features from raw vectors, normalized here.
    pub fn from_features(items: Vec<GalleryItem>, raw: Vec<Vec<f64>>) -> Result<GalleryIndex> {
        if items.len() != raw.len() {
            return Err(Error::invalid("one feature vector per gallery item required"));
        }
        Ok(GalleryIndex {
            items,
            features: raw.iter().map(|f| l2_normalize(f)).collect(),
        })
    }

    /// Features of each item's self-generation under its own attribute.
    pub fn from_self_generation(items: Vec<GalleryItem>, generator: &Generator, feature: Feature) -> Result<GalleryIndex> {
        let vocab = generator.vocabulary();
        let raw = items
            .par_iter()
            .map(|it| {
                let g = generator.generate(&it.image, &one_hot(it.attribute, vocab)?, feature == Feature::Stage2Mid)?;
                feature.of(&g)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_features(items, raw)
    }

    /// Features of each item's aligned replacement.
    pub fn from_aligned(items: Vec<GalleryItem>, aligned: &[AlignedItem], feature: Feature) -> Result<GalleryIndex> {
        let raw = aligned
            .iter()
            .map(|a| feature.of(&a.generation))
            .collect::<Result<Vec<_>>>()?;
        Self::from_features(items, raw)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    /// Gallery indices, nearest first.
    pub ranked: Vec<usize>,
    pub distances: Vec<f64>,
    /// `correct[c][r]` says whether rank `r` is relevant under criterion
    /// `c + 1`.
    pub correct: [Vec<bool>; 2],
    pub source_attr: usize,
    pub target_attr: usize,
}

impl RetrievalResult {
    pub fn from_ranking(query: &RetrievalQuery, gallery: &[GalleryItem], ranking: &[(usize, f64)]) -> Self {
        let flags = |c| ranking.iter().map(|&(i, _)| query.matches(&gallery[i], c)).collect();
        RetrievalResult {
            ranked: ranking.iter().map(|r| r.0).collect(),
            distances: ranking.iter().map(|r| r.1).collect(),
            correct: [flags(Criterion::One), flags(Criterion::Two)],
            source_attr: query.source_attr,
            target_attr: query.target_attr,
        }
    }

    pub fn flags(&self, criterion: Criterion) -> &[bool] {
        &self.correct[criterion as usize]
    }

    /// Whether a relevant item is among the first `k`.
    pub fn hit(&self, k: usize, criterion: Criterion) -> bool {
        self.flags(criterion).iter().take(k).any(|&c| c)
    }
}

/// Generation-based retrieval: alter the query with the generator, then
/// rank the gallery by distance to the altered image's feature.
pub fn retrieve(
    query: &RetrievalQuery,
    gallery: &GalleryIndex,
    generator: &Generator,
    feature: Feature,
    k: usize,
) -> Result<RetrievalResult> {
    if k > gallery.len() {
        return Err(Error::invalid(format!("K = {k} exceeds gallery of {}", gallery.len())));
    }
    let g = generator.generate(
        &query.image,
        &one_hot(query.target_attr, generator.vocabulary())?,
        feature == Feature::Stage2Mid,
    )?;
    let q = l2_normalize(&feature.of(&g)?);
    let mut ranking = rank(&q, &gallery.features, 0..gallery.len());
    ranking.truncate(k);
    Ok(RetrievalResult::from_ranking(query, &gallery.items, &ranking))
}

/// Runs [`retrieve`] for many queries in parallel; output order follows
/// `queries`.
pub fn retrieve_all(
    queries: &[RetrievalQuery],
    gallery: &GalleryIndex,
    generator: &Generator,
    feature: Feature,
    k: usize,
) -> Result<Vec<RetrievalResult>> {
    queries
        .par_iter()
        .map(|q| retrieve(q, gallery, generator, feature, k))
        .collect()
}

/// Two-step baseline: keep gallery items whose predicted attribute is the
/// target, then rank them by distance to the unaltered query feature.
/// An empty filter yields an empty ranking.
pub fn two_step_baseline(
    query: &RetrievalQuery,
    query_feature: &[f64],
    gallery: &GalleryIndex,
    predicted: &[usize],
    k: usize,
) -> Result<RetrievalResult> {
    if predicted.len() != gallery.len() {
        return Err(Error::invalid("one predicted attribute per gallery item required"));
    }
    if k > gallery.len() {
        return Err(Error::invalid(format!("K = {k} exceeds gallery of {}", gallery.len())));
    }
    let q = l2_normalize(query_feature);
    let keep = (0..gallery.len()).filter(|&i| predicted[i] == query.target_attr);
    let mut ranking = rank(&q, &gallery.features, keep);
    ranking.truncate(k);
    Ok(RetrievalResult::from_ranking(query, &gallery.items, &ranking))
}

/// Fraction of results with a relevant item in their top `k`. Results
/// holding fewer than `k` items are judged on what they hold.
pub fn recall_at_k(results: &[RetrievalResult], k: usize, criterion: Criterion) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::invalid("recall of an empty result set"));
    }
    let hits = results.iter().filter(|r| r.hit(k, criterion)).count();
    Ok(hits as f64 / results.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseBin {
    pub delta: usize,
    pub recall_at_5: f64,
    pub count: usize,
}

/// Recall@5 grouped by `|target - source|` attribute index. Only
/// populated groups are returned, in ascending `delta`.
pub fn pose_change_bins(results: &[RetrievalResult], criterion: Criterion) -> Vec<PoseBin> {
    let max = results.iter().map(|r| r.source_attr.abs_diff(r.target_attr)).max().unwrap_or(0);
    (1..=max)
        .filter_map(|delta| {
            let group: Vec<&RetrievalResult> = results
                .iter()
                .filter(|r| r.source_attr.abs_diff(r.target_attr) == delta)
                .collect();
            if group.is_empty() {
                return None;
            }
            let hits = group.iter().filter(|r| r.hit(5, criterion)).count();
            Some(PoseBin {
                delta,
                recall_at_5: hits as f64 / group.len() as f64,
                count: group.len(),
            })
        })
        .collect()
}

/// One gallery image replaced by its closest self-generation.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedItem {
    pub generation: Generation,
    pub kept_attribute: usize,
    /// Raw-pixel distance of every candidate to the original.
    pub distances: Vec<f64>,
}

impl AlignedItem {
    pub fn image(&self) -> &Image {
        self.generation.best()
    }

    pub fn distance(&self) -> f64 {
        self.distances[self.kept_attribute]
    }
}

/// Generic alignment: `generate(image, attribute)` yields the candidate
/// for every attribute; the one nearest the original in raw pixels is
/// kept, ties going to the lower attribute index.
pub fn align_with<F>(gallery: &[GalleryItem], vocab: usize, generate: F) -> Result<Vec<AlignedItem>>
where
    F: Fn(&Image, usize) -> Result<Generation> + Sync,
{
    if vocab == 0 {
        return Err(Error::invalid("alignment needs a non-empty vocabulary"));
    }
    gallery
        .par_iter()
        .map(|item| {
            let mut candidates = Vec::with_capacity(vocab);
            let mut distances = Vec::with_capacity(vocab);
            for a in 0..vocab {
                let g = generate(&item.image, a)?;
                distances.push(g.best().distance(&item.image)?);
                candidates.push(g);
            }
            let mut kept = 0;
            for a in 1..vocab {
                if distances[a] < distances[kept] {
                    kept = a;
                }
            }
            Ok(AlignedItem {
                generation: candidates.swap_remove(kept),
                kept_attribute: kept,
                distances,
            })
        })
        .collect()
}

/// Gallery distribution alignment with a trained generator.
pub fn align_gallery(gallery: &[GalleryItem], generator: &Generator, with_feature: bool) -> Result<Vec<AlignedItem>> {
    let vocab = generator.vocabulary();
    align_with(gallery, vocab, |img, a| generator.generate(img, &one_hot(a, vocab)?, with_feature))
}

/// Share of aligned items that kept their own attribute.
pub fn self_alignment_rate(gallery: &[GalleryItem], aligned: &[AlignedItem]) -> f64 {
    if gallery.is_empty() {
        return 0.0;
    }
    let same = gallery
        .iter()
        .zip(aligned)
        .filter(|(g, a)| g.attribute == a.kept_attribute)
        .count();
    same as f64 / gallery.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(identity: u32, attribute: usize, illum: u32, fill: u8) -> GalleryItem {
        GalleryItem {
            image: Arc::new(Image::filled(2, 2, fill)),
            identity,
            attribute,
            illumination: Some(illum),
        }
    }

    fn query(identity: u32, target: usize, illum: u32) -> RetrievalQuery {
        RetrievalQuery {
            image: Arc::new(Image::filled(2, 2, 0)),
            identity,
            illumination: Some(illum),
            source_attr: 0,
            target_attr: target,
        }
    }

    #[test]
    fn exact_match_ranks_first() {
        let feats = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]];
        let r = rank(&[0.0, 1.0], &feats, 0..3);
        assert_eq!(r[0], (1, 0.0));
        assert!(r.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn ties_break_by_index() {
        let feats = vec![vec![1.0], vec![1.0], vec![1.0]];
        let r = rank(&[0.0], &feats, [2, 0, 1]);
        assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn positive_scaling_keeps_ranking() {
        let raw = vec![vec![3.0, 1.0], vec![0.5, 2.0], vec![1.0, 1.0]];
        let items: Vec<GalleryItem> = (0..3).map(|i| item(i, 1, 0, 0)).collect();
        let a = GalleryIndex::from_features(items.clone(), raw.clone()).unwrap();
        let scaled: Vec<Vec<f64>> = raw.iter().enumerate().map(|(i, v)| v.iter().map(|x| x * (i as f64 + 2.5)).collect()).collect();
        let b = GalleryIndex::from_features(items, scaled).unwrap();
        let q = l2_normalize(&[1.0, 2.0]);
        let ids = |g: &GalleryIndex| rank(&q, &g.features, 0..3).iter().map(|x| x.0).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&b));
    }

    #[test]
    fn zero_vector_left_raw() {
        assert_eq!(l2_normalize(&[0.0, 0.0]), vec![0.0, 0.0]);
        let n = l2_normalize(&[3.0, 4.0]);
        assert!((n[0] - 0.6).abs() < 1e-15 && (n[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn criteria_flags() {
        let gallery = vec![item(1, 2, 0, 0), item(1, 2, 1, 0), item(2, 2, 0, 0), item(1, 3, 0, 0)];
        let q = query(1, 2, 1);
        let ranking: Vec<(usize, f64)> = (0..4).map(|i| (i, i as f64)).collect();
        let r = RetrievalResult::from_ranking(&q, &gallery, &ranking);
        assert_eq!(r.flags(Criterion::One), &[true, true, false, false]);
        assert_eq!(r.flags(Criterion::Two), &[false, true, false, false]);
        assert!(r.hit(1, Criterion::One) && !r.hit(1, Criterion::Two) && r.hit(2, Criterion::Two));
    }

    #[test]
    fn recall_basics() {
        let gallery = vec![item(1, 2, 0, 0), item(3, 2, 0, 0)];
        let q = query(1, 2, 0);
        let first = RetrievalResult::from_ranking(&q, &gallery, &[(0, 0.0), (1, 1.0)]);
        for k in 1..=2 {
            assert_eq!(recall_at_k(&[first.clone()], k, Criterion::Two).unwrap(), 1.0);
        }
        let none = RetrievalResult::from_ranking(&query(9, 2, 0), &gallery, &[(0, 0.0), (1, 1.0)]);
        assert_eq!(recall_at_k(&[none.clone()], 2, Criterion::One).unwrap(), 0.0);
        assert_eq!(recall_at_k(&[first, none], 1, Criterion::One).unwrap(), 0.5);
        assert!(recall_at_k(&[], 1, Criterion::One).is_err());
    }

    #[test]
    fn baseline_filters_by_prediction() {
        let items = vec![item(1, 2, 0, 10), item(1, 3, 0, 12), item(2, 2, 0, 11)];
        let gallery = GalleryIndex::from_pixels(items);
        let q = query(1, 2, 0);
        let qf = vec![10.0; 4];
        let perfect = [2, 3, 2];
        let r = two_step_baseline(&q, &qf, &gallery, &perfect, 2).unwrap();
        assert!(r.ranked.iter().all(|&i| perfect[i] == 2));
        let empty = two_step_baseline(&q, &qf, &gallery, &[5, 5, 5], 2).unwrap();
        assert!(empty.ranked.is_empty());
        assert_eq!(recall_at_k(&[empty], 2, Criterion::One).unwrap(), 0.0);
    }

    #[test]
    fn bins_skip_empty_groups() {
        let gallery = vec![item(1, 6, 0, 0)];
        let mut q = query(1, 6, 0);
        q.source_attr = 0;
        let r6 = RetrievalResult::from_ranking(&q, &gallery, &[(0, 0.0)]);
        q.source_attr = 5;
        let r1 = RetrievalResult::from_ranking(&q, &gallery, &[(0, 0.0)]);
        let bins = pose_change_bins(&[r6, r1.clone()], Criterion::Two);
        assert_eq!(bins.iter().map(|b| b.delta).collect::<Vec<_>>(), vec![1, 6]);
        assert!(bins.iter().all(|b| b.count == 1 && b.recall_at_5 == 1.0));
        assert_eq!(pose_change_bins(&[r1], Criterion::One).len(), 1);
    }

    #[test]
    fn alignment_keeps_argmin() {
        let gallery = vec![item(0, 1, 0, 100), item(0, 2, 0, 40)];
        let aligned = align_with(&gallery, 4, |img, a| {
            let v = (a * 30) as u8;
            let _ = img;
            Ok(Generation {
                stage1: Image::filled(2, 2, v),
                refined: None,
                feature: None,
            })
        })
        .unwrap();
        assert_eq!(aligned.len(), 2);
        assert_eq!(aligned[0].kept_attribute, 3);
        assert_eq!(aligned[1].kept_attribute, 1);
        for a in &aligned {
            assert!(a.distances.iter().all(|&d| a.distance() <= d));
        }
        assert_eq!(self_alignment_rate(&gallery, &aligned), 0.0);
    }

    #[test]
    fn queries_change_attribute() {
        let gallery: Vec<GalleryItem> = (0..7).map(|a| item(0, a, 0, 0)).collect();
        let qs = sample_queries(&gallery, 7, 200, 3).unwrap();
        assert!(qs.iter().all(|q| q.source_attr != q.target_attr && q.target_attr < 7));
        assert_eq!(qs, sample_queries(&gallery, 7, 200, 3).unwrap());
    }
}
