//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use attrgen::dataset::{
    build_pairs, default_eye_bar, parse_manifest, read_image_any, write_image, Dataset, Split,
    SynthConfig, Vocabulary, MANIFEST_HEADER,
};
use attrgen::evaluation::{
    align_gallery, align_with, completion_error, gallery_from, generation_error, pose_change_bins, recall_at_k,
    retrieve_all, sample_queries, train_classifier, two_step_baseline, Criterion, Feature, GalleryIndex, GalleryItem,
    RetrievalQuery, RetrievalResult,
};
use attrgen::gradcheck::{run_suite, GradcheckConfig};
use attrgen::models::{build_stage1, Checkpoint, Generation, Generator};
use attrgen::nn::{maxpool2x2_forward, relu_forward, unpool2x2_forward};
use attrgen::training::{LossKind, Stage, TrainConfig, Trainer};
use attrgen::{Image, Tensor};

struct Line {
    id: u8,
    passed: bool,
    detail: String,
    elapsed: Duration,
}

fn criterion(id: u8, f: impl FnOnce() -> (bool, String)) -> Line {
    let t = Instant::now();
    let (passed, detail) = f();
    let line = Line {
        id,
        passed,
        detail,
        elapsed: t.elapsed(),
    };
    println!(
        "criterion {:>2} {}  {}  [{:.1} s]",
        line.id,
        if line.passed { "PASS" } else { "FAIL" },
        line.detail,
        line.elapsed.as_secs_f64()
    );
    line
}

fn c1_gradients() -> (bool, String) {
    let t = Instant::now();
    let reports = run_suite(&GradcheckConfig::default()).expect("suite runs");
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let all = reports.iter().all(|r| r.passed());
    let fast = t.elapsed() < Duration::from_secs(120);
    (
        all && fast,
        format!(
            "gradient suite: {} checks, max relative error {worst:.2e} (< 1e-4), {:.1} s (< 120 s)",
            reports.len(),
            t.elapsed().as_secs_f64()
        ),
    )
}

fn c2_architecture() -> (bool, String) {
    let convs = [(1, 64), (64, 64), (71, 64), (64, 128), (128, 128), (128, 64), (64, 64), (64, 1)];
    let fcs = [(7, 512), (512, 16 * 16 * 7)];
    let oracle: usize = convs.iter().map(|&(i, o)| (9 * i + 1) * o).sum::<usize>()
        + fcs.iter().map(|&(n, m)| (n + 1) * m).sum::<usize>();
    let spec = build_stage1(7, 7).unwrap();
    let trace = spec.trace().unwrap();
    let shapes_ok = trace.image_branch.last().map(Vec::as_slice) == Some(&[16, 16, 64][..])
        && trace.attribute_branch.last().map(Vec::as_slice) == Some(&[16, 16, 7][..])
        && trace.trunk_input == [16, 16, 71]
        && trace.output() == [32, 32, 1]
        && spec.primary_shape() == [32, 32, 1];
    let count = spec.param_count();
    (
        count == 1_334_657 && count == oracle && shapes_ok,
        format!("stage-1 parameters {count} (oracle {oracle}, expected 1334657); shape trace ok = {shapes_ok}"),
    )
}

fn c3_pairs() -> (bool, String) {
    let t = Instant::now();
    let mut text = format!("{}\n", MANIFEST_HEADER.join(","));
    for id in 0..100 {
        for il in 0..20 {
            for a in 0..7 {
                text.push_str(&format!("img/{id}_{il}_{a}.pgm,{id},{a},{il},train\n"));
            }
        }
    }
    let entries = parse_manifest(Path::new("pairs.csv"), text.as_bytes(), 7).unwrap();
    let n = build_pairs(&entries).len();
    let took = t.elapsed();
    (
        n == 84_000 && took < Duration::from_secs(5),
        format!("100 identities x 20 illuminations x 7 poses -> {n} pairs (expected 84000) in {:.2} s", took.as_secs_f64()),
    )
}

fn small_config(batch: usize, lr: f64, iterations: u64, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: batch,
        learning_rate: lr,
        momentum: 0.95,
        max_iterations: iterations,
        loss: LossKind::Mse,
        seed,
        eval_interval: 0,
    }
}

fn c4_overfit() -> (bool, String) {
    let data = Dataset::synthetic(&SynthConfig {
        train_identities: 2,
        test_identities: 0,
        illuminations: 1,
        vocab: Vocabulary::Poses7,
        seed: 21,
        size: 16,
    })
    .unwrap();
    let all = data.pairs(Split::Train).unwrap();
    let pairs: Vec<_> = all.iter().step_by(all.len() / 8).take(8).cloned().collect();
    let cfg = small_config(8, 1e-3, 2000, 5);
    let mut trainer = Trainer::fresh(Stage::One, cfg, &pairs, &[], None).unwrap();
    let initial = trainer.evaluate(&pairs).unwrap();
    let mut last = initial;
    while trainer.iteration() < cfg.max_iterations {
        trainer.step().unwrap();
        if trainer.iteration() % 50 == 0 {
            last = trainer.evaluate(&pairs).unwrap();
            if last < 0.01 * initial {
                break;
            }
        }
    }
    (
        last < 0.01 * initial,
        format!(
            "8 pairs at 16x16: MSE {initial:.4} -> {last:.6} ({:.3}% of initial, need < 1%) after {} iterations",
            100.0 * last / initial,
            trainer.iteration()
        ),
    )
}

/// The synthetic pose study behind criteria 5-7: 40 training and 40
/// held-out identities under 4 illuminations at 16x16.
struct PoseStudy {
    data: Dataset,
    stage1: Checkpoint,
    stage2: Checkpoint,
}

fn pose_study() -> PoseStudy {
    let data = Dataset::synthetic(&SynthConfig {
        train_identities: 40,
        test_identities: 40,
        illuminations: 4,
        vocab: Vocabulary::Poses7,
        seed: 11,
        size: 16,
    })
    .unwrap();
    let train = data.pairs(Split::Train).unwrap();
    let (stage1, _) = Trainer::fresh(Stage::One, small_config(16, 0.01, 800, 1), &train, &[], None)
        .unwrap()
        .run()
        .unwrap();
    let (stage2, _) = Trainer::fresh(Stage::Two, small_config(16, 0.01, 800, 2), &train, &[], Some(&stage1))
        .unwrap()
        .run()
        .unwrap();
    PoseStudy { data, stage1, stage2 }
}

fn c5_refinement(s: &PoseStudy) -> (bool, String) {
    let test = s.data.pairs(Split::Test).unwrap();
    let e1 = generation_error(&test, &s.stage1, None).unwrap();
    let e2 = generation_error(&test, &s.stage1, Some(&s.stage2)).unwrap();
    (
        e2 <= e1,
        format!("held-out generation error over {} pairs: stage 1 {e1:.2}, stage 2 {e2:.2} (need stage 2 <= stage 1)", test.len()),
    )
}

struct RetrievalStudy {
    generation: Vec<RetrievalResult>,
    baseline: Vec<RetrievalResult>,
}

fn retrieval_study(s: &PoseStudy) -> RetrievalStudy {
    let generator = Generator::new(&s.stage1, Some(&s.stage2)).unwrap();
    let gallery = gallery_from(&s.data, Split::Test);
    let queries = sample_queries(&gallery, 7, 300, 17).unwrap();
    let aligned = align_gallery(&gallery, &generator, false).unwrap();
    let index = GalleryIndex::from_aligned(gallery.clone(), &aligned, Feature::Pixels).unwrap();
    let generation = retrieve_all(&queries, &index, &generator, Feature::Pixels, 5).unwrap();

    let train: Vec<(Arc<Image>, usize)> = s
        .data
        .indices(Split::Train)
        .into_iter()
        .map(|i| (s.data.image(i).clone(), s.data.entries()[i].attribute_id))
        .collect();
    let classifier = train_classifier(&train, 7, &TrainConfig {
        batch_size: 32,
        learning_rate: 0.01,
        momentum: 0.9,
        max_iterations: 300,
        seed: 3,
        ..TrainConfig::default()
    })
    .unwrap();
    let raw = GalleryIndex::from_pixels(gallery.clone());
    let predicted = classifier.predict_all(&gallery.iter().map(|g| g.image.clone()).collect::<Vec<_>>()).unwrap();
    let baseline = queries
        .iter()
        .map(|q| two_step_baseline(q, q.image.pixels(), &raw, &predicted, 5).unwrap())
        .collect();
    RetrievalStudy { generation, baseline }
}

fn c6_retrieval(r: &RetrievalStudy) -> (bool, String) {
    let g = recall_at_k(&r.generation, 5, Criterion::Two).unwrap();
    let b = recall_at_k(&r.baseline, 5, Criterion::Two).unwrap();
    (
        g > b && r.generation.len() >= 200,
        format!(
            "criterion-2 recall@5 over {} queries: generation-based {:.3}, two-step baseline {:.3} (need generation > baseline)",
            r.generation.len(),
            g,
            b
        ),
    )
}

fn c7_pose_bins(r: &RetrievalStudy) -> (bool, String) {
    let bins = pose_change_bins(&r.generation, Criterion::One);
    let get = |d| bins.iter().find(|b| b.delta == d);
    let listing: Vec<String> = bins.iter().map(|b| format!("{}:{:.2}({})", b.delta, b.recall_at_5, b.count)).collect();
    match (get(1), get(6)) {
        (Some(one), Some(six)) => (
            one.recall_at_5 >= six.recall_at_5,
            format!("recall@5 by pose change {} (need group 1 >= group 6)", listing.join(" ")),
        ),
        _ => (false, format!("groups 1 and 6 not both populated: {}", listing.join(" "))),
    }
}

fn c8_completion() -> (bool, String) {
    let data = Dataset::synthetic(&SynthConfig {
        train_identities: 40,
        test_identities: 10,
        illuminations: 2,
        vocab: Vocabulary::Poses7,
        seed: 13,
        size: 16,
    })
    .unwrap();
    let (top, height) = default_eye_bar(16);
    let train = data.completion_pairs(Split::Train, top, height).unwrap();
    let test = data.completion_pairs(Split::Test, top, height).unwrap();
    let cfg = TrainConfig {
        loss: LossKind::Mae,
        ..small_config(16, 0.01, 400, 4)
    };
    let (ckpt, _) = Trainer::fresh(Stage::One, cfg, &train, &[], None).unwrap().run().unwrap();
    let score = completion_error(&test, &ckpt, top, height).unwrap();
    (
        score.model < 0.5 * score.trivial,
        format!(
            "held-out occluded-region MAE: model {:.2}, black-bar predictor {:.2} (ratio {:.3}, need < 0.5)",
            score.model,
            score.trivial,
            score.model / score.trivial
        ),
    )
}

fn c9_determinism() -> (bool, String) {
    let data = Dataset::synthetic(&SynthConfig {
        train_identities: 2,
        test_identities: 0,
        illuminations: 1,
        vocab: Vocabulary::Poses7,
        seed: 9,
        size: 16,
    })
    .unwrap();
    let pairs = data.pairs(Split::Train).unwrap();
    let cfg = small_config(8, 0.01, 10, 6);
    let train = || Trainer::fresh(Stage::One, cfg, &pairs, &[], None).unwrap().run().unwrap().0;
    let a = train();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(train);
    let runs_equal = a.to_bytes() == b.to_bytes();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    a.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let ckpt_roundtrip = loaded == a && loaded.to_bytes() == a.to_bytes();

    let img = data.image(3).as_ref().clone();
    let pgm = dir.path().join("face.pgm");
    write_image(&pgm, &img).unwrap();
    let back = read_image_any(&pgm).unwrap();
    let pgm_roundtrip = back == img && std::fs::read(&pgm).unwrap() == {
        write_image(&pgm, &back).unwrap();
        std::fs::read(&pgm).unwrap()
    };
    (
        runs_equal && ckpt_roundtrip && pgm_roundtrip,
        format!(
            "repeat training bit-identical = {runs_equal}, checkpoint roundtrip = {ckpt_roundtrip}, PGM roundtrip = {pgm_roundtrip}"
        ),
    )
}

const CASES: u32 = 256;

fn run_property<S: Strategy>(name: &str, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> String
where
    S::Value: std::fmt::Debug,
{
    let mut runner = TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    });
    match runner.run(&strategy, test) {
        Ok(()) => String::new(),
        Err(e) => format!("{name}: {e}; "),
    }
}

fn tensor_strategy(nonnegative: bool) -> impl Strategy<Value = Tensor<f64>> {
    let lo = if nonnegative { 0.0 } else { -5.0 };
    (1usize..5, 1usize..5, 1usize..4).prop_flat_map(move |(h, w, c)| {
        prop::collection::vec(lo..5.0f64, h * w * c).prop_map(move |d| Tensor::new(&[h, w, c], d).unwrap())
    })
}

/// Random labelled gallery and rankings over it.
fn results_strategy() -> impl Strategy<Value = Vec<RetrievalResult>> {
    let item = (0u32..3, 0usize..4, 0u32..2);
    (prop::collection::vec(item, 6..20), prop::collection::vec((0u32..3, 0u32..2, 0usize..4, any::<u64>()), 1..15))
        .prop_map(|(items, queries)| {
            let img = Arc::new(Image::filled(2, 2, 0));
            let gallery: Vec<GalleryItem> = items
                .iter()
                .map(|&(identity, attribute, il)| GalleryItem {
                    image: img.clone(),
                    identity,
                    attribute,
                    illumination: Some(il),
                })
                .collect();
            queries
                .iter()
                .map(|&(identity, il, target, seed)| {
                    let q = RetrievalQuery {
                        image: img.clone(),
                        identity,
                        illumination: Some(il),
                        source_attr: (target + 1) % 4,
                        target_attr: target,
                    };
                    let mut order: Vec<usize> = (0..gallery.len()).collect();
                    rand::seq::SliceRandom::shuffle(&mut order[..], &mut ChaCha8Rng::seed_from_u64(seed));
                    let ranking: Vec<(usize, f64)> = order.iter().enumerate().map(|(r, &i)| (i, r as f64)).collect();
                    RetrievalResult::from_ranking(&q, &gallery, &ranking)
                })
                .collect()
        })
}

fn c10_invariants() -> (bool, String) {
    let mut failures = String::new();

    failures += &run_property("maxpool(unpool(x)) = x on x >= 0", tensor_strategy(true), |x| {
        let (y, _) = maxpool2x2_forward(&unpool2x2_forward(&x).unwrap()).unwrap();
        prop_assert_eq!(y, x);
        Ok(())
    });
    failures += &run_property("maxpool(unpool(x)) = relu(x)", tensor_strategy(false), |x| {
        let (y, _) = maxpool2x2_forward(&unpool2x2_forward(&x).unwrap()).unwrap();
        prop_assert_eq!(y, relu_forward(&x));
        Ok(())
    });
    failures += &run_property("recall@K monotone in K", results_strategy(), |rs| {
        for c in [Criterion::One, Criterion::Two] {
            for k in 1..rs[0].ranked.len() {
                prop_assert!(recall_at_k(&rs, k, c).unwrap() <= recall_at_k(&rs, k + 1, c).unwrap());
            }
        }
        Ok(())
    });
    failures += &run_property("criterion-2 recall <= criterion-1 recall", results_strategy(), |rs| {
        for k in 1..=rs[0].ranked.len() {
            prop_assert!(recall_at_k(&rs, k, Criterion::Two).unwrap() <= recall_at_k(&rs, k, Criterion::One).unwrap());
        }
        Ok(())
    });
    let align_case = (
        prop::collection::vec(prop::collection::vec(0u8..=255, 4), 1..6),
        prop::collection::vec(prop::collection::vec(-40.0f64..40.0, 4), 2..6),
    );
    failures += &run_property("alignment keeps the nearest self-generation", align_case, |(images, offsets)| {
        let gallery: Vec<GalleryItem> = images
            .iter()
            .map(|px| GalleryItem {
                image: Arc::new(Image::from_bytes(2, 2, px).unwrap()),
                identity: 0,
                attribute: 0,
                illumination: None,
            })
            .collect();
        let shift = |img: &Image, a: usize| {
            let px = img.pixels().iter().zip(&offsets[a]).map(|(v, o)| (v + o).clamp(0.0, 255.0)).collect();
            Image::raw(2, 2, px)
        };
        let aligned = align_with(&gallery, offsets.len(), |img, a| {
            Ok(Generation {
                stage1: shift(img, a)?,
                refined: None,
                feature: None,
            })
        })
        .unwrap();
        for (item, al) in gallery.iter().zip(&aligned) {
            let d: Vec<f64> = (0..offsets.len()).map(|a| shift(&item.image, a).unwrap().distance(&item.image).unwrap()).collect();
            let best = d.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(&al.distances, &d);
            prop_assert_eq!(al.kept_attribute, d.iter().position(|&v| v == best).unwrap());
            prop_assert_eq!(al.image(), &shift(&item.image, al.kept_attribute).unwrap());
        }
        Ok(())
    });
    (
        failures.is_empty(),
        if failures.is_empty() {
            format!("5 properties x {CASES} cases: pool/unpool, recall monotone in K, criterion 2 <= 1, alignment argmin")
        } else {
            failures
        },
    )
}

fn main() {
    let mut lines = vec![
        criterion(1, c1_gradients),
        criterion(2, c2_architecture),
        criterion(3, c3_pairs),
        criterion(4, c4_overfit),
    ];
    let t = Instant::now();
    let study = pose_study();
    println!("(trained the 16x16 pose study in {:.1} s)", t.elapsed().as_secs_f64());
    lines.push(criterion(5, || c5_refinement(&study)));
    let retrieval = retrieval_study(&study);
    lines.push(criterion(6, || c6_retrieval(&retrieval)));
    lines.push(criterion(7, || c7_pose_bins(&retrieval)));
    lines.push(criterion(8, c8_completion));
    lines.push(criterion(9, c9_determinism));
    lines.push(criterion(10, c10_invariants));

    let failed: Vec<u8> = lines.iter().filter(|l| !l.passed).map(|l| l.id).collect();
    println!("{} of {} criteria passed", lines.len() - failed.len(), lines.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
