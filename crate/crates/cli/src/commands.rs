use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use attrgen::dataset::{
    apply_eye_occlusion, default_eye_bar, montage, one_hot, read_image_any, synth_generate, Dataset, Split,
    SynthConfig, Vocabulary,
};
use attrgen::evaluation::{
    align_gallery, dump_attribute_maps, gallery_from, generation_error, metrics_csv, pose_bins_csv, pose_change_bins,
    recall_at_k, retrieval_montage, retrieve_all, sample_queries, self_alignment_rate, train_classifier,
    two_step_baseline, Criterion, Feature, GalleryIndex, MetricRow,
};
use attrgen::gradcheck::{run_suite, GradcheckConfig};
use attrgen::models::{Checkpoint, Generator};
use attrgen::training::{write_curve, LossKind, Stage, TrainConfig, Trainer};
use attrgen::{Error, Image};
use rayon::prelude::*;

use crate::{
    Cli, Command, CompleteArgs, DumpMapsArgs, EvalGenArgs, EvalRetrievalArgs, Failure, FeatureArg, GenerateArgs,
    GradcheckArgs, LossArg, SynthArgs, TaskArg, TrainArgs,
};

type Outcome = std::result::Result<(), Failure>;

pub fn dispatch(cli: &Cli, explicit: &[&str]) -> Outcome {
    match &cli.command {
        Command::Synth(a) => synth(a, cli.seed),
        Command::Train(a) => train(a, cli.seed, explicit),
        Command::Generate(a) => generate(a),
        Command::Complete(a) => complete(a),
        Command::EvalGen(a) => eval_gen(a),
        Command::EvalRetrieval(a) => eval_retrieval(a, cli.seed),
        Command::DumpMaps(a) => dump_maps(a),
        Command::Gradcheck(a) => gradcheck(a, cli.seed),
    }
}

fn synth(a: &SynthArgs, seed: u64) -> Outcome {
    let cfg = SynthConfig {
        train_identities: a.ids,
        test_identities: a.test_ids,
        illuminations: a.illums,
        vocab: a.vocab.into(),
        seed,
        size: a.size,
    };
    let entries = synth_generate(&cfg, &a.out)?;
    println!("wrote {} images and {}", entries.len(), a.out.join("manifest.csv").display());
    Ok(())
}

fn loss_kind(l: LossArg) -> LossKind {
    match l {
        LossArg::Mse => LossKind::Mse,
        LossArg::Mae => LossKind::Mae,
    }
}

fn train_config(a: &TrainArgs, seed: u64, explicit: &[&str]) -> attrgen::Result<TrainConfig> {
    let mut base = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    if a.task == TaskArg::Completion {
        base.loss = LossKind::Mae;
    }
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load_over(base, p)?,
        None => base,
    };
    for &flag in explicit {
        match flag {
            "batch_size" => cfg.batch_size = a.batch_size,
            "lr" => cfg.learning_rate = a.lr,
            "momentum" => cfg.momentum = a.momentum,
            "max_iterations" => cfg.max_iterations = a.max_iterations,
            "loss" => cfg.loss = loss_kind(a.loss),
            "eval_interval" => cfg.eval_interval = a.eval_interval,
            "seed" => cfg.seed = seed,
            _ => {}
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(a: &TrainArgs, seed: u64, explicit: &[&str]) -> Outcome {
    let stage = if a.stage == 1 { Stage::One } else { Stage::Two };
    if stage == Stage::Two && a.ckpt1.is_none() {
        return Err(Failure::Usage("train --stage 2 requires --ckpt1 <stage-1 checkpoint>".into()));
    }
    if stage == Stage::Two && a.task == TaskArg::Completion {
        return Err(Failure::Usage("--task completion trains stage 1 only".into()));
    }
    let config = train_config(a, seed, explicit)?;
    let vocab: Vocabulary = a.vocab.into();
    let prior = a.ckpt1.as_ref().map(Checkpoint::load).transpose()?;
    let data = Dataset::load(&a.manifest, vocab.size())?;
    let (pairs, eval_pairs) = match a.task {
        TaskArg::Change => (data.pairs(Split::Train)?, data.pairs(Split::Test)?),
        TaskArg::Completion => {
            let h = data.images().first().map(|i| i.height()).unwrap_or(0);
            let (top, height) = default_eye_bar(h);
            (
                data.completion_pairs(Split::Train, top, height)?,
                data.completion_pairs(Split::Test, top, height)?,
            )
        }
    };
    let mut trainer = match &a.resume {
        Some(p) => Trainer::new(stage, config, Checkpoint::load(p)?, &pairs, &eval_pairs, prior.as_ref())?,
        None => Trainer::fresh(stage, config, &pairs, &eval_pairs, prior.as_ref())?,
    };
    eprintln!(
        "stage {stage}: {} training pairs, {} held-out pairs, {} iterations",
        pairs.len(),
        eval_pairs.len(),
        config.max_iterations
    );
    let curve = trainer.run_with(|p| {
        if let Some(e) = p.eval_loss {
            eprintln!("iter {:>6}  train {:.6}  eval {:.6}", p.iteration, p.train_loss, e);
        }
    })?;
    let ckpt = trainer.into_checkpoint();
    ckpt.save(&a.out)?;
    let curve_path = a.curve.clone().unwrap_or_else(|| a.out.with_extension("curve.csv"));
    write_curve(&curve_path, &curve)?;
    println!("wrote {} and {}", a.out.display(), curve_path.display());
    Ok(())
}

fn load_inputs(paths: &[PathBuf], size: (usize, usize)) -> attrgen::Result<Vec<Image>> {
    paths
        .iter()
        .map(|p| {
            let img = read_image_any(p)?;
            if (img.height(), img.width()) != size {
                return Err(Error::Format {
                    path: p.clone(),
                    reason: format!(
                        "checkpoint expects {}x{} images, got {}x{}",
                        size.1,
                        size.0,
                        img.width(),
                        img.height()
                    ),
                });
            }
            Ok(img)
        })
        .collect()
}

fn save_image(path: &Path, img: &Image) -> attrgen::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    attrgen::dataset::write_image(path, img)
}

fn generate(a: &GenerateArgs) -> Outcome {
    let s1 = Checkpoint::load(&a.ckpt1)?;
    let s2 = a.ckpt2.as_ref().map(Checkpoint::load).transpose()?;
    let generator = Generator::new(&s1, s2.as_ref())?;
    let vocab = generator.vocabulary();
    let attrs: Vec<usize> = if a.attr.is_empty() { (0..vocab).collect() } else { a.attr.clone() };
    let targets = attrs
        .iter()
        .map(|&t| one_hot(t, vocab))
        .collect::<attrgen::Result<Vec<_>>>()?;
    let inputs = load_inputs(&a.input, generator.input_size())?;
    let rows = inputs
        .par_iter()
        .map(|img| {
            let mut row = vec![img.clone()];
            for t in &targets {
                row.push(generator.generate(img, t, false)?.best().clone());
            }
            Ok(row)
        })
        .collect::<attrgen::Result<Vec<_>>>()?;
    save_image(&a.out, &montage(&rows, 1)?)?;
    println!("wrote {} ({} inputs x {} attributes)", a.out.display(), rows.len(), targets.len());
    Ok(())
}

fn complete(a: &CompleteArgs) -> Outcome {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let generator = Generator::new(&ckpt, None)?;
    let vocab = generator.vocabulary();
    if a.attr.len() != 1 && a.attr.len() != a.input.len() {
        return Err(Failure::Usage(format!(
            "--attr takes one value or one per input ({} inputs, {} values)",
            a.input.len(),
            a.attr.len()
        )));
    }
    let inputs = load_inputs(&a.input, generator.input_size())?;
    let (dt, dh) = default_eye_bar(generator.input_size().0);
    let (top, height) = (a.bar_top.unwrap_or(dt), a.bar_height.unwrap_or(dh));
    let rows = inputs
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let attr = one_hot(if a.attr.len() == 1 { a.attr[0] } else { a.attr[i] }, vocab)?;
            let occluded = apply_eye_occlusion(img, top, height)?;
            let restored = generator.generate(&occluded, &attr, false)?.best().clone();
            Ok(vec![img.clone(), occluded, restored])
        })
        .collect::<attrgen::Result<Vec<_>>>()?;
    save_image(&a.out, &montage(&rows, 1)?)?;
    println!("wrote {} (rows {top}..{} occluded)", a.out.display(), top + height);
    Ok(())
}

fn write_text(path: &Path, text: &str) -> attrgen::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn eval_gen(a: &EvalGenArgs) -> Outcome {
    let s1 = Checkpoint::load(&a.ckpt1)?;
    let s2 = a.ckpt2.as_ref().map(Checkpoint::load).transpose()?;
    let vocab: Vocabulary = a.vocab.into();
    let pairs = Dataset::load(&a.manifest, vocab.size())?.pairs(Split::Test)?;
    let mut rows = vec![MetricRow {
        metric: "generation_error_stage1".into(),
        criterion: None,
        k: None,
        value: generation_error(&pairs, &s1, None)?,
    }];
    if let Some(s2) = &s2 {
        rows.push(MetricRow {
            metric: "generation_error_stage2".into(),
            criterion: None,
            k: None,
            value: generation_error(&pairs, &s1, Some(s2))?,
        });
    }
    let csv = metrics_csv(&rows);
    print!("{csv}");
    if let Some(out) = &a.out {
        write_text(out, &csv)?;
    }
    Ok(())
}

fn eval_retrieval(a: &EvalRetrievalArgs, seed: u64) -> Outcome {
    let feature = match a.feature {
        FeatureArg::Pixels => Feature::Pixels,
        FeatureArg::Stage2Mid => Feature::Stage2Mid,
    };
    if feature == Feature::Stage2Mid && a.ckpt2.is_none() {
        return Err(Failure::Usage("--feature stage2-mid requires --ckpt2".into()));
    }
    let criteria: Vec<Criterion> = match a.criterion {
        Some(n) => vec![Criterion::from_number(n).expect("clap restricts the range")],
        None => vec![Criterion::One, Criterion::Two],
    };
    let s1 = Checkpoint::load(&a.ckpt1)?;
    let s2 = a.ckpt2.as_ref().map(Checkpoint::load).transpose()?;
    let generator = Generator::new(&s1, s2.as_ref())?;
    let vocab: Vocabulary = a.vocab.into();
    let data = Dataset::load(&a.manifest, vocab.size())?;
    let gallery = gallery_from(&data, Split::Test);
    if a.k == 0 || a.k > gallery.len() {
        return Err(Failure::Usage(format!("--k must be in 1..={}", gallery.len())));
    }
    let queries = sample_queries(&gallery, vocab.size(), a.queries, seed)?;

    let mut rows = Vec::new();
    let index = if a.no_align {
        match feature {
            Feature::Pixels => GalleryIndex::from_pixels(gallery.clone()),
            Feature::Stage2Mid => GalleryIndex::from_self_generation(gallery.clone(), &generator, feature)?,
        }
    } else {
        let aligned = align_gallery(&gallery, &generator, feature == Feature::Stage2Mid)?;
        rows.push(MetricRow {
            metric: "self_alignment_rate".into(),
            criterion: None,
            k: None,
            value: self_alignment_rate(&gallery, &aligned),
        });
        GalleryIndex::from_aligned(gallery.clone(), &aligned, feature)?
    };
    let results = retrieve_all(&queries, &index, &generator, feature, a.k)?;

    let train: Vec<(Arc<Image>, usize)> = data
        .indices(Split::Train)
        .into_iter()
        .map(|i| (data.image(i).clone(), data.entries()[i].attribute_id))
        .collect();
    let classifier = train_classifier(
        &train,
        vocab.size(),
        &TrainConfig {
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            max_iterations: a.classifier_iterations,
            seed,
            ..TrainConfig::default()
        },
    )?;
    let raw_index = GalleryIndex::from_pixels(gallery.clone());
    let predicted = classifier.predict_all(&gallery.iter().map(|g| g.image.clone()).collect::<Vec<_>>())?;
    let baseline = queries
        .par_iter()
        .map(|q| two_step_baseline(q, q.image.pixels(), &raw_index, &predicted, a.k))
        .collect::<attrgen::Result<Vec<_>>>()?;
    let labelled: Vec<(Arc<Image>, usize)> = gallery.iter().map(|g| (g.image.clone(), g.attribute)).collect();
    rows.push(MetricRow {
        metric: "classifier_accuracy".into(),
        criterion: None,
        k: None,
        value: classifier.accuracy(&labelled)?,
    });

    for &c in &criteria {
        for k in 1..=a.k {
            rows.push(MetricRow {
                metric: "generation_recall".into(),
                criterion: Some(c),
                k: Some(k),
                value: recall_at_k(&results, k, c)?,
            });
            rows.push(MetricRow {
                metric: "baseline_recall".into(),
                criterion: Some(c),
                k: Some(k),
                value: recall_at_k(&baseline, k, c)?,
            });
        }
    }
    let csv = metrics_csv(&rows);
    print!("{csv}");
    let bins = pose_change_bins(&results, criteria[0]);
    if vocab == Vocabulary::Poses7 {
        print!("{}", pose_bins_csv(&bins));
    }
    if let Some(dir) = &a.out {
        write_text(&dir.join("metrics.csv"), &csv)?;
        if vocab == Vocabulary::Poses7 {
            write_text(&dir.join("pose_bins.csv"), &pose_bins_csv(&bins))?;
        }
        let shown = queries.len().min(8);
        let generations = queries[..shown]
            .iter()
            .map(|q| Ok(generator.generate(&q.image, &one_hot(q.target_attr, vocab.size())?, false)?.best().clone()))
            .collect::<attrgen::Result<Vec<_>>>()?;
        let m = retrieval_montage(&queries[..shown], &generations, &results[..shown], &gallery, a.k)?;
        save_image(&dir.join("montage.pgm"), &m)?;
    }
    Ok(())
}

fn dump_maps(a: &DumpMapsArgs) -> Outcome {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let files = dump_attribute_maps(&ckpt, &a.out)?;
    println!("wrote {} maps to {}", files.len(), a.out.display());
    Ok(())
}

fn gradcheck(a: &GradcheckArgs, seed: u64) -> Outcome {
    let cfg = GradcheckConfig {
        trials: a.trials,
        epsilon: a.epsilon,
        seed,
        network_size: a.size,
        ..GradcheckConfig::default()
    };
    let reports = run_suite(&cfg)?;
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} gradient checks failed")));
    }
    println!("all {} checks passed", reports.len());
    Ok(())
}
