use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::TrainConfig;
use super::optim::{compute_norm_stats, sgd_momentum_update};
use super::Stage;
use crate::dataset::SamplePair;
use crate::error::{Error, Result};
use crate::image::{Image, Space};
use crate::models::{build_stage1_with, build_stage2_at, Checkpoint, Network, NetworkId, NetworkSpec, Stage1Options};
use crate::nn::LayerParams;
use crate::tensor::Tensor;

/// Samples per parallel work unit. Fixed so that the order of floating
/// point additions, and hence the result, does not depend on thread count.
pub const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub iteration: u64,
    pub train_loss: f64,
    pub eval_loss: Option<f64>,
}

pub fn curve_to_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("iteration,train_loss,eval_loss\n");
    for p in curve {
        let eval = p.eval_loss.map(|e| e.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{}", p.iteration, p.train_loss, eval);
    }
    s
}

pub fn write_curve(path: impl AsRef<Path>, curve: &[CurvePoint]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, curve_to_csv(curve)).map_err(|e| Error::io(path, e))
}

/// Default network for a stage at a given input size and vocabulary.
pub fn stage_spec(stage: Stage, input_size: usize, attribute_count: usize) -> Result<NetworkSpec> {
    match stage {
        Stage::One => build_stage1_with(Stage1Options {
            input_size,
            attribute_count,
            ..Stage1Options::default()
        }),
        Stage::Two => build_stage2_at(input_size),
    }
}

/// Normalization statistics over the distinct images referenced by a set
/// of pairs.
pub fn pair_norm_stats(pairs: &[SamplePair]) -> Result<crate::image::NormStats> {
    let mut seen = HashSet::new();
    let mut images: Vec<&Image> = Vec::new();
    for p in pairs {
        for img in [&p.source, &p.target] {
            if seen.insert(Arc::as_ptr(img)) {
                images.push(img);
            }
        }
    }
    compute_norm_stats(images)
}

/// Mini-batch momentum SGD over a fixed set of pairs.
///
/// Batches are consecutive windows over an endless sequence of epoch
/// permutations, so batch `k` depends only on the checkpoint seed and `k`.
/// A trainer resumed from a saved checkpoint therefore follows the same
/// trajectory as one that never stopped.
#[derive(Debug)]
pub struct Trainer<'a> {
    stage: Stage,
    config: TrainConfig,
    checkpoint: Checkpoint,
    prior: Option<&'a Checkpoint>,
    pairs: &'a [SamplePair],
    eval_pairs: &'a [SamplePair],
    permutations: Vec<(u64, Vec<usize>)>,
}

impl<'a> Trainer<'a> {
    /// Starts from `checkpoint`, which may be fresh or resumed.
    pub fn new(
        stage: Stage,
        config: TrainConfig,
        checkpoint: Checkpoint,
        pairs: &'a [SamplePair],
        eval_pairs: &'a [SamplePair],
        prior: Option<&'a Checkpoint>,
    ) -> Result<Self> {
        config.validate()?;
        if pairs.is_empty() {
            return Err(Error::invalid("training needs at least one pair"));
        }
        let expected = match stage {
            Stage::One => NetworkId::Stage1,
            Stage::Two => NetworkId::Stage2,
        };
        if checkpoint.id() != expected {
            return Err(Error::invalid(format!(
                "stage {stage} trains a {expected} network, checkpoint holds {}",
                checkpoint.id()
            )));
        }
        let spec = checkpoint.network.spec();
        let size = (spec.input_height, spec.input_width);
        match (stage, prior) {
            (Stage::One, _) => {}
            (Stage::Two, None) => {
                return Err(Error::invalid("stage 2 training requires a stage-1 checkpoint"));
            }
            (Stage::Two, Some(p)) => {
                if p.id() != NetworkId::Stage1 {
                    return Err(Error::invalid(format!("stage-2 prior must be a stage1 network, got {}", p.id())));
                }
                let ps = p.network.spec();
                if (ps.input_height, ps.input_width) != size {
                    return Err(Error::invalid("stage-1 prior and stage-2 network differ in input size"));
                }
            }
        }
        let vocab = match stage {
            Stage::One => spec.attribute_count(),
            Stage::Two => prior.and_then(|p| p.network.spec().attribute_count()),
        };
        for p in pairs.iter().chain(eval_pairs) {
            if (p.source.height(), p.source.width()) != size {
                return Err(Error::ShapeMismatch {
                    op: "training pair",
                    expected: vec![size.0, size.1],
                    found: vec![p.source.height(), p.source.width()],
                });
            }
            if Some(p.target_attr.size()) != vocab {
                return Err(Error::invalid(format!(
                    "pair vocabulary {} does not match network ({vocab:?})",
                    p.target_attr.size()
                )));
            }
            if p.source.space() != Space::Raw || p.target.space() != Space::Raw {
                return Err(Error::Space("training pairs hold raw images".into()));
            }
        }
        Ok(Trainer {
            stage,
            config,
            checkpoint,
            prior,
            pairs,
            eval_pairs,
            permutations: Vec::new(),
        })
    }

    /// He-initialized network seeded by `config.seed`. Stage 1 computes
    /// normalization statistics from the pairs; stage 2 inherits the
    /// prior's.
    pub fn fresh(
        stage: Stage,
        config: TrainConfig,
        pairs: &'a [SamplePair],
        eval_pairs: &'a [SamplePair],
        prior: Option<&'a Checkpoint>,
    ) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::invalid("training needs at least one pair"))?;
        if first.source.height() != first.source.width() {
            return Err(Error::invalid("training images must be square"));
        }
        let (norm, spec) = match stage {
            Stage::One => (
                pair_norm_stats(pairs)?,
                stage_spec(stage, first.source.height(), first.target_attr.size())?,
            ),
            Stage::Two => {
                let p = prior.ok_or_else(|| Error::invalid("stage 2 training requires a stage-1 checkpoint"))?;
                (p.norm, stage_spec(stage, first.source.height(), first.target_attr.size())?)
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let network = Network::init(spec, &mut rng)?;
        Self::new(stage, config, Checkpoint::new(network, norm, config.seed), pairs, eval_pairs, prior)
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.checkpoint
    }

    pub fn iteration(&self) -> u64 {
        self.checkpoint.iteration
    }

    fn permutation(&mut self, epoch: u64) -> &[usize] {
        if let Some(i) = self.permutations.iter().position(|(e, _)| *e == epoch) {
            return &self.permutations[i].1;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.checkpoint.seed);
        rng.set_stream(epoch + 1);
        let mut order: Vec<usize> = (0..self.pairs.len()).collect();
        order.shuffle(&mut rng);
        if self.permutations.len() >= 2 {
            self.permutations.remove(0);
        }
        self.permutations.push((epoch, order));
        &self.permutations.last().expect("just pushed").1
    }

    /// Pair indices of batch `iteration`.
    pub fn batch_indices(&mut self, iteration: u64) -> Vec<usize> {
        let n = self.pairs.len() as u64;
        let b = self.config.batch_size as u64;
        (0..b)
            .map(|j| {
                let pos = iteration * b + j;
                self.permutation(pos / n)[(pos % n) as usize]
            })
            .collect()
    }

    fn sample_inputs(&self, pair: &SamplePair) -> Result<(Tensor<f32>, Tensor<f32>, Tensor<f32>)> {
        let norm = &self.checkpoint.norm;
        let x: Tensor<f32> = pair.source.normalize(norm)?.to_tensor();
        let y: Tensor<f32> = pair.target.normalize(norm)?.to_tensor();
        let secondary = match self.stage {
            Stage::One => pair.target_attr.to_tensor(),
            Stage::Two => {
                let prior = self.prior.expect("checked at construction");
                prior.network.forward(&x, Some(&pair.target_attr.to_tensor()))?
            }
        };
        Ok((x, secondary, y))
    }

    fn sample_grad(&self, pair: &SamplePair) -> Result<(f64, Vec<LayerParams<f32>>)> {
        let net = &self.checkpoint.network;
        let (x, s, y) = self.sample_inputs(pair)?;
        let (out, tape) = net.forward_train(&x, Some(&s))?;
        let (loss, g) = self.config.loss.eval(&out, &y)?;
        Ok((loss as f64, net.backward(&tape, &g)?.params))
    }

    /// Mean loss and mean parameter gradient over a batch.
    pub fn batch_gradient(&self, indices: &[usize]) -> Result<(f64, Vec<LayerParams<f32>>)> {
        let partials = indices
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut acc: Option<(f64, Vec<LayerParams<f32>>)> = None;
                for &i in chunk {
                    let (l, g) = self.sample_grad(&self.pairs[i])?;
                    acc = Some(match acc {
                        None => (l, g),
                        Some((al, mut ag)) => {
                            add_params(&mut ag, &g)?;
                            (al + l, ag)
                        }
                    });
                }
                Ok(acc.expect("chunks are non-empty"))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut it = partials.into_iter();
        let (mut loss, mut grads) = it.next().ok_or_else(|| Error::invalid("empty batch"))?;
        for (l, g) in it {
            loss += l;
            add_params(&mut grads, &g)?;
        }
        let n = indices.len() as f32;
        for g in &mut grads {
            g.scale(1.0 / n);
        }
        Ok((loss / indices.len() as f64, grads))
    }

    /// One optimizer step. Returns the batch loss measured before the
    /// update.
    pub fn step(&mut self) -> Result<f64> {
        let it = self.checkpoint.iteration;
        let indices = self.batch_indices(it);
        let (loss, grads) = self.batch_gradient(&indices)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        let ck = &mut self.checkpoint;
        sgd_momentum_update(
            ck.network.params_mut(),
            &mut ck.velocity,
            &grads,
            self.config.learning_rate as f32,
            self.config.momentum as f32,
        )?;
        ck.iteration += 1;
        Ok(loss)
    }

    /// Mean loss over a pair set without updating anything.
    pub fn evaluate(&self, pairs: &[SamplePair]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::invalid("cannot evaluate on no pairs"));
        }
        let losses = pairs
            .par_iter()
            .map(|p| {
                let (x, s, y) = self.sample_inputs(p)?;
                let out = self.checkpoint.network.forward(&x, Some(&s))?;
                Ok(self.config.loss.eval(&out, &y)?.0 as f64)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(losses.iter().sum::<f64>() / pairs.len() as f64)
    }

    /// Steps until the checkpoint reaches `max_iterations`, recording one
    /// curve point per step. `on_point` sees each point as it is produced.
    pub fn run_with(&mut self, mut on_point: impl FnMut(&CurvePoint)) -> Result<Vec<CurvePoint>> {
        let mut curve = Vec::new();
        while self.checkpoint.iteration < self.config.max_iterations {
            let train_loss = self.step()?;
            let iteration = self.checkpoint.iteration;
            let eval_due = self.config.eval_interval > 0
                && !self.eval_pairs.is_empty()
                && (iteration % self.config.eval_interval == 0 || iteration == self.config.max_iterations);
            let eval_loss = if eval_due {
                Some(self.evaluate(self.eval_pairs)?)
            } else {
                None
            };
            let p = CurvePoint {
                iteration,
                train_loss,
                eval_loss,
            };
            on_point(&p);
            curve.push(p);
        }
        Ok(curve)
    }

    pub fn run(mut self) -> Result<(Checkpoint, Vec<CurvePoint>)> {
        let curve = self.run_with(|_| {})?;
        Ok((self.checkpoint, curve))
    }
}

fn add_params(acc: &mut [LayerParams<f32>], g: &[LayerParams<f32>]) -> Result<()> {
    for (a, b) in acc.iter_mut().zip(g) {
        a.add_assign(b)?;
    }
    Ok(())
}

/// Trains one stage from scratch on `pairs`.
pub fn train_stage(
    stage: Stage,
    pairs: &[SamplePair],
    config: &TrainConfig,
    prior: Option<&Checkpoint>,
) -> Result<(Checkpoint, Vec<CurvePoint>)> {
    Trainer::fresh(stage, *config, pairs, &[], prior)?.run()
}
