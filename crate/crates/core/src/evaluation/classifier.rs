use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Image, NormStats};
use crate::models::{build_classifier, Network};
use crate::nn::LayerParams;
use crate::tensor::Tensor;
use crate::training::{compute_norm_stats, sgd_momentum_update, softmax_cross_entropy, TrainConfig, GRAD_CHUNK};

/// Small convolutional attribute classifier on raw pixels, used by the
/// two-step retrieval baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeClassifier {
    pub network: Network<f32>,
    pub norm: NormStats,
}

impl AttributeClassifier {
    fn input(&self, img: &Image) -> Result<Tensor<f32>> {
        Ok(img.normalize(&self.norm)?.to_tensor())
    }

    pub fn logits(&self, img: &Image) -> Result<Tensor<f32>> {
        self.network.forward(&self.input(img)?, None)
    }

    /// Most likely class, ties to the lower index.
    pub fn predict(&self, img: &Image) -> Result<usize> {
        let l = self.logits(img)?;
        let mut best = 0;
        for (i, &v) in l.data().iter().enumerate() {
            if v > l.data()[best] {
                best = i;
            }
        }
        Ok(best)
    }

    pub fn predict_all(&self, images: &[Arc<Image>]) -> Result<Vec<usize>> {
        images.par_iter().map(|i| self.predict(i)).collect()
    }

    pub fn accuracy(&self, samples: &[(Arc<Image>, usize)]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::invalid("accuracy over no samples"));
        }
        let right = samples
            .par_iter()
            .map(|(img, label)| Ok((self.predict(img)? == *label) as usize))
            .collect::<Result<Vec<_>>>()?;
        Ok(right.iter().sum::<usize>() as f64 / samples.len() as f64)
    }
}

/// Trains with softmax cross-entropy and momentum SGD; batches follow a
/// seeded per-epoch shuffle.
pub fn train_classifier(
    samples: &[(Arc<Image>, usize)],
    classes: usize,
    config: &TrainConfig,
) -> Result<AttributeClassifier> {
    config.validate()?;
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("classifier training needs samples"))?;
    if let Some((_, bad)) = samples.iter().find(|(_, l)| *l >= classes) {
        return Err(Error::invalid(format!("label {bad} outside {classes} classes")));
    }
    let norm = compute_norm_stats(samples.iter().map(|(i, _)| i.as_ref()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let network = Network::init(build_classifier(first.0.height(), classes)?, &mut rng)?;
    let mut model = AttributeClassifier { network, norm };
    let mut velocity: Vec<LayerParams<f32>> = model.network.params().iter().map(LayerParams::zeros_like).collect();
    let inputs = samples
        .iter()
        .map(|(img, l)| Ok((model.input(img)?, *l)))
        .collect::<Result<Vec<_>>>()?;
    let b = config.batch_size;
    let mut order: Vec<usize> = Vec::new();
    let mut epoch = 0u64;
    for it in 0..config.max_iterations {
        let mut batch = Vec::with_capacity(b);
        while batch.len() < b {
            if order.is_empty() {
                let mut r = ChaCha8Rng::seed_from_u64(config.seed);
                r.set_stream(epoch + 1);
                order = (0..inputs.len()).collect();
                order.shuffle(&mut r);
                order.reverse();
                epoch += 1;
            }
            batch.push(order.pop().expect("refilled"));
        }
        let net = &model.network;
        let partials = batch
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut acc: Option<(f64, Vec<LayerParams<f32>>)> = None;
                for &i in chunk {
                    let (x, label) = &inputs[i];
                    let (out, tape) = net.forward_train(x, None)?;
                    let (loss, g) = softmax_cross_entropy(&out, *label)?;
                    let grads = net.backward(&tape, &g)?.params;
                    acc = Some(match acc {
                        None => (loss as f64, grads),
                        Some((l, mut a)) => {
                            for (p, q) in a.iter_mut().zip(&grads) {
                                p.add_assign(q)?;
                            }
                            (l + loss as f64, a)
                        }
                    });
                }
                Ok(acc.expect("non-empty chunk"))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut parts = partials.into_iter();
        let (mut loss, mut grads) = parts.next().expect("non-empty batch");
        for (l, g) in parts {
            loss += l;
            for (p, q) in grads.iter_mut().zip(&g) {
                p.add_assign(q)?;
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        for g in &mut grads {
            g.scale(1.0 / b as f32);
        }
        sgd_momentum_update(
            model.network.params_mut(),
            &mut velocity,
            &grads,
            config.learning_rate as f32,
            config.momentum as f32,
        )?;
    }
    Ok(model)
}
