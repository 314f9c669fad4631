use crate::error::{Error, Result};
use crate::image::{Image, NormStats, Space};
use crate::nn::LayerParams;
use crate::scalar::Scalar;

/// Heavy-ball momentum: `v <- mu * v - lr * g; w <- w + v`.
pub fn sgd_momentum_step<T: Scalar>(
    params: &mut [T],
    velocity: &mut [T],
    grads: &[T],
    lr: T,
    mu: T,
) -> Result<()> {
    if params.len() != velocity.len() || params.len() != grads.len() {
        return Err(Error::ShapeMismatch {
            op: "sgd_momentum_step",
            expected: vec![params.len(), params.len()],
            found: vec![velocity.len(), grads.len()],
        });
    }
    for ((w, v), &g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        *v = mu * *v - lr * g;
        *w = *w + *v;
    }
    Ok(())
}

/// Applies [`sgd_momentum_step`] to every weight tensor and bias of a
/// network.
pub fn sgd_momentum_update<T: Scalar>(
    params: &mut [LayerParams<T>],
    velocity: &mut [LayerParams<T>],
    grads: &[LayerParams<T>],
    lr: T,
    mu: T,
) -> Result<()> {
    if params.len() != velocity.len() || params.len() != grads.len() {
        return Err(Error::invalid("parameter, velocity and gradient sets differ in length"));
    }
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        if p.weights.shape() != v.weights.shape() || p.weights.shape() != g.weights.shape() {
            return Err(Error::ShapeMismatch {
                op: "sgd_momentum_update",
                expected: p.weights.shape().to_vec(),
                found: g.weights.shape().to_vec(),
            });
        }
        sgd_momentum_step(p.weights.data_mut(), v.weights.data_mut(), g.weights.data(), lr, mu)?;
        sgd_momentum_step(&mut p.bias, &mut v.bias, &g.bias, lr, mu)?;
    }
    Ok(())
}

/// Global mean and population standard deviation over every pixel of a
/// collection of raw images.
pub fn compute_norm_stats<'a>(images: impl IntoIterator<Item = &'a Image>) -> Result<NormStats> {
    let (mut n, mut sum, mut sq) = (0u64, 0.0f64, 0.0f64);
    for img in images {
        if img.space() != Space::Raw {
            return Err(Error::Space("normalization stats need raw images".into()));
        }
        for &p in img.pixels() {
            let p = p as f64;
            n += 1;
            sum += p;
            sq += p * p;
        }
    }
    if n == 0 {
        return Err(Error::invalid("cannot compute normalization stats of no images"));
    }
    let mean = sum / n as f64;
    let var = (sq / n as f64 - mean * mean).max(0.0);
    NormStats::new(mean, var.sqrt())
}
