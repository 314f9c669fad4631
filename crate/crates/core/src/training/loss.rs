use crate::error::{Error, Result};
use crate::image::{Image, Space};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Mse,
    Mae,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mse" => Some(LossKind::Mse),
            "mae" => Some(LossKind::Mae),
            _ => None,
        }
    }

    pub fn eval<T: Scalar>(self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
        match self {
            LossKind::Mse => mse(pred, target),
            LossKind::Mae => mae(pred, target),
        }
    }
}

fn check<T: Scalar>(op: &'static str, pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op,
            expected: pred.shape().to_vec(),
            found: target.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean squared error and its gradient `2 (pred - target) / N`.
pub fn mse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    check("mse", pred, target)?;
    let n = T::from_usize(pred.len()).expect("element count");
    let two = T::lit(2.0);
    let mut loss = T::zero();
    let grad: Vec<T> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            loss = loss + d * d;
            two * d / n
        })
        .collect();
    Ok((loss / n, Tensor::new(pred.shape(), grad)?))
}

/// Mean absolute error and its subgradient `sign(pred - target) / N`, with
/// `sign(0) = 0`.
pub fn mae<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    check("mae", pred, target)?;
    let n = T::from_usize(pred.len()).expect("element count");
    let mut loss = T::zero();
    let grad: Vec<T> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            loss = loss + d.abs();
            let s = if d > T::zero() {
                T::one()
            } else if d < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            s / n
        })
        .collect();
    Ok((loss / n, Tensor::new(pred.shape(), grad)?))
}

fn image_pair(pred: &Image, target: &Image) -> Result<(Tensor<f64>, Tensor<f64>)> {
    pred.check_compatible(target)?;
    Ok((pred.to_tensor(), target.to_tensor()))
}

fn grad_image(space: Space, g: &Tensor<f64>) -> Result<Image> {
    let data = g.data().to_vec();
    let (h, w, _) = g.hwc()?;
    match space {
        // Gradients are not pixels; they always live in normalized units.
        Space::Raw | Space::Normalized => Image::normalized(h, w, data),
    }
}

/// [`mse`] on images of one space.
pub fn mse_loss(pred: &Image, target: &Image) -> Result<(f64, Image)> {
    let (p, t) = image_pair(pred, target)?;
    let (l, g) = mse(&p, &t)?;
    Ok((l, grad_image(pred.space(), &g)?))
}

/// [`mae`] on images of one space.
pub fn mae_loss(pred: &Image, target: &Image) -> Result<(f64, Image)> {
    let (p, t) = image_pair(pred, target)?;
    let (l, g) = mae(&p, &t)?;
    Ok((l, grad_image(pred.space(), &g)?))
}

/// Softmax cross-entropy of `logits` against class `label`, with gradient.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, label: usize) -> Result<(T, Tensor<T>)> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} outside {} classes",
            logits.len()
        )));
    }
    let max = logits.data().iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.data().iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    let loss = total.ln() - (logits.data()[label] - max);
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, &e)| e / total - if i == label { T::one() } else { T::zero() })
        .collect();
    Ok((loss, Tensor::new(logits.shape(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: Vec<f64>) -> Tensor<f64> {
        Tensor::vector(v).unwrap()
    }

    #[test]
    fn mse_identity_and_offset() {
        let (l, g) = mse(&t(vec![1.0, 2.0]), &t(vec![1.0, 2.0])).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
        let (l, _) = mse(&t(vec![2.0, 3.0, 4.0]), &t(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(l, 1.0);
        assert!(mse(&t(vec![1.0]), &t(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn mse_sum_form_gradient() {
        // for the summed form L = ||p - y||^2 the gradient is 2 (p - y);
        // the mean form scales that by 1/N.
        let (_, g) = mse(&t(vec![3.0, -1.0]), &t(vec![1.0, 1.0])).unwrap();
        assert_eq!(g.data(), &[2.0, -2.0]);
    }

    #[test]
    fn mse_gradient_matches_finite_difference() {
        let p: Vec<f64> = (0..64).map(|i| (i as f64 * 0.71).sin()).collect();
        let y: Vec<f64> = (0..64).map(|i| (i as f64 * 0.23).cos()).collect();
        let (_, g) = mse(&t(p.clone()), &t(y.clone())).unwrap();
        let eps = 1e-3;
        for &i in &[0usize, 7, 19, 42, 63] {
            let mut hi = p.clone();
            hi[i] += eps;
            let mut lo = p.clone();
            lo[i] -= eps;
            let fd = (mse(&t(hi), &t(y.clone())).unwrap().0 - mse(&t(lo), &t(y.clone())).unwrap().0) / (2.0 * eps);
            assert!((fd - g.data()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn mae_constant_case_and_ties() {
        let (l, g) = mae(&t(vec![0.0; 4]), &t(vec![2.0; 4])).unwrap();
        assert_eq!(l, 2.0);
        assert!(g.data().iter().all(|&v| v == -0.25));
        let (l, g) = mae(&t(vec![1.0, 5.0]), &t(vec![1.0, 3.0])).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(g.data(), &[0.0, 0.5]);
        let (l, _) = mae(&t(vec![1.5, 2.5]), &t(vec![1.5, 2.5])).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn image_losses_reject_mixed_spaces() {
        let a = Image::filled(2, 2, 3);
        let b = Image::normalized(2, 2, vec![0.0; 4]).unwrap();
        assert!(mse_loss(&a, &b).is_err());
        assert!(mae_loss(&a, &a).unwrap().0 == 0.0);
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero() {
        let (l, g) = softmax_cross_entropy(&t(vec![1.0, 2.0, 0.5]), 1).unwrap();
        assert!(l > 0.0);
        assert!(g.sum().abs() < 1e-12);
        assert!(g.data()[1] < 0.0);
    }
}
