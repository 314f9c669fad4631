use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stacks `a` and `b` along the channel axis, channels of `a` first.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ha, wa, ca) = a.hwc()?;
    let (hb, wb, cb) = b.hwc()?;
    if (ha, wa) != (hb, wb) {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            expected: a.shape().to_vec(),
            found: b.shape().to_vec(),
        });
    }
    let mut out = Vec::with_capacity(a.len() + b.len());
    for (pa, pb) in a.data().chunks_exact(ca).zip(b.data().chunks_exact(cb)) {
        out.extend_from_slice(pa);
        out.extend_from_slice(pb);
    }
    Tensor::new(&[ha, wa, ca + cb], out)
}

/// Inverse of [`concat_channels`]: the first `first` channels and the rest.
pub fn split_channels<T: Scalar>(t: &Tensor<T>, first: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (h, w, c) = t.hwc()?;
    if first == 0 || first >= c {
        return Err(Error::invalid(format!(
            "cannot split {c} channels at {first}"
        )));
    }
    let mut a = Vec::with_capacity(h * w * first);
    let mut b = Vec::with_capacity(h * w * (c - first));
    for px in t.data().chunks_exact(c) {
        a.extend_from_slice(&px[..first]);
        b.extend_from_slice(&px[first..]);
    }
    Ok((Tensor::new(&[h, w, first], a)?, Tensor::new(&[h, w, c - first], b)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_shapes() {
        let a = Tensor::<f32>::zeros(&[16, 16, 64]).unwrap();
        let b = Tensor::<f32>::zeros(&[16, 16, 7]).unwrap();
        assert_eq!(concat_channels(&a, &b).unwrap().shape(), &[16, 16, 71]);
        let x = Tensor::<f32>::zeros(&[32, 32, 1]).unwrap();
        assert_eq!(concat_channels(&x, &x).unwrap().shape(), &[32, 32, 2]);
    }

    #[test]
    fn single_pixel_order() {
        let a = Tensor::<f32>::new(&[1, 1, 1], vec![3.0]).unwrap();
        let b = Tensor::<f32>::new(&[1, 1, 1], vec![4.0]).unwrap();
        assert_eq!(concat_channels(&a, &b).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn spatial_mismatch_rejected() {
        let a = Tensor::<f32>::zeros(&[4, 4, 1]).unwrap();
        let b = Tensor::<f32>::zeros(&[4, 2, 1]).unwrap();
        assert!(concat_channels(&a, &b).is_err());
    }
}
