use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `upstream` through where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(shape: &[usize], active: &[bool], upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if upstream.shape() != shape {
        return Err(Error::ShapeMismatch {
            op: "relu backward",
            expected: shape.to_vec(),
            found: upstream.shape().to_vec(),
        });
    }
    let data = upstream
        .data()
        .iter()
        .zip(active)
        .map(|(&g, &on)| if on { g } else { T::zero() })
        .collect();
    Tensor::new(shape, data)
}
