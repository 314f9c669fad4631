use super::{LayerParams, ParamKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<(usize, usize)> {
    if params.kind != ParamKind::FullyConnected {
        return Err(Error::invalid("fc requires fully-connected parameters"));
    }
    let (m, n) = (params.weights.shape()[0], params.weights.shape()[1]);
    if input.len() != n {
        return Err(Error::ShapeMismatch {
            op: "fc input vs weights",
            expected: vec![m, n],
            found: input.shape().to_vec(),
        });
    }
    Ok((m, n))
}

/// `out = W * in + b`. Any input shape is flattened to a vector first.
pub fn fc_forward<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
    let (m, n) = check(input, params)?;
    let mut out = params.bias.clone();
    T::gemm(
        m,
        n,
        1,
        T::one(),
        params.weights.data(),
        (n as isize, 1),
        input.data(),
        (1, 1),
        T::one(),
        &mut out,
        (1, 1),
    );
    Tensor::vector(out)
}

pub fn fc_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, LayerParams<T>)> {
    let (m, n) = check(input, params)?;
    if upstream.len() != m {
        return Err(Error::ShapeMismatch {
            op: "fc backward",
            expected: vec![m],
            found: upstream.shape().to_vec(),
        });
    }
    let g = upstream.data();
    let x = input.data();
    let mut dw = vec![T::zero(); m * n];
    T::gemm(m, 1, n, T::one(), g, (1, 1), x, (1, 1), T::zero(), &mut dw, (n as isize, 1));
    let mut dx = vec![T::zero(); n];
    T::gemm(
        n,
        m,
        1,
        T::one(),
        params.weights.data(),
        (1, n as isize),
        g,
        (1, 1),
        T::zero(),
        &mut dx,
        (1, 1),
    );
    Ok((
        Tensor::new(input.shape(), dx)?,
        LayerParams {
            kind: ParamKind::FullyConnected,
            weights: Tensor::new(&[m, n], dw)?,
            bias: g.to_vec(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(w: Vec<f64>, m: usize, n: usize, b: Vec<f64>) -> LayerParams<f64> {
        LayerParams::new(ParamKind::FullyConnected, Tensor::new(&[m, n], w).unwrap(), b).unwrap()
    }

    #[test]
    fn identity_weights() {
        let p = params(vec![1.0, 0.0, 0.0, 1.0], 2, 2, vec![0.0, 0.0]);
        let x = Tensor::vector(vec![3.0, -4.0]).unwrap();
        assert_eq!(fc_forward(&x, &p).unwrap().data(), x.data());
    }

    #[test]
    fn zero_input_gives_bias() {
        let p = params(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3, 2, vec![0.5, 1.5, -2.0]);
        let x = Tensor::vector(vec![0.0, 0.0]).unwrap();
        assert_eq!(fc_forward(&x, &p).unwrap().data(), &[0.5, 1.5, -2.0]);
    }

    #[test]
    fn hand_product() {
        let p = params(vec![1.0, 2.0, 3.0, 4.0], 2, 2, vec![0.0, 1.0]);
        let x = Tensor::vector(vec![1.0, 1.0]).unwrap();
        assert_eq!(fc_forward(&x, &p).unwrap().data(), &[3.0, 8.0]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p = params(vec![1.0, 2.0, 3.0, 4.0], 2, 2, vec![0.0, 1.0]);
        let x = Tensor::vector(vec![1.0, 1.0, 1.0]).unwrap();
        assert!(fc_forward(&x, &p).is_err());
    }

    #[test]
    fn backward_outer_product() {
        let p = params(vec![1.0, 2.0, 3.0, 4.0], 2, 2, vec![0.0, 0.0]);
        let x = Tensor::vector(vec![1.0, -1.0]).unwrap();
        let g = Tensor::vector(vec![2.0, 3.0]).unwrap();
        let (dx, dp) = fc_backward(&x, &p, &g).unwrap();
        assert_eq!(dp.weights.data(), &[2.0, -2.0, 3.0, -3.0]);
        assert_eq!(dp.bias, vec![2.0, 3.0]);
        assert_eq!(dx.data(), &[11.0, 16.0]);
    }
}
