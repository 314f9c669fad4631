//! 3x3 convolution, stride 1, zero padding 1.
//!
//! The forward pass builds an `(H*W) x (9*Cin)` patch matrix and multiplies
//! it by the `(9*Cin) x Cout` weight matrix. Backward reuses the same patch
//! matrix for the weight gradient and scatters the patch gradient back onto
//! the input.

use super::{LayerParams, ParamKind, KERNEL};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check(input: &Tensor<impl Scalar>, params: &LayerParams<impl Scalar>) -> Result<(usize, usize, usize, usize)> {
    if params.kind != ParamKind::Conv3x3 {
        return Err(Error::invalid("conv2d requires conv3x3 parameters"));
    }
    let (h, w, c) = input.hwc()?;
    let wshape = params.weights.shape();
    if wshape[2] != c {
        return Err(Error::ShapeMismatch {
            op: "conv2d input channels vs kernel",
            expected: wshape.to_vec(),
            found: input.shape().to_vec(),
        });
    }
    Ok((h, w, c, wshape[3]))
}

fn im2col<T: Scalar>(input: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    let row = KERNEL * KERNEL * c;
    let mut cols = vec![T::zero(); h * w * row];
    for y in 0..h {
        for x in 0..w {
            let dst = &mut cols[(y * w + x) * row..][..row];
            for dy in 0..KERNEL {
                let sy = y + dy;
                if sy < 1 || sy > h {
                    continue;
                }
                for dx in 0..KERNEL {
                    let sx = x + dx;
                    if sx < 1 || sx > w {
                        continue;
                    }
                    let src = ((sy - 1) * w + (sx - 1)) * c;
                    let off = (dy * KERNEL + dx) * c;
                    dst[off..off + c].copy_from_slice(&input[src..src + c]);
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    let row = KERNEL * KERNEL * c;
    let mut out = vec![T::zero(); h * w * c];
    for y in 0..h {
        for x in 0..w {
            let src = &cols[(y * w + x) * row..][..row];
            for dy in 0..KERNEL {
                let sy = y + dy;
                if sy < 1 || sy > h {
                    continue;
                }
                for dx in 0..KERNEL {
                    let sx = x + dx;
                    if sx < 1 || sx > w {
                        continue;
                    }
                    let dst = ((sy - 1) * w + (sx - 1)) * c;
                    let off = (dy * KERNEL + dx) * c;
                    for (o, &g) in out[dst..dst + c].iter_mut().zip(&src[off..off + c]) {
                        *o = *o + g;
                    }
                }
            }
        }
    }
    out
}

/// `out[y,x,o] = bias[o] + sum_{dy,dx,i} w[dy,dx,i,o] * in_padded[y+dy,x+dx,i]`.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
    let (h, w, c, cout) = check(input, params)?;
    let k = KERNEL * KERNEL * c;
    let cols = im2col(input.data(), h, w, c);
    let mut out = Vec::with_capacity(h * w * cout);
    for _ in 0..h * w {
        out.extend_from_slice(&params.bias);
    }
    T::gemm(
        h * w,
        k,
        cout,
        T::one(),
        &cols,
        (k as isize, 1),
        params.weights.data(),
        (cout as isize, 1),
        T::one(),
        &mut out,
        (cout as isize, 1),
    );
    Tensor::new(&[h, w, cout], out)
}

/// Returns `(d input, d params)` for upstream gradient `upstream` of shape
/// `H x W x Cout`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, LayerParams<T>)> {
    let (h, w, c, cout) = check(input, params)?;
    if upstream.shape() != [h, w, cout] {
        return Err(Error::ShapeMismatch {
            op: "conv2d backward",
            expected: vec![h, w, cout],
            found: upstream.shape().to_vec(),
        });
    }
    let k = KERNEL * KERNEL * c;
    let cols = im2col(input.data(), h, w, c);
    let g = upstream.data();

    let mut dw = vec![T::zero(); k * cout];
    T::gemm(
        k,
        h * w,
        cout,
        T::one(),
        &cols,
        (1, k as isize),
        g,
        (cout as isize, 1),
        T::zero(),
        &mut dw,
        (cout as isize, 1),
    );

    let mut db = vec![T::zero(); cout];
    for row in g.chunks_exact(cout) {
        for (b, &v) in db.iter_mut().zip(row) {
            *b = *b + v;
        }
    }

    let mut dcols = vec![T::zero(); h * w * k];
    T::gemm(
        h * w,
        cout,
        k,
        T::one(),
        g,
        (cout as isize, 1),
        params.weights.data(),
        (1, cout as isize),
        T::zero(),
        &mut dcols,
        (k as isize, 1),
    );
    let dx = col2im(&dcols, h, w, c);

    Ok((
        Tensor::new(&[h, w, c], dx)?,
        LayerParams {
            kind: ParamKind::Conv3x3,
            weights: Tensor::new(params.weights.shape(), dw)?,
            bias: db,
        },
    ))
}
