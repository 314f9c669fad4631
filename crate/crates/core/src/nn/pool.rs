//! 2x2 max pooling with recorded switches, and parameter-free unpooling.
//!
//! Unpooling does not consult switches: each value lands in the top-left
//! cell of its 2x2 block and the other three cells are zero.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Argmax locations of a max-pool forward pass.
///
/// One entry per output cell, encoded as `dy * 2 + dx` with `dy, dx` in
/// `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolSwitches {
    input_shape: [usize; 3],
    offsets: Vec<u8>,
}

impl PoolSwitches {
    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    /// `(row, col)` offset inside the window of output cell `index`.
    pub fn offset(&self, index: usize) -> (usize, usize) {
        let o = self.offsets[index] as usize;
        (o / 2, o % 2)
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

pub fn maxpool2x2_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolSwitches)> {
    let (h, w, c) = input.hwc()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!(
            "maxpool2x2 needs even spatial extents, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut offsets = Vec::with_capacity(oh * ow * c);
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                // Row-major window scan; strict comparison keeps the first
                // maximum on ties.
                let mut best = src[((2 * y) * w + 2 * x) * c + ch];
                let mut arg = 0u8;
                for (k, (dy, dx)) in [(0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                    let v = src[((2 * y + dy) * w + 2 * x + dx) * c + ch];
                    if v > best {
                        best = v;
                        arg = k as u8 + 1;
                    }
                }
                out.push(best);
                offsets.push(arg);
            }
        }
    }
    Ok((
        Tensor::new(&[oh, ow, c], out)?,
        PoolSwitches {
            input_shape: [h, w, c],
            offsets,
        },
    ))
}

/// Routes each upstream element to the input cell recorded in `switches`.
pub fn maxpool2x2_backward<T: Scalar>(switches: &PoolSwitches, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    let [h, w, c] = switches.input_shape;
    let expected = [h / 2, w / 2, c];
    if upstream.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "maxpool2x2 backward",
            expected: expected.to_vec(),
            found: upstream.shape().to_vec(),
        });
    }
    let mut grad = vec![T::zero(); h * w * c];
    let ow = w / 2;
    for (i, &g) in upstream.data().iter().enumerate() {
        let ch = i % c;
        let cell = i / c;
        let (y, x) = (cell / ow, cell % ow);
        let (dy, dx) = switches.offset(i);
        grad[((2 * y + dy) * w + 2 * x + dx) * c + ch] = g;
    }
    Tensor::new(&[h, w, c], grad)
}

pub fn unpool2x2_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = input.hwc()?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); oh * ow * c];
    let src = input.data();
    for y in 0..h {
        for x in 0..w {
            let s = (y * w + x) * c;
            let d = ((2 * y) * ow + 2 * x) * c;
            out[d..d + c].copy_from_slice(&src[s..s + c]);
        }
    }
    Tensor::new(&[oh, ow, c], out)
}

/// Extracts the top-left cell of every 2x2 block.
pub fn unpool2x2_backward<T: Scalar>(upstream: &Tensor<T>) -> Result<Tensor<T>> {
    let (oh, ow, c) = upstream.hwc()?;
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(Error::invalid(format!(
            "unpool2x2 backward needs even extents, got {oh}x{ow}"
        )));
    }
    let (h, w) = (oh / 2, ow / 2);
    let src = upstream.data();
    let mut grad = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let s = ((2 * y) * ow + 2 * x) * c;
            grad.extend_from_slice(&src[s..s + c]);
        }
    }
    Tensor::new(&[h, w, c], grad)
}
