//! Layer kernels, forward and backward.
//!
//! Every kernel is a pure function of its inputs. Training-time state that
//! a backward pass needs (the forward input of a conv or fc layer, the ReLU
//! mask, max-pool switches) is returned to the caller as a [`LayerCache`]
//! and handed back explicitly; nothing is stored inside the layer.

mod activation;
mod concat;
mod conv;
mod fc;
mod init;
mod pool;

pub use activation::{relu_backward, relu_forward};
pub use concat::{concat_channels, split_channels};
pub use conv::{conv2d_backward, conv2d_forward};
pub use fc::{fc_backward, fc_forward};
pub use init::{he_init, he_init_with, he_std};
pub use pool::{maxpool2x2_backward, maxpool2x2_forward, unpool2x2_backward, unpool2x2_forward, PoolSwitches};

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Spatial extent of every convolution kernel.
pub const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Conv3x3,
    FullyConnected,
}

/// Learnable weights and bias of one conv or fc layer.
///
/// Conv weights are `[3, 3, in, out]`, fc weights are `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T = f32> {
    pub kind: ParamKind,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn new(kind: ParamKind, weights: Tensor<T>, bias: Vec<T>) -> Result<Self> {
        let p = LayerParams {
            kind,
            weights,
            bias,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn conv3x3(in_channels: usize, out_channels: usize) -> Result<Self> {
        Self::new(
            ParamKind::Conv3x3,
            Tensor::zeros(&[KERNEL, KERNEL, in_channels, out_channels])?,
            vec![T::zero(); out_channels],
        )
    }

    pub fn fully_connected(inputs: usize, outputs: usize) -> Result<Self> {
        Self::new(
            ParamKind::FullyConnected,
            Tensor::zeros(&[outputs, inputs])?,
            vec![T::zero(); outputs],
        )
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.weights.shape();
        let outputs = match (self.kind, shape) {
            (ParamKind::Conv3x3, [KERNEL, KERNEL, _, o]) => *o,
            (ParamKind::FullyConnected, [o, _]) => *o,
            (kind, shape) => {
                return Err(Error::invalid(format!(
                    "{kind:?} weights have invalid shape {shape:?}"
                )))
            }
        };
        if self.bias.len() != outputs {
            return Err(Error::ShapeMismatch {
                op: "layer bias",
                expected: vec![outputs],
                found: vec![self.bias.len()],
            });
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        match self.kind {
            ParamKind::Conv3x3 => self.weights.shape()[2],
            ParamKind::FullyConnected => self.weights.shape()[1],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.bias.len()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn zeros_like(&self) -> Self {
        LayerParams {
            kind: self.kind,
            weights: Tensor::zeros(self.weights.shape()).expect("valid shape"),
            bias: vec![T::zero(); self.bias.len()],
        }
    }

    pub fn cast<U: Scalar>(&self) -> LayerParams<U> {
        LayerParams {
            kind: self.kind,
            weights: self.weights.cast(),
            bias: self
                .bias
                .iter()
                .map(|b| U::from_f64(b.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan()))
                .collect(),
        }
    }

    /// Element-wise accumulation of a congruent parameter set.
    pub fn add_assign(&mut self, other: &LayerParams<T>) -> Result<()> {
        self.weights.add_assign(&other.weights)?;
        if self.bias.len() != other.bias.len() {
            return Err(Error::ShapeMismatch {
                op: "layer bias",
                expected: vec![self.bias.len()],
                found: vec![other.bias.len()],
            });
        }
        for (a, &b) in self.bias.iter_mut().zip(&other.bias) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        self.weights.scale(factor);
        for b in &mut self.bias {
            *b = *b * factor;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.weights.all_finite() && self.bias.iter().all(|b| b.is_finite())
    }
}

/// One step of a network description.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layer {
    Conv3x3 {
        in_channels: usize,
        out_channels: usize,
    },
    Relu,
    MaxPool2x2,
    Unpool2x2,
    FullyConnected {
        inputs: usize,
        outputs: usize,
    },
    Reshape {
        height: usize,
        width: usize,
        channels: usize,
    },
}

/// State captured by a training-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerCache<T = f32> {
    Input(Tensor<T>),
    ReluMask { shape: Vec<usize>, active: Vec<bool> },
    Switches(PoolSwitches),
    InputShape(Vec<usize>),
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv3x3 { .. } => "conv3x3",
            Layer::Relu => "relu",
            Layer::MaxPool2x2 => "maxpool2x2",
            Layer::Unpool2x2 => "unpool2x2",
            Layer::FullyConnected { .. } => "fc",
            Layer::Reshape { .. } => "reshape",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Conv3x3 { .. } | Layer::FullyConnected { .. })
    }

    /// Zero-initialized parameters for this layer, if it has any.
    pub fn zero_params<T: Scalar>(&self) -> Option<LayerParams<T>> {
        match *self {
            Layer::Conv3x3 {
                in_channels,
                out_channels,
            } => Some(LayerParams::conv3x3(in_channels, out_channels).expect("positive extents")),
            Layer::FullyConnected { inputs, outputs } => {
                Some(LayerParams::fully_connected(inputs, outputs).expect("positive extents"))
            }
            _ => None,
        }
    }

    /// He-initialized parameters: weights `N(0, 2 / fan_in)`, biases zero.
    pub fn init_params<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Option<LayerParams<T>> {
        let mut params = self.zero_params::<T>()?;
        let fan_in = self.fan_in();
        params.weights = he_init_with(params.weights.shape(), fan_in, rng)
            .expect("valid shape")
            .cast();
        Some(params)
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            Layer::Conv3x3 { in_channels, .. } => KERNEL * KERNEL * in_channels,
            Layer::FullyConnected { inputs, .. } => inputs,
            _ => 0,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Layer::Conv3x3 {
                in_channels,
                out_channels,
            } => (KERNEL * KERNEL * in_channels + 1) * out_channels,
            Layer::FullyConnected { inputs, outputs } => (inputs + 1) * outputs,
            _ => 0,
        }
    }

    /// Symbolic shape propagation: no tensor is allocated.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |expected: Vec<usize>| Error::ShapeMismatch {
            op: self.name(),
            expected,
            found: input.to_vec(),
        };
        match *self {
            Layer::Conv3x3 {
                in_channels,
                out_channels,
            } => match input {
                [h, w, c] if *c == in_channels => Ok(vec![*h, *w, out_channels]),
                _ => Err(mismatch(vec![0, 0, in_channels])),
            },
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2x2 => match input {
                [h, w, c] if h % 2 == 0 && w % 2 == 0 => Ok(vec![h / 2, w / 2, *c]),
                _ => Err(Error::invalid(format!(
                    "maxpool2x2 needs even spatial extents, got {input:?}"
                ))),
            },
            Layer::Unpool2x2 => match input {
                [h, w, c] => Ok(vec![h * 2, w * 2, *c]),
                _ => Err(mismatch(vec![0, 0, 0])),
            },
            Layer::FullyConnected { inputs, outputs } => {
                if input.iter().product::<usize>() == inputs {
                    Ok(vec![outputs])
                } else {
                    Err(mismatch(vec![inputs]))
                }
            }
            Layer::Reshape {
                height,
                width,
                channels,
            } => {
                if input.iter().product::<usize>() == height * width * channels {
                    Ok(vec![height, width, channels])
                } else {
                    Err(mismatch(vec![height * width * channels]))
                }
            }
        }
    }

    fn params_for<'p, T: Scalar>(
        &self,
        params: Option<&'p LayerParams<T>>,
    ) -> Result<&'p LayerParams<T>> {
        let params = params.ok_or_else(|| {
            Error::invalid(format!("{} layer requires parameters", self.name()))
        })?;
        let expected = self.zero_params::<T>().expect("parametric layer");
        if params.kind != expected.kind || params.weights.shape() != expected.weights.shape() {
            return Err(Error::ShapeMismatch {
                op: self.name(),
                expected: expected.weights.shape().to_vec(),
                found: params.weights.shape().to_vec(),
            });
        }
        Ok(params)
    }

    /// Forward pass; when `train` is set the returned cache feeds
    /// [`Layer::backward`].
    pub fn forward<T: Scalar>(
        &self,
        params: Option<&LayerParams<T>>,
        input: &Tensor<T>,
        train: bool,
    ) -> Result<(Tensor<T>, Option<LayerCache<T>>)> {
        let keep = |c: LayerCache<T>| if train { Some(c) } else { None };
        match *self {
            Layer::Conv3x3 { .. } => {
                let out = conv2d_forward(input, self.params_for(params)?)?;
                Ok((out, keep(LayerCache::Input(input.clone()))))
            }
            Layer::FullyConnected { .. } => {
                let out = fc_forward(input, self.params_for(params)?)?;
                Ok((out, keep(LayerCache::Input(input.clone()))))
            }
            Layer::Relu => {
                let out = relu_forward(input);
                let cache = train.then(|| LayerCache::ReluMask {
                    shape: input.shape().to_vec(),
                    active: input.data().iter().map(|&v| v > T::zero()).collect(),
                });
                Ok((out, cache))
            }
            Layer::MaxPool2x2 => {
                let (out, switches) = maxpool2x2_forward(input)?;
                Ok((out, keep(LayerCache::Switches(switches))))
            }
            Layer::Unpool2x2 => {
                let out = unpool2x2_forward(input)?;
                Ok((out, keep(LayerCache::InputShape(input.shape().to_vec()))))
            }
            Layer::Reshape {
                height,
                width,
                channels,
            } => {
                let out = input.clone().reshape(&[height, width, channels])?;
                Ok((out, keep(LayerCache::InputShape(input.shape().to_vec()))))
            }
        }
    }

    /// Backward pass: gradient with respect to the layer input, plus
    /// parameter gradients for conv and fc layers.
    pub fn backward<T: Scalar>(
        &self,
        params: Option<&LayerParams<T>>,
        cache: Option<&LayerCache<T>>,
        upstream: &Tensor<T>,
    ) -> Result<(Tensor<T>, Option<LayerParams<T>>)> {
        let cache = cache.ok_or(Error::MissingCache(self.name()))?;
        match (*self, cache) {
            (Layer::Conv3x3 { .. }, LayerCache::Input(input)) => {
                let (gi, gp) = conv2d_backward(input, self.params_for(params)?, upstream)?;
                Ok((gi, Some(gp)))
            }
            (Layer::FullyConnected { .. }, LayerCache::Input(input)) => {
                let (gi, gp) = fc_backward(input, self.params_for(params)?, upstream)?;
                Ok((gi, Some(gp)))
            }
            (Layer::Relu, LayerCache::ReluMask { shape, active }) => {
                Ok((relu_backward(shape, active, upstream)?, None))
            }
            (Layer::MaxPool2x2, LayerCache::Switches(switches)) => {
                Ok((maxpool2x2_backward(switches, upstream)?, None))
            }
            (Layer::Unpool2x2, LayerCache::InputShape(_)) => {
                Ok((unpool2x2_backward(upstream)?, None))
            }
            (Layer::Reshape { .. }, LayerCache::InputShape(shape)) => {
                Ok((upstream.clone().reshape(shape)?, None))
            }
            _ => Err(Error::MissingCache(self.name())),
        }
    }
}
