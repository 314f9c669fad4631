use rand::Rng;

use super::spec::{NetworkSpec, Section};
use crate::error::{Error, Result};
use crate::nn::{concat_channels, split_channels, Layer, LayerCache, LayerParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A network description together with its learnable parameters.
///
/// `params` holds one entry per parametric layer, in the order of
/// [`NetworkSpec::parametric_layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    spec: NetworkSpec,
    params: Vec<LayerParams<T>>,
}

/// Everything a training forward pass recorded.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    image: Vec<Option<LayerCache<T>>>,
    attribute: Vec<Option<LayerCache<T>>>,
    trunk: Vec<Option<LayerCache<T>>>,
    split: Option<usize>,
}

impl<T: Scalar> Tape<T> {
    /// ReLU masks and pool switches in layer order. Two forward passes with
    /// equal signatures traverse the same linear region of the network.
    pub fn activation_signature(&self) -> Vec<&LayerCache<T>> {
        self.image
            .iter()
            .chain(&self.attribute)
            .chain(&self.trunk)
            .flatten()
            .filter(|c| matches!(c, LayerCache::ReluMask { .. } | LayerCache::Switches(_)))
            .collect()
    }
}

/// Output of a backward pass through a whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub params: Vec<LayerParams<T>>,
    pub primary: Tensor<T>,
    pub secondary: Option<Tensor<T>>,
}

struct SectionOut<T> {
    output: Tensor<T>,
    caches: Vec<Option<LayerCache<T>>>,
    activations: Vec<Tensor<T>>,
}

impl<T: Scalar> Network<T> {
    pub fn new(spec: NetworkSpec, params: Vec<LayerParams<T>>) -> Result<Self> {
        spec.trace()?;
        let layers: Vec<&Layer> = spec.parametric_layers().map(|(_, l)| l).collect();
        if layers.len() != params.len() {
            return Err(Error::invalid(format!(
                "{} expects {} parameter sets, got {}",
                spec.id,
                layers.len(),
                params.len()
            )));
        }
        for (layer, p) in layers.iter().zip(&params) {
            let expected = layer.zero_params::<T>().expect("parametric");
            p.validate()?;
            if p.kind != expected.kind || p.weights.shape() != expected.weights.shape() {
                return Err(Error::ShapeMismatch {
                    op: "network parameters",
                    expected: expected.weights.shape().to_vec(),
                    found: p.weights.shape().to_vec(),
                });
            }
        }
        Ok(Network { spec, params })
    }

    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        let params = spec
            .parametric_layers()
            .map(|(_, l)| l.zero_params().expect("parametric"))
            .collect();
        Self::new(spec, params)
    }

    /// He-initialized weights and zero biases.
    pub fn init<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        let params = spec
            .parametric_layers()
            .map(|(_, l)| l.init_params(rng).expect("parametric"))
            .collect();
        Self::new(spec, params)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[LayerParams<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            params: self.params.iter().map(LayerParams::cast).collect(),
        }
    }

    fn section_params(&self) -> [&[LayerParams<T>]; 3] {
        let count = |s: Section| self.spec.parametric_layers().filter(|(sec, _)| *sec == s).count();
        let a = count(Section::Image);
        let b = count(Section::Attribute);
        let (img, rest) = self.params.split_at(a);
        let (attr, trunk) = rest.split_at(b);
        [img, attr, trunk]
    }

    fn run_section(
        layers: &[Layer],
        params: &[LayerParams<T>],
        input: Tensor<T>,
        train: bool,
        keep_activations: bool,
    ) -> Result<SectionOut<T>> {
        let mut cur = input;
        let mut caches = Vec::with_capacity(layers.len());
        let mut activations = Vec::new();
        let mut pi = 0;
        for layer in layers {
            let p = if layer.has_params() {
                pi += 1;
                Some(&params[pi - 1])
            } else {
                None
            };
            let (out, cache) = layer.forward(p, &cur, train)?;
            caches.push(cache);
            if keep_activations {
                activations.push(out.clone());
            }
            cur = out;
        }
        Ok(SectionOut {
            output: cur,
            caches,
            activations,
        })
    }

    fn check_inputs(&self, primary: &Tensor<T>, secondary: Option<&Tensor<T>>) -> Result<()> {
        let expected = self.spec.primary_shape();
        if primary.shape() != expected && primary.shape() != [expected[0], expected[1], 1, 1] {
            return Err(Error::ShapeMismatch {
                op: "network primary input",
                expected,
                found: primary.shape().to_vec(),
            });
        }
        match (self.spec.secondary_shape(), secondary) {
            (None, None) => Ok(()),
            (Some(s), Some(t)) if t.shape() == s => Ok(()),
            (Some(s), Some(t)) => Err(Error::ShapeMismatch {
                op: "network secondary input",
                expected: s,
                found: t.shape().to_vec(),
            }),
            (Some(_), None) => Err(Error::invalid(format!("{} needs a secondary input", self.spec.id))),
            (None, Some(_)) => Err(Error::invalid(format!("{} takes a single input", self.spec.id))),
        }
    }

    fn run(
        &self,
        primary: &Tensor<T>,
        secondary: Option<&Tensor<T>>,
        train: bool,
        keep_activations: bool,
    ) -> Result<(Tensor<T>, Tape<T>, Vec<Tensor<T>>)> {
        self.check_inputs(primary, secondary)?;
        let [pi, pa, pt] = self.section_params();
        let primary = primary.clone().reshape(&self.spec.primary_shape())?;
        let img = Self::run_section(&self.spec.image_branch, pi, primary, train, false)?;
        let (trunk_in, attr_caches, split) = match secondary {
            None => (img.output, Vec::new(), None),
            Some(sec) => {
                let attr = Self::run_section(&self.spec.attribute_branch, pa, sec.clone(), train, false)?;
                let split = img.output.hwc()?.2;
                (concat_channels(&img.output, &attr.output)?, attr.caches, Some(split))
            }
        };
        let trunk = Self::run_section(&self.spec.trunk, pt, trunk_in, train, keep_activations)?;
        let tape = Tape {
            image: img.caches,
            attribute: attr_caches,
            trunk: trunk.caches,
            split,
        };
        Ok((trunk.output, tape, trunk.activations))
    }

    /// Inference forward pass.
    pub fn forward(&self, primary: &Tensor<T>, secondary: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        Ok(self.run(primary, secondary, false, false)?.0)
    }

    /// Forward pass that records what [`Network::backward`] needs.
    pub fn forward_train(
        &self,
        primary: &Tensor<T>,
        secondary: Option<&Tensor<T>>,
    ) -> Result<(Tensor<T>, Tape<T>)> {
        let (out, tape, _) = self.run(primary, secondary, true, false)?;
        Ok((out, tape))
    }

    /// Forward pass that also returns the output of trunk layer `layer`.
    pub fn forward_with_feature(
        &self,
        primary: &Tensor<T>,
        secondary: Option<&Tensor<T>>,
        layer: usize,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        if layer >= self.spec.trunk.len() {
            return Err(Error::invalid(format!(
                "trunk layer {layer} out of range (trunk has {})",
                self.spec.trunk.len()
            )));
        }
        let (out, _, mut acts) = self.run(primary, secondary, false, true)?;
        Ok((out, acts.swap_remove(layer)))
    }

    /// Output of the attribute branch alone.
    pub fn encode_secondary(&self, secondary: &Tensor<T>) -> Result<Tensor<T>> {
        match self.spec.secondary_shape() {
            Some(s) if secondary.shape() == s => {}
            Some(s) => {
                return Err(Error::ShapeMismatch {
                    op: "attribute branch input",
                    expected: s,
                    found: secondary.shape().to_vec(),
                })
            }
            None => return Err(Error::invalid(format!("{} has no attribute branch", self.spec.id))),
        }
        let [_, pa, _] = self.section_params();
        Ok(Self::run_section(&self.spec.attribute_branch, pa, secondary.clone(), false, false)?.output)
    }

    fn back_section(
        layers: &[Layer],
        params: &[LayerParams<T>],
        caches: &[Option<LayerCache<T>>],
        upstream: Tensor<T>,
        grads: &mut Vec<LayerParams<T>>,
    ) -> Result<Tensor<T>> {
        let mut g = upstream;
        let mut pi = params.len();
        let mut local = Vec::new();
        for (layer, cache) in layers.iter().zip(caches).rev() {
            let p = if layer.has_params() {
                pi -= 1;
                Some(&params[pi])
            } else {
                None
            };
            let (gi, gp) = layer.backward(p, cache.as_ref(), &g)?;
            if let Some(gp) = gp {
                local.push(gp);
            }
            g = gi;
        }
        local.reverse();
        grads.extend(local);
        Ok(g)
    }

    /// Gradients of a scalar loss with respect to every parameter and both
    /// inputs, given the loss gradient at the network output.
    pub fn backward(&self, tape: &Tape<T>, output_grad: &Tensor<T>) -> Result<Gradients<T>> {
        let [pi, pa, pt] = self.section_params();
        let mut trunk_grads = Vec::new();
        let g = Self::back_section(&self.spec.trunk, pt, &tape.trunk, output_grad.clone(), &mut trunk_grads)?;
        let mut params = Vec::with_capacity(self.params.len());
        let (primary, secondary) = match tape.split {
            None => (Self::back_section(&self.spec.image_branch, pi, &tape.image, g, &mut params)?, None),
            Some(split) => {
                let (gi, ga) = split_channels(&g, split)?;
                let primary = Self::back_section(&self.spec.image_branch, pi, &tape.image, gi, &mut params)?;
                let secondary =
                    Self::back_section(&self.spec.attribute_branch, pa, &tape.attribute, ga, &mut params)?;
                (primary, Some(secondary))
            }
        };
        params.extend(trunk_grads);
        Ok(Gradients {
            params,
            primary,
            secondary,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::spec::{build_stage1_with, build_stage2_at, Stage1Options};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_stage1() -> NetworkSpec {
        build_stage1_with(Stage1Options {
            input_size: 8,
            ..Stage1Options::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let net = Network::<f32>::zeros(small_stage1()).unwrap();
        let x = Tensor::filled(&[8, 8, 1], 0.7).unwrap();
        let a = Tensor::from_fn(&[7], |i| if i == 2 { 1.0 } else { 0.0 }).unwrap();
        let y = net.forward(&x, Some(&a)).unwrap();
        assert_eq!(y.shape(), &[8, 8, 1]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Network::<f32>::init(build_stage2_at(8).unwrap(), &mut rng).unwrap();
        let x = Tensor::from_fn(&[8, 8, 1], |i| (i as f32 * 0.37).sin()).unwrap();
        let y = Tensor::from_fn(&[8, 8, 1], |i| (i as f32 * 0.11).cos()).unwrap();
        let a = net.forward(&x, Some(&y)).unwrap();
        let b = net.forward(&x, Some(&y)).unwrap();
        assert_eq!(a.data(), b.data());
        let (c, _) = net.forward_train(&x, Some(&y)).unwrap();
        assert_eq!(a.data(), c.data());
    }

    #[test]
    fn wrong_inputs_rejected() {
        let net = Network::<f32>::zeros(small_stage1()).unwrap();
        let x = Tensor::zeros(&[8, 8, 1]).unwrap();
        let bad_attr = Tensor::zeros(&[5]).unwrap();
        assert!(net.forward(&x, Some(&bad_attr)).is_err());
        assert!(net.forward(&x, None).is_err());
        let bad_img = Tensor::zeros(&[16, 16, 1]).unwrap();
        let a = Tensor::zeros(&[7]).unwrap();
        assert!(net.forward(&bad_img, Some(&a)).is_err());
    }

    #[test]
    fn gradient_layout_matches_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::<f64>::init(small_stage1(), &mut rng).unwrap();
        let x = Tensor::from_fn(&[8, 8, 1], |i| (i as f64).sin()).unwrap();
        let a = Tensor::from_fn(&[7], |i| if i == 0 { 1.0 } else { 0.0 }).unwrap();
        let (y, tape) = net.forward_train(&x, Some(&a)).unwrap();
        let g = net.backward(&tape, &y).unwrap();
        assert_eq!(g.params.len(), net.params().len());
        for (gp, p) in g.params.iter().zip(net.params()) {
            assert_eq!(gp.weights.shape(), p.weights.shape());
        }
        assert_eq!(g.primary.shape(), &[8, 8, 1]);
        assert_eq!(g.secondary.unwrap().shape(), &[7]);
    }
}
