//! The generation network, the refinement network, and checkpoints.

mod checkpoint;
mod network;
mod spec;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use network::{Gradients, Network, Tape};
pub use spec::{
    build_classifier, build_stage1, build_stage1_with, build_stage2, build_stage2_at, NetworkId, NetworkSpec,
    SecondaryInput, Section, ShapeTrace, Stage1Options, ATTRIBUTE_EMBEDDING, DEFAULT_ATTRIBUTE_MAPS,
};

use crate::error::{Error, Result};
use crate::image::{AttributeVector, Image, Space};
use crate::tensor::Tensor;

fn expect_id(net: &Network<f32>, id: NetworkId) -> Result<()> {
    if net.spec().id != id {
        return Err(Error::invalid(format!("expected a {id} network, got {}", net.spec().id)));
    }
    Ok(())
}

fn check_vocab(net: &Network<f32>, attr: &AttributeVector) -> Result<()> {
    match net.spec().attribute_count() {
        Some(n) if n == attr.size() => Ok(()),
        n => Err(Error::invalid(format!(
            "attribute vocabulary of size {} does not match network ({n:?})",
            attr.size()
        ))),
    }
}

fn image_input(net: &Network<f32>, x: &Image) -> Result<Tensor<f32>> {
    if x.space() != Space::Normalized {
        return Err(Error::Space("network inputs must be normalized images".into()));
    }
    let spec = net.spec();
    if (x.height(), x.width()) != (spec.input_height, spec.input_width) {
        return Err(Error::ShapeMismatch {
            op: "network image input",
            expected: vec![spec.input_height, spec.input_width],
            found: vec![x.height(), x.width()],
        });
    }
    Ok(x.to_tensor())
}

/// The attribute branch of a generation network on its own. No image is
/// involved.
pub fn encode_attribute(attr: &AttributeVector, net: &Network<f32>) -> Result<Tensor<f32>> {
    expect_id(net, NetworkId::Stage1)?;
    check_vocab(net, attr)?;
    net.encode_secondary(&attr.to_tensor())
}

/// Generation network: normalized source image and target attribute in,
/// normalized image out.
pub fn forward_stage1(x: &Image, attr: &AttributeVector, net: &Network<f32>) -> Result<Image> {
    expect_id(net, NetworkId::Stage1)?;
    check_vocab(net, attr)?;
    let out = net.forward(&image_input(net, x)?, Some(&attr.to_tensor()))?;
    Image::from_tensor(&out, Space::Normalized)
}

/// Refinement network: normalized source and first-stage output in.
pub fn forward_stage2(x: &Image, y1: &Image, net: &Network<f32>) -> Result<Image> {
    Ok(forward_stage2_with_feature(x, y1, net, None)?.0)
}

/// Refinement pass that can also return one trunk activation (by default
/// the map feeding the unpooling layer).
pub fn forward_stage2_with_feature(
    x: &Image,
    y1: &Image,
    net: &Network<f32>,
    feature_layer: Option<usize>,
) -> Result<(Image, Option<Tensor<f32>>)> {
    expect_id(net, NetworkId::Stage2)?;
    let a = image_input(net, x)?;
    let b = image_input(net, y1)?;
    match feature_layer {
        None => Ok((Image::from_tensor(&net.forward(&a, Some(&b))?, Space::Normalized)?, None)),
        Some(layer) => {
            let (out, feat) = net.forward_with_feature(&a, Some(&b), layer)?;
            Ok((Image::from_tensor(&out, Space::Normalized)?, Some(feat)))
        }
    }
}

/// Raw-space result of running one or both stages.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub stage1: Image,
    pub refined: Option<Image>,
    pub feature: Option<Tensor<f32>>,
}

impl Generation {
    /// The refined image when a second stage ran, else the first-stage one.
    pub fn best(&self) -> &Image {
        self.refined.as_ref().unwrap_or(&self.stage1)
    }
}

/// Both stages bound together, operating on raw images.
#[derive(Debug, Clone, Copy)]
pub struct Generator<'a> {
    stage1: &'a Checkpoint,
    stage2: Option<&'a Checkpoint>,
}

impl<'a> Generator<'a> {
    pub fn new(stage1: &'a Checkpoint, stage2: Option<&'a Checkpoint>) -> Result<Self> {
        expect_id(&stage1.network, NetworkId::Stage1)?;
        if let Some(s2) = stage2 {
            expect_id(&s2.network, NetworkId::Stage2)?;
            let (a, b) = (stage1.network.spec(), s2.network.spec());
            if (a.input_height, a.input_width) != (b.input_height, b.input_width) {
                return Err(Error::invalid("stage checkpoints disagree on input size"));
            }
        }
        Ok(Generator { stage1, stage2 })
    }

    pub fn stage1(&self) -> &'a Checkpoint {
        self.stage1
    }

    pub fn stage2(&self) -> Option<&'a Checkpoint> {
        self.stage2
    }

    pub fn vocabulary(&self) -> usize {
        self.stage1.network.spec().attribute_count().expect("stage1 has attributes")
    }

    pub fn input_size(&self) -> (usize, usize) {
        let s = self.stage1.network.spec();
        (s.input_height, s.input_width)
    }

    /// Runs the pipeline on a raw image. With `with_feature` the stage-2
    /// mid-layer activation is kept (requires a second stage).
    pub fn generate(&self, source: &Image, target: &AttributeVector, with_feature: bool) -> Result<Generation> {
        let norm = &self.stage1.norm;
        let x = source.normalize(norm)?;
        let y1 = forward_stage1(&x, target, &self.stage1.network)?;
        let stage1 = y1.denormalize(norm)?;
        let Some(s2) = self.stage2 else {
            if with_feature {
                return Err(Error::invalid("mid-layer features need a stage-2 checkpoint"));
            }
            return Ok(Generation {
                stage1,
                refined: None,
                feature: None,
            });
        };
        let layer = if with_feature {
            Some(s2.network.spec().mid_feature_layer().expect("stage2 has an unpool layer"))
        } else {
            None
        };
        let (y2, feature) = forward_stage2_with_feature(&x, &y1, &s2.network, layer)?;
        Ok(Generation {
            stage1,
            refined: Some(y2.denormalize(&s2.norm)?),
            feature,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::NormStats;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stage1_net(seed: u64) -> Network<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Network::init(build_stage1(7, 7).unwrap(), &mut rng).unwrap()
    }

    #[test]
    fn attribute_maps_shape_and_zero_case() {
        let attr = AttributeVector::one_hot(3, 7).unwrap();
        let zero = Network::zeros(build_stage1(7, 7).unwrap()).unwrap();
        let maps = encode_attribute(&attr, &zero).unwrap();
        assert_eq!(maps.shape(), &[16, 16, 7]);
        assert!(maps.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn distinct_attributes_give_distinct_maps() {
        let net = stage1_net(4);
        let a = encode_attribute(&AttributeVector::one_hot(0, 7).unwrap(), &net).unwrap();
        let b = encode_attribute(&AttributeVector::one_hot(5, 7).unwrap(), &net).unwrap();
        assert_ne!(a, b);
        let wrong = AttributeVector::one_hot(0, 5).unwrap();
        assert!(encode_attribute(&wrong, &net).is_err());
    }

    #[test]
    fn stage1_output_shape_and_purity() {
        let net = stage1_net(8);
        let stats = NormStats::new(120.0, 40.0).unwrap();
        let raw = Image::from_bytes(32, 32, &(0..1024).map(|i| (i % 251) as u8).collect::<Vec<_>>()).unwrap();
        let x = raw.normalize(&stats).unwrap();
        let attr = AttributeVector::one_hot(2, 7).unwrap();
        let a = forward_stage1(&x, &attr, &net).unwrap();
        let b = forward_stage1(&x, &attr, &net).unwrap();
        assert_eq!((a.height(), a.width()), (32, 32));
        assert_eq!(a, b);
        // raw inputs are refused
        assert!(forward_stage1(&raw, &attr, &net).is_err());
    }

    #[test]
    fn stage2_rejects_size_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::init(build_stage2().unwrap(), &mut rng).unwrap();
        let stats = NormStats::new(0.0, 1.0).unwrap();
        let x = Image::filled(32, 32, 10).normalize(&stats).unwrap();
        let small = Image::filled(16, 16, 10).normalize(&stats).unwrap();
        assert!(forward_stage2(&x, &small, &net).is_err());
        let y = forward_stage2(&x, &x, &net).unwrap();
        assert_eq!((y.height(), y.width()), (32, 32));
        assert_eq!(y, forward_stage2(&x, &x, &net).unwrap());
    }
}
