use std::fmt;

use crate::error::{Error, Result};
use crate::image::IMAGE_SIZE;
use crate::nn::Layer;

/// Default number of 16x16 maps the attribute branch emits.
pub const DEFAULT_ATTRIBUTE_MAPS: usize = 7;
/// Width of the first attribute embedding layer.
pub const ATTRIBUTE_EMBEDDING: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NetworkId {
    /// Generation network: image and attribute in, image out.
    Stage1,
    /// Refinement network: source and first-stage image in, image out.
    Stage2,
    /// Small attribute classifier used by the two-step retrieval baseline.
    Classifier,
}

impl NetworkId {
    pub fn tag(self) -> u8 {
        match self {
            NetworkId::Stage1 => 1,
            NetworkId::Stage2 => 2,
            NetworkId::Classifier => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(NetworkId::Stage1),
            2 => Some(NetworkId::Stage2),
            3 => Some(NetworkId::Classifier),
            _ => None,
        }
    }
}

impl fmt::Display for NetworkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetworkId::Stage1 => "stage1",
            NetworkId::Stage2 => "stage2",
            NetworkId::Classifier => "classifier",
        })
    }
}

/// What the second input of a network is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SecondaryInput {
    None,
    /// A one-hot vector of the given length.
    Attribute(usize),
    /// A second single-channel image with the primary's extents.
    Image,
}

/// Which part of a network a layer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Section {
    Image,
    Attribute,
    Trunk,
}

/// Ordered layer description of a network.
///
/// The primary image runs through `image_branch`, the secondary input
/// through `attribute_branch`; when a secondary input exists the two results
/// are joined by one channel concatenation and fed to `trunk`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub id: NetworkId,
    pub input_height: usize,
    pub input_width: usize,
    pub secondary: SecondaryInput,
    pub attribute_map_channels: usize,
    pub image_branch: Vec<Layer>,
    pub attribute_branch: Vec<Layer>,
    pub trunk: Vec<Layer>,
}

/// Shape after each layer, as produced by [`NetworkSpec::trace`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeTrace {
    pub image_branch: Vec<Vec<usize>>,
    pub attribute_branch: Vec<Vec<usize>>,
    /// Input to the trunk, i.e. the concatenation output when there is one.
    pub trunk_input: Vec<usize>,
    pub trunk: Vec<Vec<usize>>,
}

impl ShapeTrace {
    pub fn output(&self) -> &[usize] {
        self.trunk.last().map(Vec::as_slice).unwrap_or(&self.trunk_input)
    }
}

impl NetworkSpec {
    pub fn layers(&self) -> impl Iterator<Item = (Section, &Layer)> {
        self.image_branch
            .iter()
            .map(|l| (Section::Image, l))
            .chain(self.attribute_branch.iter().map(|l| (Section::Attribute, l)))
            .chain(self.trunk.iter().map(|l| (Section::Trunk, l)))
    }

    pub fn parametric_layers(&self) -> impl Iterator<Item = (Section, &Layer)> {
        self.layers().filter(|(_, l)| l.has_params())
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(|(_, l)| l.param_count()).sum()
    }

    pub fn primary_shape(&self) -> Vec<usize> {
        vec![self.input_height, self.input_width, 1]
    }

    pub fn secondary_shape(&self) -> Option<Vec<usize>> {
        match self.secondary {
            SecondaryInput::None => None,
            SecondaryInput::Attribute(n) => Some(vec![n]),
            SecondaryInput::Image => Some(self.primary_shape()),
        }
    }

    pub fn attribute_count(&self) -> Option<usize> {
        match self.secondary {
            SecondaryInput::Attribute(n) => Some(n),
            _ => None,
        }
    }

    /// Number of trunk channels contributed by the image branch.
    pub fn concat_split(&self) -> Result<Option<usize>> {
        if self.secondary == SecondaryInput::None {
            return Ok(None);
        }
        let trace = self.trace()?;
        let c = trace
            .image_branch
            .last()
            .cloned()
            .unwrap_or_else(|| self.primary_shape());
        Ok(Some(c[2]))
    }

    /// Symbolic shape propagation through every layer.
    pub fn trace(&self) -> Result<ShapeTrace> {
        let run = |layers: &[Layer], input: Vec<usize>| -> Result<Vec<Vec<usize>>> {
            let mut shapes = Vec::with_capacity(layers.len());
            let mut cur = input;
            for layer in layers {
                cur = layer.output_shape(&cur)?;
                shapes.push(cur.clone());
            }
            Ok(shapes)
        };
        let primary = self.primary_shape();
        let image_branch = run(&self.image_branch, primary.clone())?;
        let image_out = image_branch.last().cloned().unwrap_or(primary);
        let (attribute_branch, trunk_input) = match self.secondary_shape() {
            None => {
                if !self.attribute_branch.is_empty() {
                    return Err(Error::invalid("attribute branch without a secondary input"));
                }
                (Vec::new(), image_out)
            }
            Some(sec) => {
                let branch = run(&self.attribute_branch, sec.clone())?;
                let sec_out = branch.last().cloned().unwrap_or(sec);
                match (&image_out[..], &sec_out[..]) {
                    ([h, w, a], [h2, w2, b]) if (h, w) == (h2, w2) => (branch, vec![*h, *w, a + b]),
                    _ => {
                        return Err(Error::ShapeMismatch {
                            op: "concat",
                            expected: image_out,
                            found: sec_out,
                        })
                    }
                }
            }
        };
        let trunk = run(&self.trunk, trunk_input.clone())?;
        Ok(ShapeTrace {
            image_branch,
            attribute_branch,
            trunk_input,
            trunk,
        })
    }

    /// Index of the trunk layer whose output is the retrieval feature: the
    /// activation right before the unpooling layer.
    pub fn mid_feature_layer(&self) -> Option<usize> {
        let unpool = self.trunk.iter().position(|l| *l == Layer::Unpool2x2)?;
        unpool.checked_sub(1)
    }
}

fn conv(i: usize, o: usize) -> Layer {
    Layer::Conv3x3 {
        in_channels: i,
        out_channels: o,
    }
}

/// Build parameters of the generation network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage1Options {
    /// Side length of the (square) input image.
    pub input_size: usize,
    pub attribute_count: usize,
    pub attribute_map_channels: usize,
    /// Explicit width of the second attribute layer. When set it must equal
    /// `(input_size / 2)^2 * attribute_map_channels`.
    pub attribute_fc_width: Option<usize>,
}

impl Default for Stage1Options {
    fn default() -> Self {
        Stage1Options {
            input_size: IMAGE_SIZE,
            attribute_count: 7,
            attribute_map_channels: DEFAULT_ATTRIBUTE_MAPS,
            attribute_fc_width: None,
        }
    }
}

fn check_size(size: usize) -> Result<()> {
    if size < 2 || size % 2 != 0 {
        return Err(Error::invalid(format!(
            "input size must be even and at least 2, got {size}"
        )));
    }
    Ok(())
}

/// `Conv(64)-ReLU-Conv(64)-ReLU-Pool` on the image, `FC(512)-ReLU-FC-Reshape`
/// on the attribute, then
/// `Concat-Conv(64)-ReLU-Conv(128)-ReLU-Conv(128)-ReLU-Conv(64)-ReLU` and the
/// decoder `Unpool-Conv(64)-ReLU-Conv(1)`.
pub fn build_stage1_with(opts: Stage1Options) -> Result<NetworkSpec> {
    check_size(opts.input_size)?;
    if opts.attribute_count < 2 {
        return Err(Error::invalid("attribute vocabulary needs at least two entries"));
    }
    if opts.attribute_map_channels == 0 {
        return Err(Error::invalid("attribute_map_channels must be positive"));
    }
    let half = opts.input_size / 2;
    let width = half * half * opts.attribute_map_channels;
    if let Some(declared) = opts.attribute_fc_width {
        if declared != width {
            return Err(Error::invalid(format!(
                "attribute FC width {declared} does not reshape to {half}x{half}x{} (needs {width})",
                opts.attribute_map_channels
            )));
        }
    }
    let maps = opts.attribute_map_channels;
    let spec = NetworkSpec {
        id: NetworkId::Stage1,
        input_height: opts.input_size,
        input_width: opts.input_size,
        secondary: SecondaryInput::Attribute(opts.attribute_count),
        attribute_map_channels: maps,
        image_branch: vec![conv(1, 64), Layer::Relu, conv(64, 64), Layer::Relu, Layer::MaxPool2x2],
        attribute_branch: vec![
            Layer::FullyConnected {
                inputs: opts.attribute_count,
                outputs: ATTRIBUTE_EMBEDDING,
            },
            Layer::Relu,
            Layer::FullyConnected {
                inputs: ATTRIBUTE_EMBEDDING,
                outputs: width,
            },
            Layer::Reshape {
                height: half,
                width: half,
                channels: maps,
            },
        ],
        trunk: vec![
            conv(64 + maps, 64),
            Layer::Relu,
            conv(64, 128),
            Layer::Relu,
            conv(128, 128),
            Layer::Relu,
            conv(128, 64),
            Layer::Relu,
            Layer::Unpool2x2,
            conv(64, 64),
            Layer::Relu,
            conv(64, 1),
        ],
    };
    spec.trace()?;
    Ok(spec)
}

/// Generation network at the default 32x32 resolution.
pub fn build_stage1(attribute_count: usize, attribute_map_channels: usize) -> Result<NetworkSpec> {
    build_stage1_with(Stage1Options {
        attribute_count,
        attribute_map_channels,
        ..Stage1Options::default()
    })
}

/// Refinement network for square inputs of side `input_size`.
pub fn build_stage2_at(input_size: usize) -> Result<NetworkSpec> {
    check_size(input_size)?;
    let spec = NetworkSpec {
        id: NetworkId::Stage2,
        input_height: input_size,
        input_width: input_size,
        secondary: SecondaryInput::Image,
        attribute_map_channels: 0,
        image_branch: Vec::new(),
        attribute_branch: Vec::new(),
        trunk: vec![
            conv(2, 64),
            Layer::Relu,
            conv(64, 64),
            Layer::Relu,
            Layer::MaxPool2x2,
            conv(64, 128),
            Layer::Relu,
            conv(128, 128),
            Layer::Relu,
            conv(128, 128),
            Layer::Relu,
            conv(128, 64),
            Layer::Relu,
            Layer::Unpool2x2,
            conv(64, 64),
            Layer::Relu,
            conv(64, 1),
        ],
    };
    spec.trace()?;
    Ok(spec)
}

pub fn build_stage2() -> Result<NetworkSpec> {
    build_stage2_at(IMAGE_SIZE)
}

/// `Conv(16)-ReLU-Pool-Conv(32)-ReLU-Pool-FC(classes)` on raw pixels.
pub fn build_classifier(input_size: usize, classes: usize) -> Result<NetworkSpec> {
    if input_size % 4 != 0 || input_size == 0 {
        return Err(Error::invalid("classifier input size must be a multiple of 4"));
    }
    if classes < 2 {
        return Err(Error::invalid("classifier needs at least two classes"));
    }
    let q = input_size / 4;
    let spec = NetworkSpec {
        id: NetworkId::Classifier,
        input_height: input_size,
        input_width: input_size,
        secondary: SecondaryInput::None,
        attribute_map_channels: classes,
        image_branch: Vec::new(),
        attribute_branch: Vec::new(),
        trunk: vec![
            conv(1, 16),
            Layer::Relu,
            Layer::MaxPool2x2,
            conv(16, 32),
            Layer::Relu,
            Layer::MaxPool2x2,
            Layer::FullyConnected {
                inputs: q * q * 32,
                outputs: classes,
            },
        ],
    };
    spec.trace()?;
    Ok(spec)
}
