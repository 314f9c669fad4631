//! Grayscale images, pixel spaces, and attribute vectors.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Side length of every training image.
pub const IMAGE_SIZE: usize = 32;

/// Which units an [`Image`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    /// Gray levels in `[0, 255]`.
    Raw,
    /// Zero-mean, unit-variance values under some [`NormStats`].
    Normalized,
}

/// Dataset-global pixel statistics, in raw gray levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    /// Lower bound applied to `std` so normalization never divides by zero.
    pub const STD_FLOOR: f64 = 1e-6;

    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() {
            return Err(Error::invalid("normalization stats must be finite"));
        }
        Ok(NormStats {
            mean,
            std: std.max(Self::STD_FLOOR),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    space: Space,
    data: Vec<f64>,
}

impl Image {
    pub fn from_bytes(height: usize, width: usize, pixels: &[u8]) -> Result<Self> {
        Self::raw(height, width, pixels.iter().map(|&p| p as f64).collect())
    }

    /// A raw image; every value must lie in `[0, 255]`.
    pub fn raw(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if let Some(bad) = data.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(Error::invalid(format!(
                "raw pixel {bad} outside [0, 255]"
            )));
        }
        Self::with_space(height, width, Space::Raw, data)
    }

    pub fn normalized(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::with_space(height, width, Space::Normalized, data)
    }

    fn with_space(height: usize, width: usize, space: Space, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::invalid(format!(
                "{height}x{width} image cannot hold {} pixels",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image contains non-finite pixels"));
        }
        Ok(Image {
            height,
            width,
            space,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Image {
            height,
            width,
            space: Space::Raw,
            data: vec![value as f64; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn expect_space(&self, space: Space, what: &str) -> Result<()> {
        if self.space != space {
            return Err(Error::Space(format!(
                "{what} expects a {space:?} image, got {:?}",
                self.space
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, stats: &NormStats) -> Result<Image> {
        self.expect_space(Space::Raw, "normalize")?;
        let data = self
            .data
            .iter()
            .map(|&v| (v - stats.mean) / stats.std)
            .collect();
        Ok(Image {
            height: self.height,
            width: self.width,
            space: Space::Normalized,
            data,
        })
    }

    /// Maps back to gray levels, clamping into `[0, 255]`.
    pub fn denormalize(&self, stats: &NormStats) -> Result<Image> {
        self.expect_space(Space::Normalized, "denormalize")?;
        let data = self
            .data
            .iter()
            .map(|&v| (v * stats.std + stats.mean).clamp(0.0, 255.0))
            .collect();
        Ok(Image {
            height: self.height,
            width: self.width,
            space: Space::Raw,
            data,
        })
    }

    /// Gray levels rounded to bytes. Only defined for raw images.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.expect_space(Space::Raw, "to_bytes")?;
        Ok(self.data.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect())
    }

    /// `H x W x 1` tensor view of the pixels.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(&[self.height, self.width, 1], |i| {
            T::from_f64(self.data[i]).expect("finite pixel")
        })
        .expect("valid image extents")
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, space: Space) -> Result<Image> {
        let (h, w, c) = t.hwc()?;
        if c != 1 {
            return Err(Error::ShapeMismatch {
                op: "image from tensor",
                expected: vec![h, w, 1],
                found: t.shape().to_vec(),
            });
        }
        let data: Vec<f64> = t
            .data()
            .iter()
            .map(|v| v.to_f64().unwrap_or(f64::NAN))
            .collect();
        match space {
            Space::Raw => Image::raw(h, w, data),
            Space::Normalized => Image::normalized(h, w, data),
        }
    }

    /// Mean over pixels of `(self - other)^2`; both images must share a space.
    pub fn mean_squared_error(&self, other: &Image) -> Result<f64> {
        self.check_compatible(other)?;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    /// Euclidean distance between pixel vectors of two images in one space.
    pub fn distance(&self, other: &Image) -> Result<f64> {
        Ok((self.mean_squared_error(other)? * self.data.len() as f64).sqrt())
    }

    pub fn check_compatible(&self, other: &Image) -> Result<()> {
        if self.space != other.space {
            return Err(Error::Space(format!(
                "cannot combine {:?} and {:?} images",
                self.space, other.space
            )));
        }
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::ShapeMismatch {
                op: "image arithmetic",
                expected: vec![self.height, self.width],
                found: vec![other.height, other.width],
            });
        }
        Ok(())
    }

    /// Halves both extents by averaging 2x2 blocks.
    pub fn downsample2x(&self) -> Result<Image> {
        if self.height % 2 != 0 || self.width % 2 != 0 {
            return Err(Error::invalid("downsample2x needs even extents"));
        }
        let (h, w) = (self.height / 2, self.width / 2);
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let s = self.get(2 * y, 2 * x)
                    + self.get(2 * y, 2 * x + 1)
                    + self.get(2 * y + 1, 2 * x)
                    + self.get(2 * y + 1, 2 * x + 1);
                data.push(s / 4.0);
            }
        }
        Ok(Image {
            height: h,
            width: w,
            space: self.space,
            data,
        })
    }

    pub(crate) fn map_rows(&self, rows: std::ops::Range<usize>, value: f64) -> Image {
        let mut out = self.clone();
        for r in rows {
            out.data[r * self.width..(r + 1) * self.width].fill(value);
        }
        out
    }
}

/// One-hot encoding of an attribute over a fixed vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttributeVector {
    index: usize,
    size: usize,
}

impl AttributeVector {
    pub fn one_hot(index: usize, size: usize) -> Result<Self> {
        if index >= size {
            return Err(Error::invalid(format!(
                "attribute {index} outside vocabulary of size {size}"
            )));
        }
        Ok(AttributeVector { index, size })
    }

    /// Accepts a dense vector only when it is exactly one-hot.
    pub fn try_from_values(values: &[f32]) -> Result<Self> {
        let ones: Vec<usize> = values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .map(|(i, _)| i)
            .collect();
        let zeros = values.iter().filter(|&&v| v == 0.0).count();
        match ones[..] {
            [i] if zeros + 1 == values.len() => Self::one_hot(i, values.len()),
            _ => Err(Error::invalid(format!("{values:?} is not a one-hot vector"))),
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> Vec<f32> {
        (0..self.size)
            .map(|i| if i == self.index { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(&[self.size], |i| if i == self.index { T::one() } else { T::zero() })
            .expect("non-empty vocabulary")
    }
}
