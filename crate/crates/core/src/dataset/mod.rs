//! Manifests, training pairs, PGM I/O, occlusion, and synthetic data.

mod manifest;
mod occlusion;
mod pgm;
pub mod synth;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

pub use manifest::{
    build_pairs, identities, load_manifest, manifest_to_string, parse_manifest, write_manifest, ManifestEntry,
    PairRef, Split, MANIFEST_HEADER,
};
pub use occlusion::{apply_eye_occlusion, default_eye_bar, EYE_BAR_HEIGHT, EYE_BAR_TOP};
pub use pgm::{decode_pgm, encode_pgm, montage, read_image, read_image_any, write_image};
pub use synth::{synth_generate, synth_in_memory, SynthConfig};

use crate::error::{Error, Result};
use crate::image::{AttributeVector, Image};

/// `one_hot(id, n)` is the attribute vector with a single 1 at `id`.
pub fn one_hot(attribute_id: usize, vocab_size: usize) -> Result<AttributeVector> {
    AttributeVector::one_hot(attribute_id, vocab_size)
}

/// The two seven-way attribute vocabularies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Vocabulary {
    /// Yaw from -45 to +45 degrees in 15 degree steps; index order is
    /// angle order.
    Poses7,
    /// None, cap, tall hat, beanie, round glasses, sunglasses, square glasses.
    Accessories7,
}

impl Vocabulary {
    pub fn size(self) -> usize {
        7
    }

    pub fn name(self) -> &'static str {
        match self {
            Vocabulary::Poses7 => "poses-7",
            Vocabulary::Accessories7 => "accessories-7",
        }
    }

    pub fn label(self, attribute: usize) -> Option<&'static str> {
        const POSES: [&str; 7] = ["-45", "-30", "-15", "0", "+15", "+30", "+45"];
        const ACCESSORIES: [&str; 7] = [
            "none",
            "cap",
            "tall-hat",
            "beanie",
            "round-glasses",
            "sunglasses",
            "square-glasses",
        ];
        match self {
            Vocabulary::Poses7 => POSES.get(attribute).copied(),
            Vocabulary::Accessories7 => ACCESSORIES.get(attribute).copied(),
        }
    }
}

impl fmt::Display for Vocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Vocabulary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poses-7" => Ok(Vocabulary::Poses7),
            "accessories-7" => Ok(Vocabulary::Accessories7),
            _ => Err(Error::invalid(format!(
                "unknown vocabulary {s:?} (expected poses-7 or accessories-7)"
            ))),
        }
    }
}

/// One training unit. Images are shared, never copied or mutated.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub source: Arc<Image>,
    pub source_attr: AttributeVector,
    pub target_attr: AttributeVector,
    pub target: Arc<Image>,
    pub identity: u32,
    pub illumination: Option<u32>,
}

impl SamplePair {
    /// An attribute-change pair; the two attributes must differ.
    pub fn new(
        source: Arc<Image>,
        source_attr: AttributeVector,
        target_attr: AttributeVector,
        target: Arc<Image>,
        identity: u32,
        illumination: Option<u32>,
    ) -> Result<Self> {
        if source_attr == target_attr {
            return Err(Error::invalid("a pair must change the attribute"));
        }
        Self::completion(source, source_attr, target_attr, target, identity, illumination)
    }

    /// A pair whose attributes may coincide, as in image completion where
    /// the source is an occluded copy of the target.
    pub fn completion(
        source: Arc<Image>,
        source_attr: AttributeVector,
        target_attr: AttributeVector,
        target: Arc<Image>,
        identity: u32,
        illumination: Option<u32>,
    ) -> Result<Self> {
        if source_attr.size() != target_attr.size() {
            return Err(Error::invalid("source and target attributes use different vocabularies"));
        }
        source.check_compatible(&target)?;
        Ok(SamplePair {
            source,
            source_attr,
            target_attr,
            target,
            identity,
            illumination,
        })
    }
}

/// Manifest entries and their decoded images.
#[derive(Debug, Clone)]
pub struct Dataset {
    entries: Vec<ManifestEntry>,
    images: Vec<Arc<Image>>,
    vocab_size: usize,
}

impl Dataset {
    pub fn new(entries: Vec<ManifestEntry>, images: Vec<Image>, vocab_size: usize) -> Result<Self> {
        if entries.len() != images.len() {
            return Err(Error::invalid(format!(
                "{} entries but {} images",
                entries.len(),
                images.len()
            )));
        }
        if let Some(e) = entries.iter().find(|e| e.attribute_id >= vocab_size) {
            return Err(Error::invalid(format!(
                "{} has attribute {} outside vocabulary of size {vocab_size}",
                e.image_path.display(),
                e.attribute_id
            )));
        }
        if let Some(first) = images.first() {
            if let Some(bad) = images.iter().find(|i| first.check_compatible(i).is_err()) {
                return Err(Error::ShapeMismatch {
                    op: "dataset images",
                    expected: vec![first.height(), first.width()],
                    found: vec![bad.height(), bad.width()],
                });
            }
        }
        Ok(Dataset {
            entries,
            images: images.into_iter().map(Arc::new).collect(),
            vocab_size,
        })
    }

    /// Loads a manifest and every 32x32 image it names. Relative paths are
    /// resolved against the manifest's directory.
    pub fn load(manifest: impl AsRef<Path>, vocab_size: usize) -> Result<Self> {
        let manifest = manifest.as_ref();
        let entries = load_manifest(manifest, vocab_size)?;
        let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        let images = entries
            .par_iter()
            .map(|e| read_image(resolve(&root, &e.image_path)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries, images, vocab_size)
    }

    pub fn synthetic(cfg: &SynthConfig) -> Result<Self> {
        let (entries, images) = synth_in_memory(cfg)?;
        Self::new(entries, images, cfg.vocab.size())
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn image(&self, i: usize) -> &Arc<Image> {
        &self.images[i]
    }

    pub fn images(&self) -> &[Arc<Image>] {
        &self.images
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Indices of the entries in one split.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.entries[i].split == split).collect()
    }

    pub fn split_images(&self, split: Split) -> impl Iterator<Item = &Image> + '_ {
        self.entries
            .iter()
            .zip(&self.images)
            .filter(move |(e, _)| e.split == split)
            .map(|(_, i)| i.as_ref())
    }

    pub fn sample_pair(&self, r: PairRef) -> Result<SamplePair> {
        let (s, t) = (&self.entries[r.source], &self.entries[r.target]);
        if s.identity != t.identity || s.illumination_id != t.illumination_id {
            return Err(Error::invalid("pair endpoints differ in identity or illumination"));
        }
        SamplePair::new(
            self.images[r.source].clone(),
            one_hot(s.attribute_id, self.vocab_size)?,
            one_hot(t.attribute_id, self.vocab_size)?,
            self.images[r.target].clone(),
            s.identity,
            s.illumination_id,
        )
    }

    /// All ordered attribute-change pairs within one split.
    pub fn pairs(&self, split: Split) -> Result<Vec<SamplePair>> {
        build_pairs(&self.entries)
            .into_iter()
            .filter(|r| self.entries[r.source].split == split)
            .map(|r| self.sample_pair(r))
            .collect()
    }

    /// Completion pairs: each image with the eye bar applied, mapped back
    /// to itself under its own attribute.
    pub fn completion_pairs(&self, split: Split, bar_top: usize, bar_height: usize) -> Result<Vec<SamplePair>> {
        self.indices(split)
            .into_iter()
            .map(|i| {
                let e = &self.entries[i];
                let attr = one_hot(e.attribute_id, self.vocab_size)?;
                let occluded = apply_eye_occlusion(&self.images[i], bar_top, bar_height)?;
                SamplePair::completion(
                    Arc::new(occluded),
                    attr,
                    attr,
                    self.images[i].clone(),
                    e.identity,
                    e.illumination_id,
                )
            })
            .collect()
    }

    /// A copy with every image halved in each extent.
    pub fn downsampled(&self) -> Result<Dataset> {
        let images = self
            .images
            .iter()
            .map(|i| i.downsample2x())
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.entries.clone(), images, self.vocab_size)
    }
}

fn resolve(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}
