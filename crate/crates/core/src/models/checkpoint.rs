//! Checkpoint files.
//!
//! Little-endian layout:
//!
//! ```text
//! "ATNC"                      magic
//! u32                         format version
//! u8                          network id (1 stage1, 2 stage2, 3 classifier)
//! u64 u64                     rng seed, completed iterations
//! u32 u32 u32 u32             input height, input width,
//!                             attribute count, attribute map channels
//! u32                         parametric layer count
//! per layer:
//!   u8 u8                     kind tag (0 conv3x3, 1 fc), rank
//!   u32 * rank                weight extents
//!   f32 * (weights + bias)    parameters
//!   f32 * (weights + bias)    momentum velocity
//! f64 f64                     normalization mean, std
//! u32                         CRC-32 of every byte between magic and checksum
//! ```

use std::fs;
use std::path::Path;

use super::network::Network;
use super::spec::{build_classifier, build_stage1_with, build_stage2_at, NetworkId, NetworkSpec, Stage1Options};
use crate::error::{Error, Result};
use crate::image::NormStats;
use crate::nn::{LayerParams, ParamKind};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ATNC";
pub const FORMAT_VERSION: u32 = 1;

/// Full learnable state of one network plus what is needed to resume
/// training and to map between raw and normalized pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub velocity: Vec<LayerParams<f32>>,
    pub norm: NormStats,
    pub seed: u64,
    pub iteration: u64,
}

impl Checkpoint {
    /// Fresh checkpoint with zero velocity.
    pub fn new(network: Network<f32>, norm: NormStats, seed: u64) -> Self {
        let velocity = network.params().iter().map(LayerParams::zeros_like).collect();
        Checkpoint {
            network,
            velocity,
            norm,
            seed,
            iteration: 0,
        }
    }

    pub fn id(&self) -> NetworkId {
        self.network.spec().id
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = self.network.spec();
        let mut p = Vec::new();
        p.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        p.push(spec.id.tag());
        p.extend_from_slice(&self.seed.to_le_bytes());
        p.extend_from_slice(&self.iteration.to_le_bytes());
        for v in [
            spec.input_height,
            spec.input_width,
            spec.attribute_count().unwrap_or(0),
            spec.attribute_map_channels,
        ] {
            p.extend_from_slice(&(v as u32).to_le_bytes());
        }
        p.extend_from_slice(&(self.network.params().len() as u32).to_le_bytes());
        for (param, vel) in self.network.params().iter().zip(&self.velocity) {
            p.push(match param.kind {
                ParamKind::Conv3x3 => 0,
                ParamKind::FullyConnected => 1,
            });
            let shape = param.weights.shape();
            p.push(shape.len() as u8);
            for &e in shape {
                p.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for set in [param, vel] {
                for v in set.weights.data().iter().chain(&set.bias) {
                    p.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        p.extend_from_slice(&self.norm.mean.to_le_bytes());
        p.extend_from_slice(&self.norm.std.to_le_bytes());

        let mut out = Vec::with_capacity(p.len() + 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&p);
        out.extend_from_slice(&crc32fast::hash(&p).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let payload = &bytes[4..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        if crc32fast::hash(payload) != stored {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Reader { buf: payload, pos: 0 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let tag = r.u8()?;
        let id = NetworkId::from_tag(tag)
            .ok_or_else(|| Error::Checkpoint(format!("unknown network id {tag}")))?;
        let seed = r.u64()?;
        let iteration = r.u64()?;
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let attribute_count = r.u32()? as usize;
        let maps = r.u32()? as usize;
        if height != width {
            return Err(Error::Checkpoint(format!("non-square input {height}x{width}")));
        }
        let spec = rebuild_spec(id, height, attribute_count, maps)?;
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count);
        let mut velocity = Vec::with_capacity(count);
        for _ in 0..count {
            let kind = match r.u8()? {
                0 => ParamKind::Conv3x3,
                1 => ParamKind::FullyConnected,
                k => return Err(Error::Checkpoint(format!("unknown layer kind {k}"))),
            };
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let outputs = match (kind, &shape[..]) {
                (ParamKind::Conv3x3, [3, 3, _, o]) | (ParamKind::FullyConnected, [o, _]) => *o,
                _ => return Err(Error::Checkpoint(format!("bad {kind:?} extents {shape:?}"))),
            };
            let mut read_set = || -> Result<LayerParams<f32>> {
                let w = r.f32s(n)?;
                let b = r.f32s(outputs)?;
                LayerParams::new(kind, Tensor::new(&shape, w)?, b)
            };
            params.push(read_set()?);
            velocity.push(read_set()?);
        }
        let mean = r.f64()?;
        let std = r.f64()?;
        if r.pos != payload.len() {
            return Err(Error::Checkpoint("trailing bytes after normalization stats".into()));
        }
        let network = Network::new(spec, params).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Checkpoint {
            network,
            velocity,
            norm: NormStats { mean, std },
            seed,
            iteration,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

fn rebuild_spec(id: NetworkId, size: usize, attribute_count: usize, maps: usize) -> Result<NetworkSpec> {
    let spec = match id {
        NetworkId::Stage1 => build_stage1_with(Stage1Options {
            input_size: size,
            attribute_count,
            attribute_map_channels: maps,
            attribute_fc_width: None,
        }),
        NetworkId::Stage2 => build_stage2_at(size),
        NetworkId::Classifier => build_classifier(size, maps),
    };
    spec.map_err(|e| Error::Checkpoint(format!("cannot rebuild {id}: {e}")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated payload".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::spec::build_stage2_at;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = build_stage1_with(Stage1Options {
            input_size: 8,
            attribute_count: 4,
            attribute_map_channels: 2,
            attribute_fc_width: None,
        })
        .unwrap();
        let net = Network::init(spec, &mut rng).unwrap();
        let mut ck = Checkpoint::new(net, NormStats::new(101.5, 37.25).unwrap(), 9);
        ck.velocity[0].weights.data_mut()[3] = -0.125;
        ck.iteration = 17;
        ck
    }

    #[test]
    fn bytes_roundtrip_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..4], b"ATNC");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupted_payload_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[40] ^= 0x10;
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        let short = &sample().to_bytes()[..50];
        assert!(Checkpoint::from_bytes(short).is_err());
        assert!(Checkpoint::from_bytes(b"NOPE0000").is_err());
    }

    #[test]
    fn stage2_roundtrip_via_file() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Network::init(build_stage2_at(8).unwrap(), &mut rng).unwrap();
        let ck = Checkpoint::new(net, NormStats::new(0.0, 1.0).unwrap(), 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s2.ckpt");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }
}
