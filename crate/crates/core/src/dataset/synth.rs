//! Procedural grayscale faces standing in for a licensed face corpus.
//!
//! An identity fixes the head and feature geometry and the tones. A pose
//! attribute yaws the face about a vertical cylinder, an accessory attribute
//! overlays a hat or glasses, and an illumination index applies a left-right
//! brightness ramp. Noise is drawn from a generator keyed on
//! `(seed, identity, illumination, attribute)`, so rendering is a pure
//! function of those four values.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::manifest::{write_manifest, ManifestEntry, Split};
use super::pgm::write_image;
use super::Vocabulary;
use crate::error::{Error, Result};
use crate::image::{Image, IMAGE_SIZE};

pub const NOISE_SIGMA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub train_identities: u32,
    pub test_identities: u32,
    pub illuminations: u32,
    pub vocab: Vocabulary,
    pub seed: u64,
    /// Output side length.
    pub size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train_identities: 40,
            test_identities: 10,
            illuminations: 4,
            vocab: Vocabulary::Poses7,
            seed: 0,
            size: IMAGE_SIZE,
        }
    }
}

impl SynthConfig {
    pub fn identities(&self) -> u32 {
        self.train_identities + self.test_identities
    }

    pub fn validate(&self) -> Result<()> {
        if self.identities() == 0 || self.illuminations == 0 {
            return Err(Error::invalid("synthesis needs at least one identity and one illumination"));
        }
        if self.size < 8 || self.size % 2 != 0 {
            return Err(Error::invalid(format!("synthetic image size {} must be even and >= 8", self.size)));
        }
        Ok(())
    }

    /// Brightness ramp slope for an illumination index, evenly spaced over
    /// `[-0.5, 0.5]`.
    pub fn illumination_gain(&self, illumination: u32) -> f64 {
        if self.illuminations <= 1 {
            0.0
        } else {
            -0.5 + illumination as f64 / (self.illuminations - 1) as f64
        }
    }

    fn illumination_label(&self, illumination: u32) -> Option<u32> {
        match self.vocab {
            Vocabulary::Accessories7 if self.illuminations == 1 => None,
            _ => Some(illumination),
        }
    }

    pub fn split_of(&self, identity: u32) -> Split {
        if identity < self.train_identities {
            Split::Train
        } else {
            Split::Test
        }
    }
}

/// Per-identity geometry and tones, in 32-pixel units.
#[derive(Debug, Clone, Copy)]
struct Face {
    rx: f64,
    ry: f64,
    cy: f64,
    eye_dx: f64,
    eye_y: f64,
    eye_w: f64,
    mouth_y: f64,
    mouth_w: f64,
    nose_len: f64,
    hair_line: f64,
    skin: f64,
    hair: f64,
    background: f64,
    eye_tone: f64,
}

impl Face {
    fn sample(seed: u64, identity: u32) -> Face {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(identity as u64 * 2 + 1);
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let ry = u(11.0, 13.5);
        Face {
            rx: u(8.5, 11.0),
            ry,
            cy: u(16.0, 17.5),
            eye_dx: u(3.6, 5.2),
            eye_y: u(13.0, 15.0),
            eye_w: u(1.2, 2.0),
            mouth_y: u(21.5, 24.0),
            mouth_w: u(2.5, 4.8),
            nose_len: u(3.5, 5.5),
            hair_line: u(0.3, 0.6),
            skin: u(140.0, 215.0),
            hair: u(15.0, 90.0),
            background: u(50.0, 115.0),
            eye_tone: u(10.0, 50.0),
        }
    }
}

fn in_ellipse(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> bool {
    let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
    dx * dx + dy * dy <= 1.0
}

const YAW_MAX: f64 = 0.95;
const CX: f64 = 16.0;

/// Surface offset `u` in `[-1, 1]` across the face, projected under `yaw`.
/// Returns the image x coordinate and the foreshortening factor.
fn project(face: &Face, head_cx: f64, u: f64, yaw: f64) -> (f64, f64) {
    let theta = u.clamp(-1.0, 1.0).asin() + yaw * YAW_MAX;
    (head_cx + face.rx * theta.sin(), theta.cos())
}

fn pose_intensity(face: &Face, x: f64, y: f64, yaw: f64) -> f64 {
    let head_cx = CX + yaw * 1.5;
    let hair_cx = CX - yaw * 0.5;
    let top = face.cy - face.ry;
    let in_head = in_ellipse(x, y, head_cx, face.cy, face.rx, face.ry);
    let in_hair = in_ellipse(x, y, hair_cx, face.cy - 0.8, face.rx + 1.2, face.ry + 0.8);
    if !in_head {
        return if in_hair && y < face.cy { face.hair } else { face.background };
    }
    // hair cap, plus the back of the head on the side turned away
    if y < top + face.ry * face.hair_line {
        return face.hair;
    }
    let lateral = (x - head_cx) / face.rx;
    let back = -yaw.signum() * lateral;
    if yaw != 0.0 && back > 1.0 - 0.55 * yaw.abs() && y < face.cy + face.ry * 0.35 {
        return face.hair;
    }
    let shade = 1.0 - 0.12 * (lateral - yaw * 0.6).abs().min(1.0);
    let skin = face.skin * shade;
    let feature = |u: f64, fy: f64, hw: f64, hh: f64| -> bool {
        let (fx, fs) = project(face, head_cx, u, yaw);
        fs > 0.2 && in_ellipse(x, y, fx, fy, (hw * fs).max(0.45), hh)
    };
    let eu = face.eye_dx / face.rx;
    for s in [-1.0, 1.0] {
        if feature(s * eu, face.eye_y, face.eye_w, 0.9) {
            return face.eye_tone;
        }
        if feature(s * eu, face.eye_y - 2.3, face.eye_w + 0.6, 0.45) {
            return face.hair;
        }
    }
    if feature(0.0, face.mouth_y, face.mouth_w, 0.7) {
        return 0.35 * face.skin;
    }
    // nose ridge sticks out of the cylinder, so it moves further with yaw
    let (nx, fs) = project(face, head_cx, 0.0, yaw);
    let nx = nx + yaw * 1.6;
    let ny0 = face.eye_y + 1.0;
    if fs > 0.2 && y >= ny0 && y <= ny0 + face.nose_len && (x - nx).abs() <= 0.7 {
        return 0.7 * skin;
    }
    skin
}

fn accessory_intensity(face: &Face, x: f64, y: f64, accessory: usize) -> f64 {
    let base = pose_intensity(face, x, y, 0.0);
    let top = face.cy - face.ry;
    let in_head_plus = in_ellipse(x, y, CX, face.cy, face.rx + 1.2, face.ry + 1.0);
    let eyes = [CX - face.eye_dx, CX + face.eye_dx];
    match accessory {
        // cap: bright crown and a brim reaching out to the right
        1 => {
            if in_head_plus && y < top + 4.0 {
                return 235.0;
            }
            if y >= top + 3.0 && y < top + 5.0 && x >= CX - face.rx && x <= CX + face.rx + 5.0 {
                return 200.0;
            }
            base
        }
        // tall hat: black column from the top edge with a wide brim
        2 => {
            if y < top + 2.5 && (x - CX).abs() <= face.rx * 0.8 {
                return 12.0;
            }
            if y >= top + 1.5 && y < top + 3.5 && (x - CX).abs() <= face.rx + 3.0 {
                return 25.0;
            }
            base
        }
        // beanie: striped dome covering the upper head
        3 => {
            if in_head_plus && y < face.cy - face.ry * 0.35 {
                return if (y.floor() as i64).rem_euclid(3) == 0 { 110.0 } else { 175.0 };
            }
            base
        }
        // round glasses: rings around both eyes and a bridge
        4 => {
            for ex in eyes {
                let d = ((x - ex).powi(2) + (y - face.eye_y).powi(2)).sqrt();
                if (d - 2.7).abs() <= 0.55 {
                    return 8.0;
                }
            }
            if (y - face.eye_y).abs() <= 0.4 && (x - CX).abs() <= face.eye_dx - 2.5 {
                return 8.0;
            }
            base
        }
        // sunglasses: filled dark lenses
        5 => {
            for ex in eyes {
                if in_ellipse(x, y, ex, face.eye_y + 0.3, 2.9, 2.1) {
                    return 4.0;
                }
            }
            if (y - face.eye_y).abs() <= 0.45 && (x - CX).abs() <= face.eye_dx {
                return 4.0;
            }
            base
        }
        // square glasses: square frames
        6 => {
            for ex in eyes {
                let (dx, dy) = ((x - ex).abs(), (y - face.eye_y).abs());
                let m = dx.max(dy);
                if (m - 2.6).abs() <= 0.5 {
                    return 10.0;
                }
            }
            if (y - face.eye_y).abs() <= 0.4 && (x - CX).abs() <= face.eye_dx - 2.1 {
                return 10.0;
            }
            base
        }
        _ => base,
    }
}

/// Renders one image. Pure in its arguments.
pub fn render(cfg: &SynthConfig, identity: u32, illumination: u32, attribute: usize) -> Result<Image> {
    cfg.validate()?;
    if attribute >= cfg.vocab.size() {
        return Err(Error::invalid(format!(
            "attribute {attribute} outside {} vocabulary",
            cfg.vocab.name()
        )));
    }
    let face = Face::sample(cfg.seed, identity);
    let gain = cfg.illumination_gain(illumination);
    let n = cfg.size;
    let scale = IMAGE_SIZE as f64 / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(
        ((identity as u64) << 32) ^ ((illumination as u64) << 8) ^ (attribute as u64) ^ (1 << 63),
    );
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("positive sigma");
    let sub = [0.25, 0.75];
    let mut data = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            let mut acc = 0.0;
            for sy in sub {
                for sx in sub {
                    let x = (col as f64 + sx) * scale;
                    let y = (row as f64 + sy) * scale;
                    acc += match cfg.vocab {
                        Vocabulary::Poses7 => {
                            pose_intensity(&face, x, y, (attribute as f64 - 3.0) / 3.0)
                        }
                        Vocabulary::Accessories7 => accessory_intensity(&face, x, y, attribute),
                    };
                }
            }
            let x = (col as f64 + 0.5) * scale;
            let lit = acc / 4.0 * (1.0 + gain * (x - CX) / CX);
            let v = (lit + noise.sample(&mut rng)).round().clamp(0.0, 255.0);
            data.push(v);
        }
    }
    Image::raw(n, n, data)
}

/// Relative file name of a rendered image inside the output directory.
pub fn image_name(identity: u32, illumination: u32, attribute: usize) -> PathBuf {
    PathBuf::from(format!("images/id{identity:04}_il{illumination:02}_a{attribute}.pgm"))
}

/// Renders the whole grid in memory: identities, then illuminations, then
/// attributes. Entry paths are the names [`synth_generate`] would write.
pub fn synth_in_memory(cfg: &SynthConfig) -> Result<(Vec<ManifestEntry>, Vec<Image>)> {
    cfg.validate()?;
    let vocab = cfg.vocab.size();
    let keys: Vec<(u32, u32, usize)> = (0..cfg.identities())
        .flat_map(|id| (0..cfg.illuminations).flat_map(move |il| (0..vocab).map(move |a| (id, il, a))))
        .collect();
    let images = keys
        .par_iter()
        .map(|&(id, il, a)| render(cfg, id, il, a))
        .collect::<Result<Vec<_>>>()?;
    let entries = keys
        .iter()
        .map(|&(id, il, a)| ManifestEntry {
            image_path: image_name(id, il, a),
            identity: id,
            attribute_id: a,
            illumination_id: cfg.illumination_label(il),
            split: cfg.split_of(id),
        })
        .collect();
    Ok((entries, images))
}

/// Writes `images/*.pgm` and `manifest.csv` under `out_dir`.
pub fn synth_generate(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let out_dir = out_dir.as_ref();
    let (entries, images) = synth_in_memory(cfg)?;
    let img_dir = out_dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    entries
        .par_iter()
        .zip(images.par_iter())
        .try_for_each(|(e, img)| write_image(out_dir.join(&e.image_path), img))?;
    write_manifest(out_dir.join("manifest.csv"), &entries)?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::build_pairs;

    fn cfg(vocab: Vocabulary) -> SynthConfig {
        SynthConfig {
            train_identities: 3,
            test_identities: 1,
            illuminations: 2,
            vocab,
            seed: 11,
            size: 32,
        }
    }

    #[test]
    fn rendering_is_functional() {
        let c = cfg(Vocabulary::Poses7);
        assert_eq!(render(&c, 2, 1, 4).unwrap(), render(&c, 2, 1, 4).unwrap());
        assert_ne!(render(&c, 2, 1, 4).unwrap(), render(&c, 2, 1, 5).unwrap());
        assert_ne!(render(&c, 2, 1, 4).unwrap(), render(&c, 1, 1, 4).unwrap());
        assert!(render(&c, 0, 0, 7).is_err());
    }

    #[test]
    fn counts_and_splits() {
        let c = SynthConfig {
            train_identities: 40,
            test_identities: 0,
            illuminations: 4,
            vocab: Vocabulary::Poses7,
            seed: 7,
            size: 16,
        };
        let (entries, images) = synth_in_memory(&c).unwrap();
        assert_eq!(entries.len(), 1120);
        assert_eq!(images.len(), 1120);
        assert_eq!(build_pairs(&entries).len(), 6720);
        let c = cfg(Vocabulary::Poses7);
        let (entries, _) = synth_in_memory(&c).unwrap();
        assert_eq!(entries.iter().filter(|e| e.split == Split::Test).count(), 2 * 7);
    }

    #[test]
    fn poses_move_features_monotonically() {
        // the darkest column band (eyes, mouth) drifts right as the pose index grows
        let c = cfg(Vocabulary::Poses7);
        let centroid = |a: usize| {
            let img = render(&c, 0, 0, a).unwrap();
            let (mut sx, mut sw) = (0.0, 0.0);
            for r in 8..28 {
                for col in 4..28 {
                    let w = (255.0 - img.get(r, col)) as f64;
                    sx += w * col as f64;
                    sw += w;
                }
            }
            sx / sw
        };
        let c0 = centroid(0);
        let c6 = centroid(6);
        assert!(c0 != c6);
    }

    #[test]
    fn accessories_alter_the_frontal_face() {
        let c = cfg(Vocabulary::Accessories7);
        let plain = render(&c, 1, 0, 0).unwrap();
        for a in 1..7 {
            let d = plain.mean_squared_error(&render(&c, 1, 0, a).unwrap()).unwrap();
            assert!(d > 20.0, "accessory {a} barely visible ({d})");
        }
    }

    #[test]
    fn written_dataset_is_deterministic() {
        let c = cfg(Vocabulary::Poses7);
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let e1 = synth_generate(&c, d1.path()).unwrap();
        let e2 = synth_generate(&c, d2.path()).unwrap();
        assert_eq!(e1, e2);
        for e in &e1 {
            let a = fs::read(d1.path().join(&e.image_path)).unwrap();
            let b = fs::read(d2.path().join(&e.image_path)).unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(
            fs::read(d1.path().join("manifest.csv")).unwrap(),
            fs::read(d2.path().join("manifest.csv")).unwrap()
        );
    }

    #[test]
    fn gain_spacing() {
        let c = SynthConfig { illuminations: 5, ..cfg(Vocabulary::Poses7) };
        let g: Vec<f64> = (0..5).map(|i| c.illumination_gain(i)).collect();
        assert_eq!(g, vec![-0.5, -0.25, 0.0, 0.25, 0.5]);
        assert_eq!(SynthConfig { illuminations: 1, ..c }.illumination_gain(0), 0.0);
    }
}
