//! Binary 8-bit PGM (`P5`, maxval 255).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image, IMAGE_SIZE};

/// `"P5\n{w} {h}\n255\n"` followed by the row-major payload.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::invalid(format!(
            "{width}x{height} PGM needs {} bytes, got {}",
            width * height,
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

/// Parses a binary PGM, returning `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P5" {
        return Err(format!("wrong magic {magic:?}, expected \"P5\""));
    }
    let mut number = |what: &str| -> std::result::Result<usize, String> {
        let t = token()?;
        t.parse::<usize>().map_err(|_| format!("bad {what} {t:?}"))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}, expected 255"));
    }
    if width == 0 || height == 0 {
        return Err("zero image extent".into());
    }
    // exactly one whitespace byte separates the header from the payload
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err("truncated header".into()),
    }
    let need = width * height;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(format!("truncated payload: {} of {need} bytes", payload.len()));
    }
    Ok((width, height, payload[..need].to_vec()))
}

/// Reads a PGM of any size as a raw image.
pub fn read_image_any(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, px) = decode_pgm(&bytes).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })?;
    Image::from_bytes(h, w, &px)
}

/// Reads a 32x32 training image.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let img = read_image_any(path)?;
    if (img.height(), img.width()) != (IMAGE_SIZE, IMAGE_SIZE) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!(
                "training images must be {IMAGE_SIZE}x{IMAGE_SIZE}, got {}x{}",
                img.width(),
                img.height()
            ),
        });
    }
    Ok(img)
}

pub fn write_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pgm(img.width(), img.height(), &img.to_bytes()?)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Tiles equally sized raw images into one grid, `rows[r][c]` at row `r`,
/// column `c`, separated by a `gap`-pixel white gutter. Short rows are
/// padded with white.
pub fn montage(rows: &[Vec<Image>], gap: usize) -> Result<Image> {
    let first = rows
        .iter()
        .flatten()
        .next()
        .ok_or_else(|| Error::invalid("montage needs at least one image"))?;
    let (th, tw) = (first.height(), first.width());
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let h = rows.len() * th + rows.len().saturating_sub(1) * gap;
    let w = cols * tw + cols.saturating_sub(1) * gap;
    let mut data = vec![255.0f64; h * w];
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            if (img.height(), img.width()) != (th, tw) {
                return Err(Error::ShapeMismatch {
                    op: "montage tile",
                    expected: vec![th, tw],
                    found: vec![img.height(), img.width()],
                });
            }
            let bytes = img.to_bytes()?;
            let (oy, ox) = (r * (th + gap), c * (tw + gap));
            for y in 0..th {
                for x in 0..tw {
                    data[(oy + y) * w + ox + x] = bytes[y * tw + x] as f64;
                }
            }
        }
    }
    Image::raw(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let bytes = encode_pgm(32, 32, &[7u8; 1024]).unwrap();
        assert!(bytes.starts_with(b"P5\n32 32\n255\n"));
        assert_eq!(bytes.len(), b"P5\n32 32\n255\n".len() + 1024);
    }

    #[test]
    fn decode_rejections() {
        assert!(decode_pgm(b"P2\n1 1\n255\n\x00").unwrap_err().contains("magic"));
        assert!(decode_pgm(b"P5\n1 1\n65535\n\x00\x00").unwrap_err().contains("maxval"));
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00").unwrap_err().contains("truncated"));
        assert!(decode_pgm(b"P5\n2").is_err());
    }

    #[test]
    fn comments_in_header() {
        let (w, h, px) = decode_pgm(b"P5\n# made by hand\n2 1\n255\n\x01\x02").unwrap();
        assert_eq!((w, h, px), (2, 1, vec![1, 2]));
    }

    #[test]
    fn non_training_size_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("small.pgm");
        write_image(&p, &Image::filled(16, 16, 3)).unwrap();
        assert!(read_image(&p).is_err());
        assert_eq!(read_image_any(&p).unwrap(), Image::filled(16, 16, 3));
    }

    #[test]
    fn montage_extents() {
        let tile = Image::filled(4, 4, 0);
        let m = montage(&[vec![tile.clone(), tile.clone(), tile.clone()], vec![tile]], 1).unwrap();
        assert_eq!((m.height(), m.width()), (9, 14));
        assert_eq!(m.get(0, 4), 255.0);
        assert_eq!(m.get(5, 5), 255.0);
        assert_eq!(m.get(5, 0), 0.0);
    }
}
