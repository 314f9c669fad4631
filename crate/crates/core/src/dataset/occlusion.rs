use crate::error::{Error, Result};
use crate::image::{Image, Space};

/// Default eye bar on a 32-row image: rows 10 through 15.
pub const EYE_BAR_TOP: usize = 10;
pub const EYE_BAR_HEIGHT: usize = 6;

/// Blacks out rows `[bar_top, bar_top + bar_height)` of a raw image.
pub fn apply_eye_occlusion(img: &Image, bar_top: usize, bar_height: usize) -> Result<Image> {
    if img.space() != Space::Raw {
        return Err(Error::Space("occlusion applies to raw images".into()));
    }
    let end = bar_top
        .checked_add(bar_height)
        .filter(|&e| e <= img.height())
        .ok_or_else(|| {
            Error::invalid(format!(
                "bar rows {bar_top}..{bar_top}+{bar_height} fall outside a {}-row image",
                img.height()
            ))
        })?;
    Ok(img.map_rows(bar_top..end, 0.0))
}

/// The default bar scaled to the image height.
pub fn default_eye_bar(height: usize) -> (usize, usize) {
    let top = EYE_BAR_TOP * height / 32;
    let h = (EYE_BAR_HEIGHT * height).div_ceil(32).max(1);
    (top, h)
}
