use super::volume::{LabelMap, Raster, Tissue};
use crate::error::{Error, Result};

/// Gray level of each tissue class in an encoded label image.
pub const BACKGROUND_LEVEL: f32 = 0.0;
pub const BRAIN_LEVEL: f32 = 0.5;
pub const LESION_LEVEL: f32 = 1.0;

/// Decoding thresholds: below the first is background, at or above the second lesion.
pub const LOWER_THRESHOLD: f32 = 0.25;
pub const UPPER_THRESHOLD: f32 = 0.75;

pub fn level(t: Tissue) -> f32 {
    match t {
        Tissue::Background => BACKGROUND_LEVEL,
        Tissue::Brain => BRAIN_LEVEL,
        Tissue::Lesion => LESION_LEVEL,
    }
}

/// Quantizes one intensity to its tissue class.
#[inline]
pub fn quantize(v: f32) -> Tissue {
    if v < LOWER_THRESHOLD {
        Tissue::Background
    } else if v < UPPER_THRESHOLD {
        Tissue::Brain
    } else {
        Tissue::Lesion
    }
}

pub fn encode_label_image(label: &LabelMap) -> Raster {
    Raster {
        rows: label.rows,
        cols: label.cols,
        data: label.data.iter().map(|&t| level(t)).collect(),
    }
}

/// Encodes raw numeric codes (0 background, 1 brain, 2 lesion).
pub fn encode_label_codes(rows: usize, cols: usize, codes: &[u8]) -> Result<Raster> {
    let data = codes
        .iter()
        .map(|&c| Tissue::from_code(c).map(level))
        .collect::<Result<Vec<_>>>()?;
    Raster::new(rows, cols, data)
}

/// Inverse of [`encode_label_image`]; also quantizes generator outputs.
pub fn decode_label_image(image: &Raster) -> Result<LabelMap> {
    let data = image
        .data
        .iter()
        .map(|&v| {
            if v.is_finite() {
                Ok(quantize(v))
            } else {
                Err(Error::UnknownLabel(v as f64))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    LabelMap::new(image.rows, image.cols, data)
}
