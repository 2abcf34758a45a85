use super::unet::UNet;
use crate::error::{Error, Result};
use crate::imaging::labels::decode_label_image;
use crate::imaging::pooling::TranslationMode;
use crate::imaging::preprocess::{extract_slices, restore_mask, DEFAULT_SLICE_FRACTION};
use crate::imaging::volume::{LabelMap, Mask3, Raster, Volume, SLICE_SIZE};
use crate::translation::Generator;

/// Binary lesion mask aligned with `v`. Slices dropped by the brain-area
/// filter are predicted empty.
pub fn predict_volume(net: &UNet, v: &Volume) -> Result<Mask3> {
    let mut mask = Mask3::empty(v.dims);
    let records = match extract_slices(v, DEFAULT_SLICE_FRACTION) {
        Ok(r) => r,
        Err(Error::EmptyAfterFilter) => return Ok(mask),
        Err(e) => return Err(e),
    };
    let images: Vec<&Raster> = records.iter().map(|r| &r.image).collect();
    let preds = net.predict_batch(&images)?;
    for (rec, pred) in records.iter().zip(preds) {
        let native = restore_mask(rec, &pred, SLICE_SIZE, SLICE_SIZE);
        mask.slice_mut(rec.provenance.slice_index).copy_from_slice(&native);
    }
    Ok(mask)
}

/// Runs the label-producing generator of a Label2Image pair on an image and
/// quantizes its output into tissue classes.
pub fn unsupervised_segment(g: &Generator, image: &Raster) -> Result<LabelMap> {
    if g.meta.mode != Some(TranslationMode::Label2Image) {
        return Err(Error::ModeMismatch {
            expected: TranslationMode::Label2Image.as_str().into(),
            found: g.id(),
        });
    }
    decode_label_image(&g.translate(image)?)
}
