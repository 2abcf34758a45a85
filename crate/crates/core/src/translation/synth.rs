use std::path::Path;

use super::train::{raster_tensor, Generator};
use crate::error::{Error, Result};
use crate::imaging::manifest::{write_manifest, DatasetManifest, DomainKey, LabelAccess, LabelUse, ManifestEntry};
use crate::imaging::preprocess::SliceRecord;
use crate::imaging::tiles::write_raster;
use crate::imaging::volume::Raster;
use crate::nn::Tensor4;

const BATCH: usize = 4;

fn translate_all(g: &Generator, images: &[&Raster]) -> Result<Vec<Raster>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(BATCH) {
        let parts: Vec<Tensor4<f32>> = chunk.iter().map(|r| raster_tensor(r)).collect();
        let x = Tensor4::stack(&parts.iter().collect::<Vec<_>>())?;
        let y = g.forward(&x)?;
        for n in 0..y.batch() {
            let (h, w) = (y.height(), y.width());
            out.push(Raster::new(h, w, y.sample(n).to_vec())?);
        }
    }
    Ok(out)
}

/// In-memory synthesis: each record's image is translated and its label kept.
pub fn translate_records(g: &Generator, source: &[SliceRecord]) -> Result<Vec<SliceRecord>> {
    if let Some(r) = source.iter().find(|r| r.label.is_none()) {
        return Err(Error::Unlabeled(r.describe()));
    }
    let images: Vec<&Raster> = source.iter().map(|r| &r.image).collect();
    let translated = translate_all(g, &images)?;
    Ok(source
        .iter()
        .zip(translated)
        .map(|(r, image)| SliceRecord { image, ..r.clone() })
        .collect())
}

/// Translates every source entry, pairing output `i` with source label `i`.
///
/// Tiles go to `out_dir/tiles`; labels are referenced in place. The returned
/// manifest is also written to `out_dir/manifest.tsv`.
pub fn generate_synthetic(g: &Generator, source: &DatasetManifest, target: &DomainKey, out_dir: &Path) -> Result<DatasetManifest> {
    if let Some(e) = source.entries.iter().find(|e| e.label.is_none()) {
        return Err(Error::Unlabeled(e.describe()));
    }
    let tiles = out_dir.join("tiles");
    std::fs::create_dir_all(&tiles).map_err(|e| Error::io(&tiles, e))?;
    let mode = g.meta.mode.map(|m| m.as_str()).unwrap_or("none");
    let domain = DomainKey::new(format!("SYN-{mode}"), &target.vendor);
    let origin = g.id();
    let mut entries = Vec::with_capacity(source.len());
    for (ci, chunk) in source.entries.chunks(BATCH).enumerate() {
        let imgs = chunk
            .iter()
            .map(|e| source.load(e, LabelAccess::ImagesOnly).map(|r| r.image))
            .collect::<Result<Vec<_>>>()?;
        let out = translate_all(g, &imgs.iter().collect::<Vec<_>>())?;
        for (j, (e, img)) in chunk.iter().zip(out).enumerate() {
            let i = ci * BATCH + j;
            let rel = format!("tiles/{i:06}.img.tile");
            write_raster(&out_dir.join(&rel), &img)?;
            let label = e.label.as_deref().map(|p| {
                let abs = source.resolve(p);
                std::path::absolute(&abs).unwrap_or(abs)
            });
            entries.push(ManifestEntry {
                domain: domain.clone(),
                subject: e.subject.clone(),
                slice_index: e.slice_index,
                image: rel.into(),
                label,
                original_shape: e.original_shape,
                label_use: LabelUse::Train,
                origin: Some(origin.clone()),
            });
        }
    }
    let m = DatasetManifest::new(entries).with_root(out_dir);
    write_manifest(&out_dir.join("manifest.tsv"), &m)?;
    Ok(m)
}
