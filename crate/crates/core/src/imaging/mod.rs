//! Volume ingestion, slice preprocessing, label encoding, augmentation and
//! dataset pooling.

pub mod augment;
pub mod labels;
pub mod manifest;
pub mod nifti;
pub mod pooling;
pub mod preprocess;
pub mod resample;
pub mod tiles;
pub mod volume;

pub use augment::{augment, AugmentConfig, Transform2};
pub use labels::{decode_label_image, encode_label_image};
pub use manifest::{read_manifest, tile_volumes, write_manifest, DatasetManifest, DomainKey, LabelAccess, LabelUse, ManifestEntry};
pub use nifti::load_nifti;
pub use pooling::{merge_pools, pool_domains, DomainSelector, TranslationMode};
pub use preprocess::{extract_slices, normalize_volume, restore_shape, Provenance, SliceRecord, DEFAULT_SLICE_FRACTION};
pub use volume::{LabelMap, Mask3, Raster, Tissue, Volume, VolumeMeta, SLICE_SIZE};
