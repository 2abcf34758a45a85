//! Source/target pools for translation training and synthetic pools for
//! segmentation training.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, DomainKey, LabelUse, ManifestEntry};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranslationMode {
    Image2Image,
    Scan2Scan,
    Label2Image,
    Syn2Image,
}

impl TranslationMode {
    pub const ALL: [TranslationMode; 4] = [Self::Image2Image, Self::Scan2Scan, Self::Label2Image, Self::Syn2Image];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Image2Image => "image2image",
            Self::Scan2Scan => "scan2scan",
            Self::Label2Image => "label2image",
            Self::Syn2Image => "syn2image",
        }
    }

    /// Whether the source images are encoded label rasters.
    pub fn label_source(self) -> bool {
        matches!(self, Self::Label2Image | Self::Syn2Image)
    }
}

impl fmt::Display for TranslationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TranslationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownMode(s.to_string()))
    }
}

/// A whole dataset (`MICCAI`) or one vendor of it (`MICCAI:GE`).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DomainSelector {
    pub dataset: String,
    pub vendor: Option<String>,
}

impl DomainSelector {
    pub fn dataset(name: impl Into<String>) -> Self {
        Self {
            dataset: name.into(),
            vendor: None,
        }
    }

    pub fn vendor(dataset: impl Into<String>, vendor: impl Into<String>) -> Self {
        Self {
            dataset: dataset.into(),
            vendor: Some(vendor.into()),
        }
    }

    pub fn matches(&self, k: &DomainKey) -> bool {
        k.dataset == self.dataset && self.vendor.as_ref().is_none_or(|v| *v == k.vendor)
    }

    pub fn key(&self) -> Option<DomainKey> {
        self.vendor.as_ref().map(|v| DomainKey::new(&self.dataset, v))
    }
}

impl fmt::Display for DomainSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.vendor {
            Some(v) => write!(f, "{}:{v}", self.dataset),
            None => f.write_str(&self.dataset),
        }
    }
}

impl FromStr for DomainSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if !s.is_empty() => Ok(Self::dataset(s)),
            Some((d, v)) if !d.is_empty() && !v.is_empty() => Ok(Self::vendor(d, v)),
            _ => Err(Error::UnknownDomain(s.to_string())),
        }
    }
}

fn select(m: &DatasetManifest, sel: &DomainSelector) -> Result<DatasetManifest> {
    let out = m.filter(|e| sel.matches(&e.domain));
    if out.is_empty() {
        return Err(Error::UnknownDomain(sel.to_string()));
    }
    Ok(out)
}

fn require_vendor(sel: &DomainSelector, mode: TranslationMode, role: &str) -> Result<()> {
    if sel.vendor.is_none() {
        return Err(Error::invalid(format!("{mode} needs a single {role} vendor, got {sel}")));
    }
    Ok(())
}

/// Label raster entries of `m` re-expressed as source images.
pub fn label_images(m: &DatasetManifest) -> Result<DatasetManifest> {
    let mut out = m.clone();
    for e in out.entries.iter_mut() {
        let label = e.label.clone().ok_or_else(|| Error::Unlabeled(e.describe()))?;
        if e.label_use == LabelUse::ValidationOnly {
            return Err(Error::PolicyViolation(format!("labels of {} are reserved for validation", e.describe())));
        }
        e.image = label;
    }
    Ok(out)
}

/// Builds the (source, target) pair for one translation job.
///
/// Target entries lose their labels: translation never reads them.
/// `synthetic` supplies the source set for [`TranslationMode::Syn2Image`].
pub fn pool_domains(
    m: &DatasetManifest,
    mode: TranslationMode,
    source: &DomainSelector,
    target: &DomainSelector,
    synthetic: Option<&DatasetManifest>,
) -> Result<(DatasetManifest, DatasetManifest)> {
    require_vendor(target, mode, "target")?;
    let mut tgt = select(m, target)?;
    for e in tgt.entries.iter_mut() {
        e.label = None;
    }
    let src = match mode {
        TranslationMode::Image2Image => {
            if source.vendor.is_some() {
                return Err(Error::invalid(format!("image2image pools a whole dataset, got {source}")));
            }
            select(m, source)?
        }
        TranslationMode::Scan2Scan => {
            require_vendor(source, mode, "source")?;
            select(m, source)?
        }
        TranslationMode::Label2Image => label_images(&select(m, source)?)?,
        TranslationMode::Syn2Image => {
            let syn = synthetic.ok_or_else(|| Error::invalid("syn2image needs a synthetic label manifest"))?;
            if syn.is_empty() {
                return Err(Error::UnknownDomain("synthetic labels".into()));
            }
            label_images(syn)?
        }
    };
    Ok((src, tgt))
}

/// Concatenates generated sets into one segmentation training pool.
pub fn merge_pools(sets: &[&DatasetManifest]) -> DatasetManifest {
    let mut out = DatasetManifest::default();
    for s in sets {
        out.extend(s);
    }
    out
}

/// Placeholder entries for count-only planning.
pub fn synthetic_entries(domain: &DomainKey, n: usize) -> Vec<ManifestEntry> {
    (0..n)
        .map(|i| ManifestEntry {
            domain: domain.clone(),
            subject: format!("s{i:05}"),
            slice_index: 0,
            image: format!("{}_{}_{i}.tile", domain.dataset, domain.vendor).into(),
            label: Some(format!("{}_{}_{i}.label.tile", domain.dataset, domain.vendor).into()),
            original_shape: (256, 256),
            label_use: LabelUse::Train,
            origin: None,
        })
        .collect()
}
