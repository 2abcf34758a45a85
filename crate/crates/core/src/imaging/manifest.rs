//! Tab-separated slice manifests.
//!
//! One record per slice. Relative paths resolve against the directory the
//! manifest was read from.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::labels::{decode_label_image, encode_label_image};
use super::preprocess::{extract_slices, Provenance, SliceRecord, DEFAULT_SLICE_FRACTION};
use super::tiles::{read_raster, write_raster};
use super::volume::Volume;
use crate::error::{Error, Result};

pub const HEADER: &str = "dataset\tvendor\tsubject\tslice\timage\tlabel\trows\tcols\tlabel_use\torigin";

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DomainKey {
    pub dataset: String,
    pub vendor: String,
}

impl DomainKey {
    pub fn new(dataset: impl Into<String>, vendor: impl Into<String>) -> Self {
        Self {
            dataset: dataset.into(),
            vendor: vendor.into(),
        }
    }
}

impl fmt::Display for DomainKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.dataset, self.vendor)
    }
}

impl FromStr for DomainKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((d, v)) if !d.is_empty() && !v.is_empty() => Ok(Self::new(d, v)),
            _ => Err(Error::UnknownDomain(s.to_string())),
        }
    }
}

/// Whether an entry's label may feed training or is reserved for evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelUse {
    #[default]
    Train,
    ValidationOnly,
}

impl LabelUse {
    fn as_str(self) -> &'static str {
        match self {
            LabelUse::Train => "train",
            LabelUse::ValidationOnly => "validation",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub domain: DomainKey,
    pub subject: String,
    pub slice_index: usize,
    pub image: PathBuf,
    pub label: Option<PathBuf>,
    /// `(rows, cols)` of the slice before resampling.
    pub original_shape: (usize, usize),
    pub label_use: LabelUse,
    /// Free-form lineage, e.g. the translation mode and generator that produced the image.
    pub origin: Option<String>,
}

impl ManifestEntry {
    pub fn provenance(&self) -> Provenance {
        Provenance {
            dataset: self.domain.dataset.clone(),
            vendor: self.domain.vendor.clone(),
            subject: self.subject.clone(),
            slice_index: self.slice_index,
        }
    }

    pub fn describe(&self) -> String {
        format!("{} subject {} slice {}", self.domain, self.subject, self.slice_index)
    }
}

/// How a consumer intends to use the labels it loads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelAccess {
    /// Images only; labels are never read.
    ImagesOnly,
    /// Labels feed a training loop; validation-only labels are refused.
    Training,
    /// Labels used for scoring.
    Evaluation,
}

#[derive(Clone, Debug, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative paths resolve against.
    pub root: PathBuf,
}

impl PartialEq for DatasetManifest {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        Self {
            entries,
            root: PathBuf::new(),
        }
    }

    pub fn with_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.root = root.into();
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Slice count per domain key.
    pub fn counts(&self) -> BTreeMap<DomainKey, usize> {
        let mut m = BTreeMap::new();
        for e in &self.entries {
            *m.entry(e.domain.clone()).or_insert(0) += 1;
        }
        m
    }

    /// Domain keys in first-appearance order.
    pub fn domains(&self) -> Vec<DomainKey> {
        let mut seen = Vec::new();
        for e in &self.entries {
            if !seen.contains(&e.domain) {
                seen.push(e.domain.clone());
            }
        }
        seen
    }

    pub fn filter(&self, mut pred: impl FnMut(&ManifestEntry) -> bool) -> Self {
        Self {
            entries: self.entries.iter().filter(|e| pred(e)).cloned().collect(),
            root: self.root.clone(),
        }
    }

    /// Appends another manifest, rebasing its relative paths onto this root.
    pub fn extend(&mut self, other: &DatasetManifest) {
        for e in &other.entries {
            let mut e = e.clone();
            if other.root != self.root {
                e.image = other.resolve(&e.image);
                e.label = e.label.as_deref().map(|p| other.resolve(p));
            }
            self.entries.push(e);
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() || self.root.as_os_str().is_empty() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Loads one entry into a slice record honouring the label policy.
    pub fn load(&self, e: &ManifestEntry, access: LabelAccess) -> Result<SliceRecord> {
        let image = read_raster(&self.resolve(&e.image))?;
        let label = match (access, &e.label) {
            (LabelAccess::ImagesOnly, _) => None,
            (LabelAccess::Training, Some(_)) if e.label_use == LabelUse::ValidationOnly => {
                return Err(Error::PolicyViolation(format!(
                    "labels of {} are reserved for validation",
                    e.describe()
                )))
            }
            (LabelAccess::Training, None) => return Err(Error::Unlabeled(e.describe())),
            (_, Some(p)) => Some(decode_label_image(&read_raster(&self.resolve(p))?)?),
            (LabelAccess::Evaluation, None) => None,
        };
        SliceRecord::new(image, label, e.provenance(), e.original_shape)
    }

    pub fn load_all(&self, access: LabelAccess) -> Result<Vec<SliceRecord>> {
        self.entries.iter().map(|e| self.load(e, access)).collect()
    }
}

fn check_field(s: &str, what: &str) -> Result<()> {
    if s.is_empty() || s.contains(['\t', '\n', '\r']) || s == "-" {
        return Err(Error::invalid(format!("{what} {s:?} cannot be stored in a manifest field")));
    }
    Ok(())
}

pub fn format_manifest(m: &DatasetManifest) -> Result<String> {
    let mut out = String::from(HEADER);
    out.push('\n');
    for e in &m.entries {
        check_field(&e.domain.dataset, "dataset")?;
        check_field(&e.domain.vendor, "vendor")?;
        check_field(&e.subject, "subject")?;
        let image = e.image.to_string_lossy();
        check_field(&image, "image path")?;
        let label = match &e.label {
            Some(p) => {
                let s = p.to_string_lossy().into_owned();
                check_field(&s, "label path")?;
                s
            }
            None => "-".into(),
        };
        let origin = match &e.origin {
            Some(o) => {
                check_field(o, "origin")?;
                o.as_str()
            }
            None => "-",
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            e.domain.dataset,
            e.domain.vendor,
            e.subject,
            e.slice_index,
            image,
            label,
            e.original_shape.0,
            e.original_shape.1,
            e.label_use.as_str(),
            origin
        ));
    }
    Ok(out)
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<DatasetManifest> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == HEADER => {}
        _ => return Err(err(1, "missing or malformed header".into())),
    }
    let mut entries = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 10 {
            return Err(err(n, format!("expected 10 fields, found {}", f.len())));
        }
        let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| err(n, format!("{what} {s:?} is not a count")));
        let label_use = match f[8] {
            "train" => LabelUse::Train,
            "validation" => LabelUse::ValidationOnly,
            other => return Err(err(n, format!("unknown label_use {other:?}"))),
        };
        let opt = |s: &str| (s != "-").then(|| s.to_string());
        entries.push(ManifestEntry {
            domain: DomainKey::new(f[0], f[1]),
            subject: f[2].to_string(),
            slice_index: num(f[3], "slice")?,
            image: PathBuf::from(f[4]),
            label: opt(f[5]).map(PathBuf::from),
            original_shape: (num(f[6], "rows")?, num(f[7], "cols")?),
            label_use,
            origin: opt(f[9]),
        });
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(DatasetManifest { entries, root })
}

pub fn write_manifest(path: &Path, m: &DatasetManifest) -> Result<()> {
    std::fs::write(path, format_manifest(m)?).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

/// Extracts the kept slices of normalized volumes into `out/tiles` and
/// writes `out/manifest.tsv`. Volume metadata supplies the domain.
pub fn tile_volumes(vols: &[Volume], out: &Path, label_use: LabelUse) -> Result<DatasetManifest> {
    let tiles = out.join("tiles");
    std::fs::create_dir_all(&tiles).map_err(|e| Error::io(&tiles, e))?;
    let mut entries = Vec::new();
    for v in vols {
        let domain = DomainKey::new(&v.meta.dataset, &v.meta.vendor);
        let subj = &v.meta.subject;
        for rec in extract_slices(v, DEFAULT_SLICE_FRACTION)? {
            let z = rec.provenance.slice_index;
            let img = format!("tiles/{subj}_{z:03}.img.tile");
            write_raster(&out.join(&img), &rec.image)?;
            let label = match &rec.label {
                Some(l) => {
                    let p = format!("tiles/{subj}_{z:03}.lab.tile");
                    write_raster(&out.join(&p), &encode_label_image(l))?;
                    Some(p.into())
                }
                None => None,
            };
            entries.push(ManifestEntry {
                domain: domain.clone(),
                subject: subj.clone(),
                slice_index: z,
                image: img.into(),
                label,
                original_shape: rec.original_shape,
                label_use,
                origin: None,
            });
        }
    }
    let m = DatasetManifest::new(entries).with_root(out);
    write_manifest(&out.join("manifest.tsv"), &m)?;
    Ok(m)
}
