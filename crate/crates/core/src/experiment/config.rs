//! TOML experiment configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::segmentation::SegTrainConfig;
use crate::translation::{CycleTrainConfig, DcganConfig};

/// Which synthetic segmentation pools to assemble per mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    /// One pool per target vendor.
    Single,
    /// One pool across every target vendor.
    Mixed,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Slice manifests holding both the source and the target dataset.
    pub manifests: Vec<PathBuf>,
    pub source: String,
    pub target: String,
    /// Labelled target-scanner slices from subjects disjoint from the
    /// evaluation set; enables the upper-bound job.
    pub target_train: Option<PathBuf>,
}

/// A hand-written pool whose members are job ids (translation jobs or
/// other pools).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomPool {
    pub name: String,
    pub members: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out: PathBuf,
    pub seed: u64,
    /// Mode shorthands, each expanded over every vendor pair it needs.
    pub modes: Vec<String>,
    pub pools: Vec<PoolKind>,
    pub bounds: bool,
    /// Segmentation job per pool.
    pub segment: bool,
    pub fid_taps: Vec<usize>,
    /// Optional checkpoint for the FID feature extractor.
    pub feature_weights: Option<PathBuf>,
    /// Voxel spacing used when scoring slice stacks.
    pub eval_spacing: [f64; 3],
    /// Embed pool and target features with PCA and t-SNE.
    pub embedding: bool,
    pub dcgan_samples: usize,
    pub data: DataConfig,
    pub translation: CycleTrainConfig,
    pub segmentation: SegTrainConfig,
    pub dcgan: DcganConfig,
    /// Per-job seed overrides keyed by job id.
    pub seeds: BTreeMap<String, u64>,
    #[serde(rename = "pool")]
    pub custom_pools: Vec<CustomPool>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs"),
            seed: 0,
            modes: Vec::new(),
            pools: vec![PoolKind::Single, PoolKind::Mixed],
            bounds: false,
            segment: true,
            fid_taps: crate::metrics::TAPS.to_vec(),
            feature_weights: None,
            eval_spacing: [1.0, 1.0, 3.0],
            embedding: false,
            dcgan_samples: 5000,
            data: DataConfig::default(),
            translation: CycleTrainConfig::default(),
            segmentation: SegTrainConfig::default(),
            dcgan: DcganConfig::default(),
            seeds: BTreeMap::new(),
            custom_pools: Vec::new(),
        }
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::path::absolute(&joined).unwrap_or(joined)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let location = e
                .span()
                .map(|s| {
                    let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                    format!("line {line}")
                })
                .unwrap_or_else(|| "config".into());
            Error::config(location, e.message().to_string())
        })
    }

    /// Reads a config and resolves its relative paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        self.out = absolute(base, &self.out);
        for m in &mut self.data.manifests {
            *m = absolute(base, m);
        }
        if let Some(t) = &mut self.data.target_train {
            *t = absolute(base, t);
        }
        if let Some(w) = &mut self.feature_weights {
            *w = absolute(base, w);
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    /// Digest of the canonical serialization; independent of the key order
    /// and formatting of the source text.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 3
modes = ["label2image", "scan2scan"]
bounds = true

[data]
manifests = ["a/manifest.tsv"]
source = "SRC"
target = "TGT"

[translation]
epochs = 4
decay_start = 2

[seeds]
"translate/label2image/SRC->TGT:A" = 11
"#;

    #[test]
    fn hash_survives_reserialization() {
        let a = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(a.translation.epochs, 4);
        assert_eq!(a.translation.batch, 4);
        let b = ExperimentConfig::parse(&a.to_toml().unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.seed = 4;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn errors_carry_a_location() {
        let err = ExperimentConfig::parse("seed = 1\nbogus = 2\n").unwrap_err();
        match err {
            Error::Config { location, .. } => assert_eq!(location, "line 2"),
            other => panic!("{other}"),
        }
        assert!(ExperimentConfig::parse("").is_ok());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        cfg.resolve_paths(Path::new("/etc/exp"));
        assert_eq!(cfg.data.manifests[0], PathBuf::from("/etc/exp/a/manifest.tsv"));
        assert_eq!(cfg.out, PathBuf::from("/etc/exp/runs"));
    }
}
