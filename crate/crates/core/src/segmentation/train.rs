use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::generalized_dice_var;
use super::unet::{init_unet, unet_forward, UNet, UNetConfig};
use crate::error::{Error, Result};
use crate::imaging::augment::{augment, AugmentConfig};
use crate::imaging::manifest::{DatasetManifest, LabelAccess};
use crate::imaging::preprocess::SliceRecord;
use crate::imaging::volume::SLICE_SIZE;
use crate::nn::{AdamConfig, ParamSet, Tape, Tensor4};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub unet: UNetConfig,
    pub augment: Option<AugmentConfig>,
    pub seed: u64,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch: 8,
            lr: 1e-3,
            beta1: 0.5,
            beta2: 0.999,
            unet: UNetConfig::default(),
            augment: None,
            seed: 0,
        }
    }
}

impl SegTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::invalid("epochs and batch must be positive"));
        }
        self.unet.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        self.adam().validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub steps: usize,
}

/// Loss log plus a count of consumed samples per `dataset:vendor`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SegHistory {
    pub epochs: Vec<SegEpoch>,
    pub consumed: BTreeMap<String, usize>,
}

impl SegHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,steps\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.steps));
        }
        s
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

/// Supervised training on lesion targets. Batches follow a per-epoch
/// shuffle; the last batch of an epoch may be short.
pub fn train_segmentation(cfg: &SegTrainConfig, records: &[SliceRecord], out_dir: Option<&Path>) -> Result<(UNet, SegHistory)> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::invalid("segmentation training set is empty"));
    }
    let targets = records.iter().map(|r| r.lesion_target()).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params: ParamSet<f32> = init_unet(&cfg.unet, &mut rng);
    let adam = cfg.adam();
    let mut history = SegHistory::default();
    let mut order: Vec<usize> = (0..records.len()).collect();
    let px = SLICE_SIZE * SLICE_SIZE;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0;
        for (step, chunk) in order.chunks(cfg.batch).enumerate() {
            let mut images = Vec::with_capacity(chunk.len() * px);
            let mut target = Vec::with_capacity(chunk.len() * px);
            for &i in chunk {
                let rec = &records[i];
                match &cfg.augment {
                    Some(a) => {
                        let aug = augment(rec, a, &mut rng);
                        images.extend_from_slice(&aug.image.data);
                        target.extend(aug.lesion_target()?);
                    }
                    None => {
                        images.extend_from_slice(&rec.image.data);
                        target.extend_from_slice(&targets[i]);
                    }
                }
                let p = &rec.provenance;
                *history.consumed.entry(format!("{}:{}", p.dataset, p.vendor)).or_default() += 1;
            }
            let x = Tensor4::from_vec([chunk.len(), 1, SLICE_SIZE, SLICE_SIZE], images)?;
            let tape = Tape::new();
            let bound = params.bind(&tape, true);
            let probs = unet_forward(&cfg.unet, &bound, tape.constant(x))?;
            let loss = generalized_dice_var(probs, &target)?;
            let v = loss.item() as f64;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    term: "generalized_dice".into(),
                    epoch,
                    step,
                    value: v,
                });
            }
            let mut grads = tape.backward(loss)?;
            params.adam_step(&bound.gradients(&mut grads), &adam)?;
            total += v;
            steps += 1;
        }
        history.epochs.push(SegEpoch {
            epoch,
            loss: total / steps as f64,
            steps,
        });
    }

    let net = UNet::new(cfg.unet, params);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        net.save(&dir.join("unet.ckpt"))?;
        let p = dir.join("seg_history.csv");
        std::fs::write(&p, history.to_csv()).map_err(|e| Error::io(p, e))?;
    }
    Ok((net, history))
}

/// Loads a manifest under the training label policy and trains on it.
pub fn train_segmentation_manifest(cfg: &SegTrainConfig, m: &DatasetManifest, out_dir: Option<&Path>) -> Result<(UNet, SegHistory)> {
    train_segmentation(cfg, &m.load_all(LabelAccess::Training)?, out_dir)
}

pub struct BoundModels {
    pub lower: (UNet, SegHistory),
    pub upper: (UNet, SegHistory),
}

/// Lower bound: source domain only. Upper bound: target training split only.
///
/// The target evaluation split must share no subject with the target
/// training split.
pub fn train_bounds(
    cfg: &SegTrainConfig,
    source: &DatasetManifest,
    target_train: &DatasetManifest,
    target_eval: &DatasetManifest,
    out_dir: Option<&Path>,
) -> Result<BoundModels> {
    for e in &target_eval.entries {
        if target_train.entries.iter().any(|t| t.domain == e.domain && t.subject == e.subject) {
            return Err(Error::PolicyViolation(format!(
                "subject {} of {} appears in both target training and evaluation splits",
                e.subject, e.domain
            )));
        }
    }
    let src_domains = source.domains();
    if let Some(d) = target_train.domains().iter().find(|d| src_domains.contains(d)) {
        return Err(Error::PolicyViolation(format!("domain {d} is in both the source and target pools")));
    }
    let sub = |name: &str| out_dir.map(|d| d.join(name));
    let lower = train_segmentation_manifest(cfg, source, sub("lower").as_deref())?;
    let upper = train_segmentation_manifest(cfg, target_train, sub("upper").as_deref())?;
    Ok(BoundModels { lower, upper })
}
