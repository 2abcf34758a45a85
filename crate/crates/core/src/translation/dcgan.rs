//! Unconditional label-image synthesizer.
//!
//! A deep convolutional GAN trained on encoded label rasters downsampled to
//! its native size; samples are quantized to the three label levels and
//! upsampled by pixel replication.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::labels::{decode_label_image, encode_label_image};
use crate::imaging::manifest::{write_manifest, DatasetManifest, DomainKey, LabelUse, ManifestEntry};
use crate::imaging::resample::{resize_linear, resize_nearest};
use crate::imaging::tiles::write_raster;
use crate::imaging::volume::{LabelMap, Raster, SLICE_SIZE};
use crate::nn::layers::NORM_EPS;
use crate::nn::{checkpoint, AdamConfig, Bound, ParamSet, Tape, Tensor4, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DcganConfig {
    pub latent: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub batch: usize,
    /// Native output side; a power of two, at least 8.
    pub output: usize,
    pub ngf: usize,
    pub ndf: usize,
    pub seed: u64,
}

impl Default for DcganConfig {
    fn default() -> Self {
        Self {
            latent: 100,
            epochs: 25,
            lr: 2e-4,
            beta1: 0.5,
            batch: 64,
            output: 64,
            ngf: 64,
            ndf: 64,
            seed: 0,
        }
    }
}

impl DcganConfig {
    pub fn desk() -> Self {
        Self {
            latent: 32,
            epochs: 10,
            batch: 16,
            ngf: 16,
            ndf: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.output.is_power_of_two() || self.output < 8 || self.output > SLICE_SIZE {
            return Err(Error::invalid(format!("output size {} must be a power of two in 8..=256", self.output)));
        }
        if self.latent == 0 || self.epochs == 0 || self.batch == 0 || self.ngf == 0 || self.ndf == 0 {
            return Err(Error::invalid("latent, epochs, batch and widths must be positive"));
        }
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            ..AdamConfig::default()
        }
        .validate()
    }

    /// Number of stride-2 upsampling blocks after the 4×4 projection.
    pub fn blocks(&self) -> usize {
        self.output.trailing_zeros() as usize - 2
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

fn init_g(cfg: &DcganConfig, rng: &mut ChaCha8Rng) -> ParamSet<f32> {
    let n = cfg.blocks();
    let width = |i: usize| cfg.ngf << (n - 1 - i);
    let mut p = ParamSet::new();
    p.init_weight("proj.w", [cfg.latent, width(0), 4, 4], rng);
    for i in 0..n {
        let out = if i + 1 == n { 1 } else { width(i + 1) };
        p.init_weight(format!("up{i}.w"), [width(i), out, 4, 4], rng);
    }
    p.init_bias(format!("up{}.b", n - 1), 1);
    p
}

fn init_d(cfg: &DcganConfig, rng: &mut ChaCha8Rng) -> ParamSet<f32> {
    let n = cfg.blocks();
    let mut p = ParamSet::new();
    let mut c_in = 1;
    for i in 0..n {
        let c = cfg.ndf << i;
        p.init_weight(format!("d{i}.w"), [c, c_in, 4, 4], rng);
        c_in = c;
    }
    p.init_bias("d0.b", cfg.ndf);
    p.init_weight("logit.w", [1, c_in, 4, 4], rng);
    p.init_bias("logit.b", 1);
    p
}

fn g_forward<'t>(cfg: &DcganConfig, p: &Bound<'t, f32>, z: Var<'t, f32>) -> Result<Var<'t, f32>> {
    let n = cfg.blocks();
    let mut h = p.conv_transpose("proj", z, 1, 0)?.instance_norm(NORM_EPS).relu();
    for i in 0..n {
        h = p.conv_transpose(&format!("up{i}"), h, 2, 1)?;
        h = if i + 1 == n { h.tanh().scale(0.5).add_scalar(0.5) } else { h.instance_norm(NORM_EPS).relu() };
    }
    Ok(h)
}

fn d_forward<'t>(cfg: &DcganConfig, p: &Bound<'t, f32>, x: Var<'t, f32>) -> Result<Var<'t, f32>> {
    let mut h = x.scale(2.0).add_scalar(-1.0);
    for i in 0..cfg.blocks() {
        h = p.conv(&format!("d{i}"), h, 2, 1)?;
        if i > 0 {
            h = h.instance_norm(NORM_EPS);
        }
        h = h.leaky_relu(0.2);
    }
    p.conv("logit", h, 1, 0)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DcganEpoch {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
}

#[derive(Clone, Debug)]
pub struct Dcgan {
    pub config: DcganConfig,
    pub generator: ParamSet<f32>,
    pub discriminator: ParamSet<f32>,
    pub history: Vec<DcganEpoch>,
}

fn latent_batch(cfg: &DcganConfig, n: usize, rng: &mut ChaCha8Rng) -> Tensor4<f32> {
    Tensor4::randn([n, cfg.latent, 1, 1], 1.0, rng)
}

/// Trains the synthesizer on encoded label images.
pub fn dcgan_train(cfg: &DcganConfig, labels: &[LabelMap]) -> Result<Dcgan> {
    cfg.validate()?;
    if labels.is_empty() {
        return Err(Error::invalid("label set is empty"));
    }
    let s = cfg.output;
    let data: Vec<Vec<f32>> = labels
        .iter()
        .map(|l| {
            let enc = encode_label_image(l);
            resize_linear(&enc.data, enc.rows, enc.cols, s, s, true)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gp = init_g(cfg, &mut rng);
    let mut dp = init_d(cfg, &mut rng);
    let adam = cfg.adam();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut dsum, mut gsum, mut steps) = (0.0, 0.0, 0usize);
        for (step, chunk) in order.chunks(cfg.batch).enumerate() {
            let mut flat = Vec::with_capacity(chunk.len() * s * s);
            for &i in chunk {
                flat.extend_from_slice(&data[i]);
            }
            let real = Tensor4::from_vec([chunk.len(), 1, s, s], flat)?;
            let z = latent_batch(cfg, chunk.len(), &mut rng);

            let fake = {
                let tape = Tape::new();
                let g = gp.bind(&tape, false);
                Arc::unwrap_or_clone(g_forward(cfg, &g, tape.constant(z.clone()))?.value())
            };
            let d_loss = {
                let tape = Tape::new();
                let d = dp.bind(&tape, true);
                let lr = d_forward(cfg, &d, tape.constant(real))?.bce_logits_const(1.0);
                let lf = d_forward(cfg, &d, tape.constant(fake))?.bce_logits_const(0.0);
                let loss = lr.add(lf)?;
                let v = loss.item() as f64;
                check(v, "dcgan_d", epoch, step)?;
                let mut grads = tape.backward(loss)?;
                dp.adam_step(&d.gradients(&mut grads), &adam)?;
                v
            };
            let g_loss = {
                let tape = Tape::new();
                let g = gp.bind(&tape, true);
                let d = dp.bind(&tape, false);
                let x = g_forward(cfg, &g, tape.constant(z))?;
                let loss = d_forward(cfg, &d, x)?.bce_logits_const(1.0);
                let v = loss.item() as f64;
                check(v, "dcgan_g", epoch, step)?;
                let mut grads = tape.backward(loss)?;
                gp.adam_step(&g.gradients(&mut grads), &adam)?;
                v
            };
            dsum += d_loss;
            gsum += g_loss;
            steps += 1;
        }
        history.push(DcganEpoch {
            epoch,
            d_loss: dsum / steps as f64,
            g_loss: gsum / steps as f64,
        });
    }
    Ok(Dcgan {
        config: cfg.clone(),
        generator: gp,
        discriminator: dp,
        history,
    })
}

fn check(v: f64, term: &str, epoch: usize, step: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            term: term.into(),
            epoch,
            step,
            value: v,
        })
    }
}

impl Dcgan {
    /// Native-resolution generator outputs in [0, 1].
    pub fn raw_samples(&self, n: usize, seed: u64) -> Result<Vec<Raster>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = self.config.output;
        let mut out = Vec::with_capacity(n);
        let mut left = n;
        while left > 0 {
            let b = left.min(64);
            let z = latent_batch(&self.config, b, &mut rng);
            let tape = Tape::new();
            let g = self.generator.bind(&tape, false);
            let y = g_forward(&self.config, &g, tape.constant(z))?.value();
            for i in 0..b {
                out.push(Raster::new(s, s, y.sample(i).to_vec())?);
            }
            left -= b;
        }
        Ok(out)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        checkpoint::save(&dir.join("dcgan_g.ckpt"), &self.generator)?;
        checkpoint::save(&dir.join("dcgan_d.ckpt"), &self.discriminator)?;
        let p = dir.join("dcgan.json");
        let text = serde_json::to_string_pretty(&self.config).map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(&p, text).map_err(|e| Error::io(p, e))?;
        let mut csv = String::from("epoch,d_loss,g_loss\n");
        for h in &self.history {
            csv.push_str(&format!("{},{},{}\n", h.epoch, h.d_loss, h.g_loss));
        }
        let p = dir.join("dcgan_history.csv");
        std::fs::write(&p, csv).map_err(|e| Error::io(p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("dcgan.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let config: DcganConfig = serde_json::from_str(&text).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Self {
            config,
            generator: checkpoint::load(&dir.join("dcgan_g.ckpt"))?,
            discriminator: checkpoint::load(&dir.join("dcgan_d.ckpt"))?,
            history: Vec::new(),
        })
    }
}

/// `n` tri-level 256×256 label maps, deterministic in `seed`.
pub fn dcgan_sample(model: &Dcgan, n: usize, seed: u64) -> Result<Vec<LabelMap>> {
    model
        .raw_samples(n, seed)?
        .into_iter()
        .map(|r| {
            let q = decode_label_image(&r)?;
            Ok(LabelMap {
                rows: SLICE_SIZE,
                cols: SLICE_SIZE,
                data: resize_nearest(&q.data, q.rows, q.cols, SLICE_SIZE, SLICE_SIZE),
            })
        })
        .collect()
}

/// Writes sampled labels as tiles and returns their manifest (image = label).
pub fn dcgan_sample_manifest(model: &Dcgan, n: usize, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    let tiles = out_dir.join("tiles");
    std::fs::create_dir_all(&tiles).map_err(|e| Error::io(&tiles, e))?;
    let domain = DomainKey::new("SYN", "dcgan");
    let mut entries = Vec::with_capacity(n);
    for (i, l) in dcgan_sample(model, n, seed)?.iter().enumerate() {
        let rel = format!("tiles/{i:06}.lab.tile");
        write_raster(&out_dir.join(&rel), &encode_label_image(l))?;
        entries.push(ManifestEntry {
            domain: domain.clone(),
            subject: format!("syn{i:06}"),
            slice_index: 0,
            image: rel.clone().into(),
            label: Some(rel.into()),
            original_shape: (SLICE_SIZE, SLICE_SIZE),
            label_use: LabelUse::Train,
            origin: Some(format!("dcgan/seed{seed}")),
        });
    }
    let m = DatasetManifest::new(entries).with_root(out_dir);
    write_manifest(&out_dir.join("manifest.tsv"), &m)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::volume::Tissue;

    fn tiny() -> DcganConfig {
        DcganConfig {
            latent: 4,
            epochs: 1,
            batch: 4,
            output: 16,
            ngf: 2,
            ndf: 2,
            ..Default::default()
        }
    }

    fn labels() -> Vec<LabelMap> {
        (0..6)
            .map(|i| {
                let mut l = LabelMap::filled(256, 256, Tissue::Background);
                for r in 60..200 {
                    for c in 50..210 {
                        l.data[r * 256 + c] = Tissue::Brain;
                    }
                }
                for r in 100..110 + i {
                    l.data[r * 256 + 100] = Tissue::Lesion;
                }
                l
            })
            .collect()
    }

    #[test]
    fn deterministic_and_bounded() {
        let a = dcgan_train(&tiny(), &labels()).unwrap();
        let b = dcgan_train(&tiny(), &labels()).unwrap();
        assert_eq!(checkpoint::encode(&a.generator, true), checkpoint::encode(&b.generator, true));
        let raw = a.raw_samples(5, 3).unwrap();
        assert!(raw.iter().all(|r| r.data.iter().all(|&v| (0.0..=1.0).contains(&v))));
        assert_eq!(dcgan_sample(&a, 3, 9).unwrap(), dcgan_sample(&a, 3, 9).unwrap());
        assert!(dcgan_sample(&a, 0, 9).unwrap().is_empty());
        assert_eq!(dcgan_sample(&a, 7, 1).unwrap()[0].rows, 256);
    }

    #[test]
    fn block_count_follows_output_size() {
        assert_eq!(DcganConfig::default().blocks(), 4);
        assert!(DcganConfig { output: 48, ..Default::default() }.validate().is_err());
    }
}
