use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::discriminator::{discriminator_forward, init_discriminator, DiscriminatorConfig};
use super::generator::{generator_forward, init_generator, GeneratorConfig};
use super::losses::{gan_target, total_cycle_objective, CycleNets, GanLoss, LossWeights};
use super::pool::{ImagePool, POOL_CAPACITY};
use super::schedule::lr_schedule;
use crate::error::{Error, Result};
use crate::imaging::augment::{AugmentConfig, Transform2};
use crate::imaging::pooling::TranslationMode;
use crate::imaging::volume::Raster;
use crate::nn::{checkpoint, AdamConfig, Bound, ParamSet, Tape, Tensor4, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CycleTrainConfig {
    pub epochs: usize,
    /// Last epoch trained at the full learning rate.
    pub decay_start: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch: usize,
    pub weights: LossWeights,
    pub gan_loss: GanLoss,
    pub pool_capacity: usize,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    /// Optional geometric augmentation applied to both domains.
    pub augment: Option<AugmentConfig>,
    /// Write intermediate checkpoints every this many epochs.
    pub checkpoint_every: Option<usize>,
    pub seed: u64,
}

impl Default for CycleTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            decay_start: 25,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch: 4,
            weights: LossWeights::default(),
            gan_loss: GanLoss::LeastSquares,
            pool_capacity: POOL_CAPACITY,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            augment: None,
            checkpoint_every: None,
            seed: 0,
        }
    }
}

impl CycleTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::invalid("epochs and batch must be positive"));
        }
        if self.decay_start == 0 || self.decay_start >= self.epochs {
            return Err(Error::invalid(format!(
                "decay start {} must satisfy 0 < start < {}",
                self.decay_start, self.epochs
            )));
        }
        self.weights.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        self.adam(self.lr).validate()
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: 1e-8,
        }
    }
}

/// Per-epoch means of every logged quantity.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub gan_s2t: f64,
    pub gan_t2s: f64,
    pub cycle_s: f64,
    pub cycle_t: f64,
    pub total_g: f64,
    pub d_s: f64,
    pub d_t: f64,
}

impl EpochRecord {
    /// Combined unweighted cycle reconstruction error.
    pub fn cycle(&self) -> f64 {
        self.cycle_s + self.cycle_t
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub const CSV_HEADER: &'static str = "epoch,lr,gan_s2t,gan_t2s,cycle_s,cycle_t,total_g,d_s,d_t";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.epochs {
            let _ = writeln!(
                s,
                "{},{:e},{},{},{},{},{},{},{}",
                r.epoch, r.lr, r.gan_s2t, r.gan_t2s, r.cycle_s, r.cycle_t, r.total_g, r.d_s, r.d_t
            );
        }
        s
    }
}

/// Which way a generator maps and what it was trained for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMeta {
    pub mode: Option<TranslationMode>,
    pub source: String,
    pub target: String,
    pub config: GeneratorConfig,
}

/// A generator with its provenance.
#[derive(Clone, Debug)]
pub struct Generator {
    pub params: ParamSet<f32>,
    pub meta: GeneratorMeta,
}

impl Generator {
    /// Translates a batch of images in [0, 1].
    pub fn forward(&self, x: &Tensor4<f32>) -> Result<Tensor4<f32>> {
        super::generator::generate_batch(&self.meta.config, &self.params, x)
    }

    /// Translates one 256×256 raster.
    pub fn translate(&self, image: &Raster) -> Result<Raster> {
        let n = crate::imaging::volume::SLICE_SIZE;
        if image.shape() != (n, n) {
            return Err(Error::Shape {
                op: "translate",
                dim: "rows",
                expected: n,
                actual: image.rows,
            });
        }
        let y = self.forward(&raster_tensor(image))?;
        Raster::new(n, n, y.into_vec())
    }

    pub fn id(&self) -> String {
        let mode = self.meta.mode.map(|m| m.as_str()).unwrap_or("none");
        format!("{mode}/{}->{}", self.meta.source, self.meta.target)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.params)?;
        let meta = serde_json::to_string_pretty(&self.meta).map_err(|e| Error::invalid(e.to_string()))?;
        let mp = path.with_extension("json");
        std::fs::write(&mp, meta).map_err(|e| Error::io(mp, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let params = checkpoint::load(path)?;
        let mp = path.with_extension("json");
        let meta = match std::fs::read_to_string(&mp) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", mp.display())))?,
            Err(_) => GeneratorMeta {
                mode: None,
                source: "unknown".into(),
                target: "unknown".into(),
                config: GeneratorConfig::infer(&params)?,
            },
        };
        Ok(Self { params, meta })
    }
}

/// The trained pair plus discriminators.
#[derive(Clone, Debug)]
pub struct CycleModels {
    pub g_s2t: Generator,
    pub g_t2s: Generator,
    pub d_s: ParamSet<f32>,
    pub d_t: ParamSet<f32>,
}

impl CycleModels {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.g_s2t.save(&dir.join("g_s2t.ckpt"))?;
        self.g_t2s.save(&dir.join("g_t2s.ckpt"))?;
        checkpoint::save(&dir.join("d_s.ckpt"), &self.d_s)?;
        checkpoint::save(&dir.join("d_t.ckpt"), &self.d_t)
    }
}

pub fn raster_tensor(r: &Raster) -> Tensor4<f32> {
    Tensor4::from_vec([1, 1, r.rows, r.cols], r.data.clone()).expect("raster dims are non-zero")
}

fn stack_rasters(rs: &[&Raster]) -> Tensor4<f32> {
    let (h, w) = rs[0].shape();
    let mut data = Vec::with_capacity(rs.len() * h * w);
    for r in rs {
        data.extend_from_slice(&r.data);
    }
    Tensor4::from_vec([rs.len(), 1, h, w], data).expect("non-empty batch")
}

struct Nets<'a, 't> {
    g: &'a GeneratorConfig,
    d: &'a DiscriminatorConfig,
    gs: &'a Bound<'t, f32>,
    gt: &'a Bound<'t, f32>,
    ds: &'a Bound<'t, f32>,
    dt: &'a Bound<'t, f32>,
}

impl<'t> CycleNets<'t, f32> for Nets<'_, 't> {
    fn g_s2t(&self, x: Var<'t, f32>) -> Result<Var<'t, f32>> {
        generator_forward(self.g, self.gs, x)
    }
    fn g_t2s(&self, x: Var<'t, f32>) -> Result<Var<'t, f32>> {
        generator_forward(self.g, self.gt, x)
    }
    fn d_s(&self, x: Var<'t, f32>) -> Result<Var<'t, f32>> {
        discriminator_forward(self.d, self.ds, x)
    }
    fn d_t(&self, x: Var<'t, f32>) -> Result<Var<'t, f32>> {
        discriminator_forward(self.d, self.dt, x)
    }
}

fn guard(term: &str, value: f64, epoch: usize, step: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            term: term.to_string(),
            epoch,
            step,
            value,
        })
    }
}

/// One discriminator update on real images and pooled fakes; returns its loss.
fn discriminator_step(
    cfg: &DiscriminatorConfig,
    params: &mut ParamSet<f32>,
    real: Tensor4<f32>,
    fake: Tensor4<f32>,
    kind: GanLoss,
    adam: &AdamConfig,
) -> Result<f64> {
    let tape = Tape::new();
    let b = params.bind(&tape, true);
    let lr = gan_target(discriminator_forward(cfg, &b, tape.constant(real))?, true, kind);
    let lf = gan_target(discriminator_forward(cfg, &b, tape.constant(fake))?, false, kind);
    let loss = lr.add(lf)?;
    let value = loss.item() as f64;
    if value.is_finite() {
        let mut grads = tape.backward(loss)?;
        let g = b.gradients(&mut grads);
        params.adam_step(&g, adam)?;
    }
    Ok(value)
}

/// Identifies the data a training run sees, for the job ledger.
#[derive(Clone, Debug, Default)]
pub struct TranslationTask {
    pub mode: Option<TranslationMode>,
    pub source: String,
    pub target: String,
}

/// Trains a cycle-consistent pair on unpaired source and target images.
///
/// Per batch: one joint generator step, then the source discriminator,
/// then the target discriminator, both fed through image pools.
pub fn train_translation(
    cfg: &CycleTrainConfig,
    task: &TranslationTask,
    source: &[Raster],
    target: &[Raster],
    out_dir: Option<&Path>,
) -> Result<(CycleModels, History)> {
    cfg.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::invalid("translation needs non-empty source and target sets"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gs: ParamSet<f32> = init_generator(&cfg.generator, &mut rng);
    let mut gt: ParamSet<f32> = init_generator(&cfg.generator, &mut rng);
    let mut ds: ParamSet<f32> = init_discriminator(&cfg.discriminator, &mut rng);
    let mut dt: ParamSet<f32> = init_discriminator(&cfg.discriminator, &mut rng);
    let mut pool_s = ImagePool::new(cfg.pool_capacity);
    let mut pool_t = ImagePool::new(cfg.pool_capacity);
    let mut history = History::default();

    let n = source.len().max(target.len());
    let steps = n.div_ceil(cfg.batch);
    let mut order_s: Vec<usize> = (0..source.len()).collect();
    let mut order_t: Vec<usize> = (0..target.len()).collect();

    let models = |gs: &ParamSet<f32>, gt: &ParamSet<f32>, ds: &ParamSet<f32>, dt: &ParamSet<f32>| {
        let meta = |from: &str, to: &str| GeneratorMeta {
            mode: task.mode,
            source: from.to_string(),
            target: to.to_string(),
            config: cfg.generator,
        };
        CycleModels {
            g_s2t: Generator {
                params: gs.clone(),
                meta: meta(&task.source, &task.target),
            },
            g_t2s: Generator {
                params: gt.clone(),
                meta: meta(&task.target, &task.source),
            },
            d_s: ds.clone(),
            d_t: dt.clone(),
        }
    };

    for epoch in 1..=cfg.epochs {
        let lr = lr_schedule(epoch, cfg.lr, cfg.epochs, cfg.decay_start)?;
        let adam = cfg.adam(lr);
        order_s.shuffle(&mut rng);
        order_t.shuffle(&mut rng);
        let mut sums = EpochRecord::default();
        for step in 0..steps {
            let lo = step * cfg.batch;
            let hi = (lo + cfg.batch).min(n);
            let pick = |set: &[Raster], order: &[usize], rng: &mut ChaCha8Rng| -> Tensor4<f32> {
                let items: Vec<Raster> = (lo..hi)
                    .map(|i| {
                        let r = &set[order[i % order.len()]];
                        match &cfg.augment {
                            Some(a) => {
                                let t: Transform2 = a.sample(rng);
                                if t.is_identity() {
                                    r.clone()
                                } else {
                                    t.warp_linear(r)
                                }
                            }
                            None => r.clone(),
                        }
                    })
                    .collect();
                stack_rasters(&items.iter().collect::<Vec<_>>())
            };
            let real_s = pick(source, &order_s, &mut rng);
            let real_t = pick(target, &order_t, &mut rng);

            // generator step
            let (fake_s, fake_t) = {
                let tape = Tape::new();
                let bs = gs.bind(&tape, true);
                let bt = gt.bind(&tape, true);
                let bds = ds.bind(&tape, false);
                let bdt = dt.bind(&tape, false);
                let nets = Nets {
                    g: &cfg.generator,
                    d: &cfg.discriminator,
                    gs: &bs,
                    gt: &bt,
                    ds: &bds,
                    dt: &bdt,
                };
                let xs = tape.constant(real_s.clone());
                let xt = tape.constant(real_t.clone());
                let obj = total_cycle_objective(&nets, xs, xt, &cfg.weights, cfg.gan_loss)?;
                for (name, v) in obj.raw.terms() {
                    guard(name, v, epoch, step)?;
                }
                sums.gan_s2t += obj.raw.gan_s2t;
                sums.gan_t2s += obj.raw.gan_t2s;
                sums.cycle_s += obj.raw.cycle_s;
                sums.cycle_t += obj.raw.cycle_t;
                sums.total_g += obj.raw.total;
                let mut grads = tape.backward(obj.total)?;
                let g_s = bs.gradients(&mut grads);
                let g_t = bt.gradients(&mut grads);
                let fakes = (Arc::unwrap_or_clone(obj.fake_s.value()), Arc::unwrap_or_clone(obj.fake_t.value()));
                drop(grads);
                gs.adam_step(&g_s, &adam)?;
                gt.adam_step(&g_t, &adam)?;
                fakes
            };

            let pooled_s = pool_s.query_batch(&fake_s, &mut rng);
            let d_s = discriminator_step(&cfg.discriminator, &mut ds, real_s, pooled_s, cfg.gan_loss, &adam)?;
            sums.d_s += guard("d_s", d_s, epoch, step)?;
            let pooled_t = pool_t.query_batch(&fake_t, &mut rng);
            let d_t = discriminator_step(&cfg.discriminator, &mut dt, real_t, pooled_t, cfg.gan_loss, &adam)?;
            sums.d_t += guard("d_t", d_t, epoch, step)?;
        }
        let k = steps as f64;
        history.epochs.push(EpochRecord {
            epoch,
            lr,
            gan_s2t: sums.gan_s2t / k,
            gan_t2s: sums.gan_t2s / k,
            cycle_s: sums.cycle_s / k,
            cycle_t: sums.cycle_t / k,
            total_g: sums.total_g / k,
            d_s: sums.d_s / k,
            d_t: sums.d_t / k,
        });
        if let (Some(dir), Some(every)) = (out_dir, cfg.checkpoint_every) {
            if every > 0 && epoch % every == 0 && epoch < cfg.epochs {
                models(&gs, &gt, &ds, &dt).save(&dir.join(format!("epoch{epoch:03}")))?;
            }
        }
    }
    let m = models(&gs, &gt, &ds, &dt);
    if let Some(dir) = out_dir {
        m.save(dir)?;
        let p = dir.join("history.csv");
        std::fs::write(&p, history.to_csv()).map_err(|e| Error::io(p, e))?;
    }
    Ok((m, history))
}

/// Mean cycle loss of a trained pair on value tensors, for reporting.
pub fn evaluate_cycle(models: &CycleModels, x: &[Raster]) -> Result<f64> {
    let mut total = 0.0;
    for r in x {
        let t = raster_tensor(r);
        total += super::losses::cycle_loss(|v| models.g_s2t.forward(v), |v| models.g_t2s.forward(v), &t)?;
    }
    Ok(total / x.len().max(1) as f64)
}
