//! Job execution with hash-keyed resumption.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::config::sha256_hex;
use super::ledger::{JobRecord, JobStatus, RunLedger, LEDGER_FILE};
use super::plan::{BoundKind, ExperimentPlan, Job, JobKind};
use crate::error::{Error, Result};
use crate::imaging::manifest::{read_manifest, write_manifest, DatasetManifest, LabelAccess};
use crate::imaging::pooling::{merge_pools, pool_domains};
use crate::imaging::volume::Raster;
use crate::metrics::{evaluate_manifest, fid, image_stats, pca_reduce, tsne_embed, FeatureExtractor, Matrix, TsneConfig};
use crate::segmentation::{train_segmentation_manifest, SegHistory};
use crate::translation::dcgan::dcgan_sample_manifest;
use crate::translation::{dcgan_train, generate_synthetic, train_translation, TranslationTask};

/// Upper bound on images per set fed to the embedding.
const EMBED_PER_SET: usize = 100;

fn job_hash(plan: &ExperimentPlan, job: &Job, ledger: &RunLedger) -> String {
    let cfg = &plan.config;
    let settings = match &job.kind {
        JobKind::Dcgan { .. } => json!(cfg.dcgan),
        JobKind::Translate { .. } => json!(cfg.translation),
        JobKind::Pool { .. } => json!({ "taps": cfg.fid_taps, "weights": cfg.feature_weights }),
        JobKind::Segment { .. } | JobKind::Bound { .. } => json!({ "seg": cfg.segmentation, "spacing": cfg.eval_spacing }),
        JobKind::Embed { .. } => json!({ "weights": cfg.feature_weights }),
    };
    let deps: Vec<&str> = job.deps.iter().map(|d| ledger.jobs.get(d).map_or("", |r| r.hash.as_str())).collect();
    let doc = json!({ "job": job, "settings": settings, "data": plan.data_hash, "deps": deps });
    sha256_hex(doc.to_string().as_bytes())
}

fn job_dir(root: &Path, job: &Job, hash: &str) -> PathBuf {
    let name: String = job.id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect();
    root.join("jobs").join(format!("{name}-{}", &hash[..12]))
}

/// Executes `plan` in order. With `resume`, jobs whose hash matches a
/// completed ledger entry (with artifacts present) are skipped. A failed
/// job marks its dependents as skipped; independent jobs still run.
pub fn run_plan(plan: &ExperimentPlan, resume: bool) -> Result<RunLedger> {
    run_plan_with(plan, resume, |_, _| {})
}

/// As [`run_plan`], reporting each finished job to `progress`.
pub fn run_plan_with(plan: &ExperimentPlan, resume: bool, mut progress: impl FnMut(&str, &JobRecord)) -> Result<RunLedger> {
    let root = &plan.config.out;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let path = root.join(LEDGER_FILE);
    let previous = if resume && path.exists() { Some(RunLedger::load(&path)?) } else { None };
    let mut ledger = RunLedger {
        config_hash: plan.config.hash(),
        data_hash: plan.data_hash.clone(),
        seed: plan.config.seed,
        jobs: BTreeMap::new(),
    };
    let fx = match &plan.config.feature_weights {
        Some(p) => FeatureExtractor::load(p)?,
        None => FeatureExtractor::default(),
    };
    for job in &plan.jobs {
        let hash = job_hash(plan, job, &ledger);
        let dir = job_dir(root, job, &hash);
        if let Some(prev) = previous.as_ref().and_then(|l| l.jobs.get(&job.id)) {
            if prev.is_reusable(&hash) {
                ledger.jobs.insert(job.id.clone(), prev.clone());
                progress(&job.id, prev);
                continue;
            }
        }
        let blocked = job.deps.iter().find(|d| !ledger.jobs.get(*d).is_some_and(JobRecord::is_done));
        let (status, artifacts) = match blocked {
            Some(d) => (
                JobStatus::Skipped {
                    reason: format!("dependency `{d}` did not complete"),
                },
                BTreeMap::new(),
            ),
            None => match execute(plan, job, &ledger, &dir, &fx) {
                Ok(a) => (JobStatus::Done, a),
                Err(e) => (JobStatus::Failed { error: e.to_string() }, BTreeMap::new()),
            },
        };
        let rec = JobRecord {
            hash,
            seed: job.seed,
            status,
            dir,
            artifacts,
        };
        progress(&job.id, &rec);
        ledger.jobs.insert(job.id.clone(), rec);
        ledger.save(&path)?;
    }
    ledger.save(&path)?;
    Ok(ledger)
}

fn need<'a>(ledger: &'a RunLedger, job: &str, artifact: &str) -> Result<&'a Path> {
    ledger
        .artifact(job, artifact)
        .ok_or_else(|| Error::invalid(format!("job `{job}` has no `{artifact}` artifact")))
}

fn images(m: &DatasetManifest) -> Result<Vec<Raster>> {
    Ok(m.load_all(LabelAccess::ImagesOnly)?.into_iter().map(|r| r.image).collect())
}

fn create(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Target images (labels stripped) for one vendor or for all of them.
fn target_images(plan: &ExperimentPlan, vendor: Option<&str>) -> Result<DatasetManifest> {
    let mut m = plan.eval_manifest().filter(|e| vendor.is_none_or(|v| e.domain.vendor == v));
    for e in &mut m.entries {
        e.label = None;
    }
    Ok(m)
}

fn fid_table(fx: &FeatureExtractor, taps: &[usize], a: &[Raster], b: &[Raster]) -> Result<String> {
    let (ra, rb): (Vec<&Raster>, Vec<&Raster>) = (a.iter().collect(), b.iter().collect());
    let mut s = String::from("tap,fid\n");
    for &tap in taps {
        let d = fid(&image_stats(fx, &ra, tap)?, &image_stats(fx, &rb, tap)?)?;
        let _ = writeln!(s, "{tap},{d}");
    }
    Ok(s)
}

fn consumed_json(h: &SegHistory) -> String {
    serde_json::to_string_pretty(&h.consumed).expect("counts serialize")
}

type Artifacts = BTreeMap<String, PathBuf>;

fn execute(plan: &ExperimentPlan, job: &Job, ledger: &RunLedger, dir: &Path, fx: &FeatureExtractor) -> Result<Artifacts> {
    create(dir)?;
    let cfg = &plan.config;
    let mut out = Artifacts::new();
    match &job.kind {
        JobKind::Dcgan { source, samples } => {
            let recs = plan.data.filter(|e| source.matches(&e.domain)).load_all(LabelAccess::Training)?;
            let labels = recs.into_iter().map(|r| r.label.expect("training access loads labels")).collect::<Vec<_>>();
            let mut c = cfg.dcgan.clone();
            c.seed = job.seed;
            let model = dcgan_train(&c, &labels)?;
            model.save(dir)?;
            let samples_dir = dir.join("samples");
            dcgan_sample_manifest(&model, *samples, job.seed, &samples_dir)?;
            out.insert("model".into(), dir.join("dcgan_g.ckpt"));
            out.insert("history".into(), dir.join("dcgan_history.csv"));
            out.insert("samples".into(), samples_dir.join("manifest.tsv"));
        }
        JobKind::Translate { mode, source, target } => {
            let syn = match job.deps.iter().find(|d| d.starts_with("dcgan/")) {
                Some(d) => Some(read_manifest(need(ledger, d, "samples")?)?),
                None => None,
            };
            let (src, tgt) = pool_domains(&plan.data, *mode, source, target, syn.as_ref())?;
            let mut c = cfg.translation.clone();
            c.seed = job.seed;
            let task = TranslationTask {
                mode: Some(*mode),
                source: source.to_string(),
                target: target.to_string(),
            };
            let (models, _) = train_translation(&c, &task, &images(&src)?, &images(&tgt)?, Some(dir))?;
            let key = target.key().ok_or_else(|| Error::invalid("translation target must name a vendor"))?;
            generate_synthetic(&models.g_s2t, &src, &key, &dir.join("synthetic"))?;
            out.insert("generator".into(), dir.join("g_s2t.ckpt"));
            out.insert("history".into(), dir.join("history.csv"));
            out.insert("synthetic".into(), dir.join("synthetic").join("manifest.tsv"));
        }
        JobKind::Pool { target, members, .. } => {
            let sets = members
                .iter()
                .map(|m| {
                    let art = if m.starts_with("pool/") { "manifest" } else { "synthetic" };
                    read_manifest(need(ledger, m, art)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let merged = merge_pools(&sets.iter().collect::<Vec<_>>());
            let p = dir.join("manifest.tsv");
            write_manifest(&p, &merged)?;
            out.insert("manifest".into(), p);
            if !cfg.fid_taps.is_empty() {
                let t = images(&target_images(plan, target.as_deref())?)?;
                let f = dir.join("fid.csv");
                write(&f, &fid_table(fx, &cfg.fid_taps, &images(&merged)?, &t)?)?;
                out.insert("fid".into(), f);
            }
        }
        JobKind::Segment { pool } => {
            let m = read_manifest(need(ledger, pool, "manifest")?)?;
            if let Some(e) = m.entries.iter().find(|e| e.domain.dataset == cfg.data.target) {
                return Err(Error::PolicyViolation(format!("{} would train on target labels", e.describe())));
            }
            segment(plan, &m, job, dir, &mut out)?;
        }
        JobKind::Bound { which } => {
            let m = match which {
                BoundKind::Lower => plan.data.filter(|e| e.domain.dataset == cfg.data.source),
                BoundKind::Upper => {
                    let tt = plan
                        .target_train
                        .clone()
                        .ok_or_else(|| Error::invalid("upper bound needs data.target_train"))?;
                    let eval = plan.eval_manifest();
                    if let Some(e) = tt.entries.iter().find(|e| eval.entries.iter().any(|v| v.subject == e.subject && v.domain == e.domain)) {
                        return Err(Error::PolicyViolation(format!("subject {} is in both target splits", e.subject)));
                    }
                    tt
                }
            };
            segment(plan, &m, job, dir, &mut out)?;
            if *which == BoundKind::Lower && !cfg.fid_taps.is_empty() {
                let f = dir.join("fid.csv");
                write(&f, &fid_table(fx, &cfg.fid_taps, &images(&m)?, &images(&target_images(plan, None)?)?)?)?;
                out.insert("fid".into(), f);
            }
        }
        JobKind::Embed { pools } => {
            let mut rows: Vec<Raster> = Vec::new();
            let mut tags: Vec<String> = Vec::new();
            let mut add = |m: &DatasetManifest, tag: &str| -> Result<()> {
                let step = m.len().div_ceil(EMBED_PER_SET).max(1);
                let sub = DatasetManifest {
                    entries: m.entries.iter().step_by(step).cloned().collect(),
                    root: m.root.clone(),
                };
                for r in images(&sub)? {
                    rows.push(r);
                    tags.push(tag.to_string());
                }
                Ok(())
            };
            add(&target_images(plan, None)?, "target")?;
            for p in pools {
                add(&read_manifest(need(ledger, p, "manifest")?)?, p.trim_start_matches("pool/"))?;
            }
            let feats = fx.features(&rows.iter().collect::<Vec<_>>(), 2048)?;
            let k = 1024.min(feats.rows - 1).min(feats.cols);
            let reduced: Matrix = pca_reduce(&feats, k)?;
            let perplexity = 30f64.min(((feats.rows - 1) / 3) as f64);
            let e = tsne_embed(
                &reduced,
                &tags,
                &TsneConfig {
                    perplexity,
                    seed: job.seed,
                    ..TsneConfig::default()
                },
            )?;
            let p = dir.join("embedding.csv");
            e.write_csv(&p)?;
            out.insert("embedding".into(), p);
        }
    }
    Ok(out)
}

fn segment(plan: &ExperimentPlan, train: &DatasetManifest, job: &Job, dir: &Path, out: &mut Artifacts) -> Result<()> {
    let mut c = plan.config.segmentation.clone();
    c.seed = job.seed;
    let (net, hist) = train_segmentation_manifest(&c, train, Some(dir))?;
    let report = evaluate_manifest(&net, &plan.eval_manifest(), plan.config.eval_spacing)?;
    let rdir = dir.join("report");
    report.write(&rdir)?;
    let consumed = dir.join("consumed.json");
    write(&consumed, &consumed_json(&hist))?;
    out.insert("model".into(), dir.join("unet.ckpt"));
    out.insert("history".into(), dir.join("seg_history.csv"));
    out.insert("report".into(), rdir.join("metrics.csv"));
    out.insert("report_text".into(), rdir.join("metrics.txt"));
    out.insert("consumed".into(), consumed);
    Ok(())
}
