//! `mrshift`: phantom generation, preprocessing, translation, segmentation,
//! evaluation and config-driven experiment runs.
//!
//! Exit codes: 0 success, 1 job or runtime failure, 2 configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use mrshift::experiment::{emit_report_bundle, plan_from_experiment, run_plan_with, ExperimentConfig, JobStatus, RunLedger, LEDGER_FILE};
use mrshift::imaging::nifti::{load_volume_with_masks, write_nifti_mask};
use mrshift::imaging::{
    normalize_volume, pool_domains, read_manifest, tile_volumes, DatasetManifest, DomainKey, DomainSelector,
    LabelAccess, LabelUse, Raster, TranslationMode, Volume, VolumeMeta,
};
use mrshift::metrics::{evaluate_manifest, feature_stats, fid, pca_reduce, tsne_embed, FeatureExtractor, TsneConfig, TAPS};
use mrshift::phantom::{phantom_volumes, DomainStyle, PhantomSpec};
use mrshift::segmentation::{predict_volume, train_segmentation_manifest, SegTrainConfig, UNet};
use mrshift::translation::dcgan::dcgan_sample_manifest;
use mrshift::translation::{dcgan_train, generate_synthetic, train_translation, CycleTrainConfig, Dcgan, DcganConfig, Generator, TranslationTask};

#[derive(Parser)]
#[command(name = "mrshift", version, about = "Cross-scanner MR translation and lesion segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded two-dataset phantom and a matching experiment config.
    Phantom(PhantomArgs),
    /// Normalize NIfTI volumes and write their kept slices as a manifest.
    Prep(PrepArgs),
    /// Train a cycle-consistent translation pair.
    Translate(TranslateArgs),
    /// Translate a labelled manifest with a trained generator, or sample a DCGAN.
    Generate(GenerateArgs),
    /// Train a lesion segmentation network on a labelled manifest.
    SegmentTrain(SegmentTrainArgs),
    /// Predict lesion masks for NIfTI volumes.
    SegmentPredict(SegmentPredictArgs),
    /// Score a segmentation model on the labelled slices of a manifest.
    Evaluate(EvaluateArgs),
    /// FID between the images of two manifests at one or more taps.
    Fid(FidArgs),
    /// PCA + t-SNE embedding of several image sets.
    Embed(EmbedArgs),
    /// Expand an experiment config and print the job grid.
    Plan(ExperimentArgs),
    /// Execute an experiment config and emit its report bundle.
    Run(ExperimentArgs),
    /// Regenerate the report bundle from a run's ledger.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelUseArg {
    Train,
    Validation,
}

impl From<LabelUseArg> for LabelUse {
    fn from(v: LabelUseArg) -> Self {
        match v {
            LabelUseArg::Train => LabelUse::Train,
            LabelUseArg::Validation => LabelUse::ValidationOnly,
        }
    }
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    subjects: usize,
    #[arg(long, default_value_t = 20)]
    slices: usize,
    /// In-plane side of the phantom volumes.
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, default_value = "SRC")]
    source: String,
    #[arg(long, value_delimiter = ',', default_value = "A")]
    source_vendors: Vec<String>,
    #[arg(long, default_value = "TGT")]
    target: String,
    #[arg(long, value_delimiter = ',', default_value = "X,Y,Z")]
    target_vendors: Vec<String>,
}

#[derive(Args)]
struct PrepArgs {
    /// Directory of `<subject>_flair.nii` files with `_brain.nii` and optional `_lesion.nii` siblings.
    #[arg(long)]
    volumes: PathBuf,
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    vendor: String,
    #[arg(long, value_enum, default_value = "train")]
    label_use: LabelUseArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TranslateArgs {
    /// Manifests holding the source and target domains.
    #[arg(long = "data", required = true)]
    data: Vec<PathBuf>,
    #[arg(long)]
    mode: TranslationMode,
    /// Dataset or `dataset:vendor`.
    #[arg(long)]
    source: DomainSelector,
    #[arg(long)]
    target: DomainSelector,
    /// Label samples for syn2image.
    #[arg(long)]
    synthetic: Option<PathBuf>,
    /// TOML training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator checkpoint (`g_s2t.ckpt`).
    #[arg(long, conflicts_with = "dcgan", required_unless_present = "dcgan")]
    generator: Option<PathBuf>,
    /// Labelled manifest to translate.
    #[arg(long, requires = "generator")]
    source: Option<PathBuf>,
    /// Domain key of the translated set, `dataset:vendor`.
    #[arg(long, requires = "generator")]
    target: Option<DomainKey>,
    /// DCGAN model directory; sample label maps instead of translating.
    #[arg(long)]
    dcgan: Option<PathBuf>,
    /// Train the DCGAN on this manifest's labels first, saving it to `--dcgan`.
    #[arg(long, requires = "dcgan")]
    train_on: Option<PathBuf>,
    /// TOML DCGAN settings used with `--train-on`.
    #[arg(long, requires = "train_on")]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SegmentTrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SegmentPredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory in the `prep` layout.
    #[arg(long)]
    volumes: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [1.0, 1.0, 3.0])]
    spacing: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FidArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = TAPS)]
    taps: Vec<usize>,
    /// Feature extractor checkpoint; the seeded default otherwise.
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    /// `name=manifest.tsv`, repeated.
    #[arg(long = "set", required = true)]
    sets: Vec<String>,
    #[arg(long, default_value_t = 100)]
    per_set: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output root.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reuse completed jobs whose hash is unchanged.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding `ledger.json`.
    #[arg(long, required_unless_present = "config")]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Marks errors that should exit with code 2.
#[derive(Debug)]
struct ConfigError;

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("configuration error")
    }
}

impl std::error::Error for ConfigError {}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<ConfigError>() || matches!(c.downcast_ref::<mrshift::Error>(), Some(mrshift::Error::Config { .. } | mrshift::Error::Parse { .. }))
    })
}

fn read_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text)
        .map_err(|e| anyhow::Error::new(ConfigError).context(format!("{}: {}", path.display(), e.message())))
}

fn load_experiment(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out = std::path::absolute(o)?;
    }
    Ok(cfg)
}

fn images(m: &DatasetManifest) -> Result<Vec<Raster>> {
    Ok(m.load_all(LabelAccess::ImagesOnly)?.into_iter().map(|r| r.image).collect())
}

fn extractor(weights: Option<&Path>) -> Result<FeatureExtractor> {
    Ok(match weights {
        Some(p) => FeatureExtractor::load(p)?,
        None => FeatureExtractor::default(),
    })
}

/// Volumes in the `<subject>_{flair,brain,lesion}.nii` layout, sorted by subject.
fn read_volume_dir(dir: &Path, dataset: &str, vendor: &str) -> Result<Vec<Volume>> {
    let mut subjects: Vec<String> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok()?.file_name().to_str()?.strip_suffix("_flair.nii").map(String::from))
        .collect();
    subjects.sort();
    if subjects.is_empty() {
        bail!("no *_flair.nii volumes in {}", dir.display());
    }
    subjects
        .into_iter()
        .map(|s| {
            let lesion = dir.join(format!("{s}_lesion.nii"));
            let meta = VolumeMeta {
                dataset: dataset.into(),
                vendor: vendor.into(),
                subject: s.clone(),
            };
            let v = load_volume_with_masks(
                &dir.join(format!("{s}_flair.nii")),
                &dir.join(format!("{s}_brain.nii")),
                lesion.exists().then_some(lesion.as_path()),
                meta,
            )?;
            normalize_volume(&v).with_context(|| format!("subject {s}"))
        })
        .collect()
}

fn phantom(a: PhantomArgs) -> Result<()> {
    let base = PhantomSpec::default();
    // lesion radii scale with the in-plane size
    let k = a.size as f64 / base.rows as f64;
    let radius = ((base.lesion_radius.0 * k).max(1.0), (base.lesion_radius.1 * k).max(1.0));
    let spec = |dataset: &str, vendor: &str, seed: u64| PhantomSpec {
        dataset: dataset.into(),
        vendor: vendor.into(),
        subjects: a.subjects,
        slices: a.slices,
        rows: a.size,
        cols: a.size,
        lesion_radius: radius,
        seed,
        ..base.clone()
    };
    let mut manifests = Vec::new();
    let make = |dataset: &str, vendor: &str, seed: u64, style: &DomainStyle, use_: LabelUse| -> Result<PathBuf> {
        let vols = phantom_volumes(&spec(dataset, vendor, seed), style)?;
        let dir = a.out.join(format!("{dataset}_{vendor}"));
        tile_volumes(&vols, &dir, use_)?;
        // keep raw volumes for `prep` and `segment-predict`
        let vdir = dir.join("volumes");
        std::fs::create_dir_all(&vdir)?;
        for v in &vols {
            let s = &v.meta.subject;
            mrshift::imaging::nifti::write_nifti_f32(&vdir.join(format!("{s}_flair.nii")), v.dims, v.spacing, &v.voxels)?;
            write_nifti_mask(&vdir.join(format!("{s}_brain.nii")), &v.brain_mask, v.spacing)?;
            if let Some(l) = &v.lesion_mask {
                write_nifti_mask(&vdir.join(format!("{s}_lesion.nii")), l, v.spacing)?;
            }
        }
        Ok(dir.join("manifest.tsv"))
    };
    for (i, v) in a.source_vendors.iter().enumerate() {
        let style = if i == 0 { DomainStyle::source_default() } else { DomainStyle::vendor_variant(i + 2) };
        manifests.push(make(&a.source, v, a.seed * 1000 + i as u64, &style, LabelUse::Train)?);
    }
    let target_style = |i: usize| if i == 0 { DomainStyle::target_default() } else { DomainStyle::vendor_variant(i) };
    for (i, v) in a.target_vendors.iter().enumerate() {
        manifests.push(make(&a.target, v, a.seed * 1000 + 100 + i as u64, &target_style(i), LabelUse::ValidationOnly)?);
    }
    // labelled target-scanner subjects, disjoint from the evaluation subjects
    let mut train_vols = Vec::new();
    for (i, v) in a.target_vendors.iter().enumerate() {
        for mut vol in phantom_volumes(&spec(&a.target, v, a.seed * 1000 + 200 + i as u64), &target_style(i))? {
            vol.meta.subject = format!("{v}-train{}", &vol.meta.subject[v.len()..]);
            train_vols.push(vol);
        }
    }
    let train_dir = a.out.join(format!("{}_train", a.target));
    tile_volumes(&train_vols, &train_dir, LabelUse::Train)?;

    let rel = |p: &Path| p.strip_prefix(&a.out).unwrap_or(p).display().to_string();
    let cfg = format!(
        r#"out = "runs"
seed = {seed}
modes = ["label2image"]
bounds = true

[data]
manifests = [{manifests}]
source = "{source}"
target = "{target}"
target_train = "{train}"

[translation]
epochs = 10
decay_start = 5
generator = {{ ngf = 4 }}
discriminator = {{ ndf = 8 }}

[segmentation]
epochs = 10
unet = {{ base = 4 }}
"#,
        seed = a.seed,
        manifests = manifests.iter().map(|m| format!("\"{}\"", rel(m))).collect::<Vec<_>>().join(", "),
        source = a.source,
        target = a.target,
        train = rel(&train_dir.join("manifest.tsv")),
    );
    let cfg_path = a.out.join("experiment.toml");
    std::fs::write(&cfg_path, cfg)?;
    for m in &manifests {
        println!("{}", m.display());
    }
    println!("{}", train_dir.join("manifest.tsv").display());
    println!("{}", cfg_path.display());
    Ok(())
}

fn prep(a: PrepArgs) -> Result<()> {
    let vols = read_volume_dir(&a.volumes, &a.dataset, &a.vendor)?;
    let m = tile_volumes(&vols, &a.out, a.label_use.into())?;
    println!("{} slices from {} volumes -> {}", m.len(), vols.len(), a.out.join("manifest.tsv").display());
    Ok(())
}

fn translate(a: TranslateArgs) -> Result<()> {
    let mut data = DatasetManifest::default();
    for p in &a.data {
        data.extend(&read_manifest(p)?);
    }
    let syn = a.synthetic.as_deref().map(read_manifest).transpose()?;
    let (src, tgt) = pool_domains(&data, a.mode, &a.source, &a.target, syn.as_ref())?;
    let mut cfg: CycleTrainConfig = read_toml(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.decay_start = cfg.decay_start.min(e.saturating_sub(1)).max(1);
        cfg.epochs = e;
    }
    let task = TranslationTask {
        mode: Some(a.mode),
        source: a.source.to_string(),
        target: a.target.to_string(),
    };
    eprintln!("{} source / {} target slices", src.len(), tgt.len());
    let (_, hist) = train_translation(&cfg, &task, &images(&src)?, &images(&tgt)?, Some(&a.out))?;
    if let Some(last) = hist.epochs.last() {
        println!("epoch {} cycle {:.6} total_g {:.6}", last.epoch, last.cycle(), last.total_g);
    }
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let m = if let Some(dir) = &a.dcgan {
        if let Some(train) = &a.train_on {
            let mut cfg: DcganConfig = read_toml(a.config.as_deref())?;
            cfg.seed = a.seed;
            let labels = read_manifest(train)?
                .load_all(LabelAccess::Training)?
                .into_iter()
                .map(|r| r.label.expect("training access loads labels"))
                .collect::<Vec<_>>();
            dcgan_train(&cfg, &labels)?.save(dir)?;
        }
        dcgan_sample_manifest(&Dcgan::load(dir)?, a.samples, a.seed, &a.out)?
    } else {
        let g = Generator::load(a.generator.as_deref().expect("clap enforces generator"))?;
        let Some(src) = &a.source else { bail!("--source is required with --generator") };
        let Some(target) = &a.target else { bail!("--target is required with --generator") };
        generate_synthetic(&g, &read_manifest(src)?, target, &a.out)?
    };
    println!("{} slices -> {}", m.len(), a.out.join("manifest.tsv").display());
    Ok(())
}

fn segment_train(a: SegmentTrainArgs) -> Result<()> {
    let mut cfg: SegTrainConfig = read_toml(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let (_, hist) = train_segmentation_manifest(&cfg, &read_manifest(&a.train)?, Some(&a.out))?;
    if let Some(last) = hist.epochs.last() {
        println!("epoch {} loss {:.6}", last.epoch, last.loss);
    }
    Ok(())
}

fn segment_predict(a: SegmentPredictArgs) -> Result<()> {
    let net = UNet::load(&a.model)?;
    std::fs::create_dir_all(&a.out)?;
    for v in read_volume_dir(&a.volumes, "-", "-")? {
        let mask = predict_volume(&net, &v)?;
        let p = a.out.join(format!("{}_pred.nii", v.meta.subject));
        write_nifti_mask(&p, &mask, v.spacing)?;
        println!("{}", p.display());
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let net = UNet::load(&a.model)?;
    let spacing = [a.spacing[0], a.spacing[1], a.spacing[2]];
    let report = evaluate_manifest(&net, &read_manifest(&a.manifest)?, spacing)?;
    report.write(&a.out)?;
    print!("{}", report.to_text());
    Ok(())
}

fn fid_cmd(a: FidArgs) -> Result<()> {
    let fx = extractor(a.weights.as_deref())?;
    let (ma, mb) = (read_manifest(&a.a)?, read_manifest(&a.b)?);
    println!("tap,fid");
    for tap in a.taps {
        let d = fid(&feature_stats(&ma, &fx, tap)?, &feature_stats(&mb, &fx, tap)?)?;
        println!("{tap},{d}");
    }
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let fx = extractor(a.weights.as_deref())?;
    let mut rows = Vec::new();
    let mut tags = Vec::new();
    for s in &a.sets {
        let Some((name, path)) = s.split_once('=') else {
            return Err(anyhow::Error::new(ConfigError).context(format!("--set expects name=manifest, got {s:?}")));
        };
        let m = read_manifest(Path::new(path))?;
        let step = m.len().div_ceil(a.per_set.max(1)).max(1);
        let sub = DatasetManifest {
            entries: m.entries.iter().step_by(step).cloned().collect(),
            root: m.root.clone(),
        };
        for r in images(&sub)? {
            rows.push(r);
            tags.push(name.to_string());
        }
    }
    if rows.len() < 4 {
        bail!("embedding needs at least 4 images, got {}", rows.len());
    }
    let feats = fx.features(&rows.iter().collect::<Vec<_>>(), 2048)?;
    let k = 1024.min(feats.rows - 1).min(feats.cols);
    let reduced = pca_reduce(&feats, k)?;
    let cfg = TsneConfig {
        perplexity: 30f64.min(((feats.rows - 1) / 3) as f64),
        seed: a.seed,
        ..TsneConfig::default()
    };
    let e = tsne_embed(&reduced, &tags, &cfg)?;
    e.write_csv(&a.out)?;
    println!("{} points, final KL {:.4} -> {}", e.coords.len(), e.kl.last().copied().unwrap_or(f64::NAN), a.out.display());
    Ok(())
}

fn plan(a: ExperimentArgs) -> Result<()> {
    let plan = plan_from_experiment(load_experiment(&a)?)?;
    print!("{}", plan.summary());
    println!("{} jobs", plan.jobs.len());
    Ok(())
}

/// Returns the number of failed jobs.
fn run(a: ExperimentArgs) -> Result<usize> {
    let plan = plan_from_experiment(load_experiment(&a)?)?;
    let total = plan.jobs.len();
    let mut n = 0;
    let ledger = run_plan_with(&plan, a.resume, |id, rec| {
        n += 1;
        let status = match &rec.status {
            JobStatus::Done => "done".to_string(),
            JobStatus::Failed { error } => format!("FAILED: {error}"),
            JobStatus::Skipped { reason } => format!("skipped: {reason}"),
        };
        eprintln!("[{n}/{total}] {id}: {status}");
    })?;
    let files = emit_report_bundle(&ledger, &plan.config.out)?;
    eprintln!("report: {} files in {}", files.len(), plan.config.out.join("report").display());
    Ok(ledger.failures().len())
}

fn report(a: ReportArgs) -> Result<()> {
    let out = match (&a.out, &a.config) {
        (Some(o), _) => o.clone(),
        (None, Some(c)) => ExperimentConfig::load(c)?.out,
        (None, None) => unreachable!("clap requires one of --out/--config"),
    };
    let ledger = RunLedger::load(&out.join(LEDGER_FILE))?;
    for f in emit_report_bundle(&ledger, &out)? {
        println!("{}", f.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<usize> {
    match cli.command {
        Command::Phantom(a) => phantom(a)?,
        Command::Prep(a) => prep(a)?,
        Command::Translate(a) => translate(a)?,
        Command::Generate(a) => generate(a)?,
        Command::SegmentTrain(a) => segment_train(a)?,
        Command::SegmentPredict(a) => segment_predict(a)?,
        Command::Evaluate(a) => evaluate(a)?,
        Command::Fid(a) => fid_cmd(a)?,
        Command::Embed(a) => embed(a)?,
        Command::Plan(a) => plan(a)?,
        Command::Run(a) => return run(a),
        Command::Report(a) => report(a)?,
    }
    Ok(0)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} job(s) failed; see ledger.json");
            ExitCode::from(1)
        }
        Err(e) if is_config_error(&e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_errors_are_recognized_through_context() {
        let e = anyhow::Error::new(mrshift::Error::config("line 3", "bad")).context("loading");
        assert!(is_config_error(&e));
        let e = anyhow::Error::new(ConfigError).context("x");
        assert!(is_config_error(&e));
        assert!(!is_config_error(&anyhow::anyhow!("boom")));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
