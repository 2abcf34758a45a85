//! Per-volume scoring, per-vendor aggregation and the coefficient of
//! variation used to compare robustness across scanners.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::hausdorff::{hausdorff, DEFAULT_PERCENTILE};
use super::overlap::{avd, dice, fpr, lesion_f1, lesion_recall};
use crate::error::{Error, Result};
use crate::imaging::manifest::{DatasetManifest, LabelAccess};
use crate::imaging::volume::{Mask3, Raster, Volume, VolumeMeta};
use crate::segmentation::{predict_volume, UNet};

/// Column order of every report.
pub const METRIC_NAMES: [&str; 6] = ["Dice", "HD", "AVD", "L-Recall", "L-F1", "FPR"];

/// Sample standard deviation over the mean.
pub fn cov_ratio(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::Undefined("cov_ratio"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(Error::Undefined("cov_ratio"));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(var.sqrt() / mean)
}

/// Scores for one volume. A metric is `None` when it is undefined for the
/// case (for instance HD with an empty prediction).
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub dataset: String,
    pub vendor: String,
    pub subject: String,
    pub dice: Option<f64>,
    pub hd: Option<f64>,
    pub avd: Option<f64>,
    pub l_recall: Option<f64>,
    pub l_f1: Option<f64>,
    pub fpr: Option<f64>,
}

impl MetricsRecord {
    pub fn values(&self) -> [Option<f64>; 6] {
        [self.dice, self.hd, self.avd, self.l_recall, self.l_f1, self.fpr]
    }
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Undefined(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Scores `pred` against the lesion annotation of `v`.
pub fn score_case(pred: &Mask3, v: &Volume) -> Result<MetricsRecord> {
    let gt = v.lesion_mask.as_ref().ok_or_else(|| Error::Unlabeled(v.meta.subject.clone()))?;
    Ok(MetricsRecord {
        dataset: v.meta.dataset.clone(),
        vendor: v.meta.vendor.clone(),
        subject: v.meta.subject.clone(),
        dice: defined(dice(pred, gt))?,
        hd: defined(hausdorff(pred, gt, v.spacing, DEFAULT_PERCENTILE))?,
        avd: defined(avd(pred, gt))?,
        l_recall: defined(lesion_recall(pred, gt))?,
        l_f1: defined(lesion_f1(pred, gt))?,
        fpr: defined(fpr(pred, gt, &v.brain_mask))?,
    })
}

/// Mean and sample standard deviation over the defined values; `excluded`
/// counts the cases where the metric was undefined. A single value has
/// standard deviation 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
    pub excluded: usize,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let mut xs = Vec::new();
        let mut excluded = 0;
        for v in values {
            match v {
                Some(x) => xs.push(x),
                None => excluded += 1,
            }
        }
        if xs.is_empty() {
            return Self {
                mean: None,
                std: None,
                n: 0,
                excluded,
            };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self {
            mean: Some(mean),
            std: Some(std),
            n: xs.len(),
            excluded,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    /// In evaluation order.
    pub records: Vec<MetricsRecord>,
    /// Vendor → one summary per entry of [`METRIC_NAMES`].
    pub per_vendor: BTreeMap<String, [Summary; 6]>,
}

fn summarize<'a>(records: impl Iterator<Item = &'a MetricsRecord> + Clone) -> [Summary; 6] {
    std::array::from_fn(|k| Summary::of(records.clone().map(|r| r.values()[k])))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl MetricsReport {
    pub fn from_records(records: Vec<MetricsRecord>) -> Self {
        let mut per_vendor = BTreeMap::new();
        let vendors: Vec<String> = records.iter().map(|r| r.vendor.clone()).collect();
        for v in vendors {
            if per_vendor.contains_key(&v) {
                continue;
            }
            let s = summarize(records.iter().filter(|r| r.vendor == v));
            per_vendor.insert(v, s);
        }
        Self { records, per_vendor }
    }

    /// Summary over every record.
    pub fn overall(&self) -> [Summary; 6] {
        summarize(self.records.iter())
    }

    /// Index of a metric in [`METRIC_NAMES`].
    pub fn metric_index(name: &str) -> Result<usize> {
        METRIC_NAMES
            .iter()
            .position(|m| m.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::invalid(format!("unknown metric `{name}`")))
    }

    /// Per-vendor means of one metric, skipping vendors where it was never
    /// defined.
    pub fn vendor_means(&self, metric: &str) -> Result<BTreeMap<String, f64>> {
        let k = Self::metric_index(metric)?;
        Ok(self.per_vendor.iter().filter_map(|(v, s)| s[k].mean.map(|m| (v.clone(), m))).collect())
    }

    /// One row per volume.
    pub fn to_csv(&self) -> String {
        let mut s = format!("dataset,vendor,subject,{}\n", METRIC_NAMES.join(","));
        for r in &self.records {
            let vals: Vec<String> = r.values().iter().map(|v| fmt_opt(*v)).collect();
            let _ = writeln!(s, "{},{},{},{}", r.dataset, r.vendor, r.subject, vals.join(","));
        }
        s
    }

    /// Inverse of [`MetricsReport::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Parse {
            path: "metrics.csv".into(),
            line,
            msg,
        };
        let mut lines = text.lines();
        let header = format!("dataset,vendor,subject,{}", METRIC_NAMES.join(","));
        if lines.next() != Some(header.as_str()) {
            return Err(bad(1, "unexpected header".into()));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 + METRIC_NAMES.len() {
                return Err(bad(i + 2, format!("expected {} fields", 3 + METRIC_NAMES.len())));
            }
            let mut v = [None; 6];
            for (k, slot) in v.iter_mut().enumerate() {
                let cell = f[3 + k];
                if !cell.is_empty() {
                    *slot = Some(cell.parse::<f64>().map_err(|e| bad(i + 2, e.to_string()))?);
                }
            }
            records.push(MetricsRecord {
                dataset: f[0].into(),
                vendor: f[1].into(),
                subject: f[2].into(),
                dice: v[0],
                hd: v[1],
                avd: v[2],
                l_recall: v[3],
                l_f1: v[4],
                fpr: v[5],
            });
        }
        Ok(Self::from_records(records))
    }

    /// Aggregate blocks laid out vendor by vendor, mean ± std per metric.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let block = |s: &mut String, title: &str, sums: &[Summary; 6]| {
            let _ = writeln!(s, "[{title}]");
            for (name, m) in METRIC_NAMES.iter().zip(sums) {
                match (m.mean, m.std) {
                    (Some(mean), Some(std)) => {
                        let _ = write!(s, "{name:<9} {mean:>10.4} ± {std:<10.4} n={}", m.n);
                    }
                    _ => {
                        let _ = write!(s, "{name:<9} {:>10} ± {:<10} n=0", "-", "-");
                    }
                }
                let _ = writeln!(s, " excluded={}", m.excluded);
            }
        };
        for (v, sums) in &self.per_vendor {
            block(&mut s, v, sums);
        }
        block(&mut s, "all", &self.overall());
        s
    }

    /// Writes `metrics.csv` and `metrics.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [("metrics.csv", self.to_csv()), ("metrics.txt", self.to_text())] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// Scores precomputed predictions, one per volume.
pub fn evaluate_predictions(cases: &[(Mask3, &Volume)]) -> Result<MetricsReport> {
    let records = cases.iter().map(|(p, v)| score_case(p, v)).collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_records(records))
}

/// Segments every labelled volume with `net` and scores it.
pub fn evaluate_model(net: &UNet, volumes: &[Volume]) -> Result<MetricsReport> {
    let mut records = Vec::with_capacity(volumes.len());
    for v in volumes {
        records.push(score_case(&predict_volume(net, v)?, v)?);
    }
    Ok(MetricsReport::from_records(records))
}

/// Regroups labelled slices into per-subject stacks (ordered by slice
/// index) with brain and lesion masks taken from the labels.
pub fn slice_stacks(m: &DatasetManifest, spacing: [f64; 3]) -> Result<Vec<Volume>> {
    let mut groups: Vec<(VolumeMeta, Vec<usize>)> = Vec::new();
    for (i, e) in m.entries.iter().enumerate() {
        let meta = VolumeMeta {
            dataset: e.domain.dataset.clone(),
            vendor: e.domain.vendor.clone(),
            subject: e.subject.clone(),
        };
        match groups.iter_mut().find(|(k, _)| *k == meta) {
            Some((_, idx)) => idx.push(i),
            None => groups.push((meta, vec![i])),
        }
    }
    let mut out = Vec::with_capacity(groups.len());
    for (meta, mut idx) in groups {
        idx.sort_by_key(|&i| m.entries[i].slice_index);
        let recs = idx
            .iter()
            .map(|&i| m.load(&m.entries[i], LabelAccess::Evaluation))
            .collect::<Result<Vec<_>>>()?;
        let (rows, cols) = recs[0].image.shape();
        let dims = [cols, rows, recs.len()];
        let mut voxels = Vec::with_capacity(rows * cols * recs.len());
        let mut brain = Vec::with_capacity(voxels.capacity());
        let mut lesion = Vec::with_capacity(voxels.capacity());
        for r in &recs {
            if r.image.shape() != (rows, cols) {
                return Err(Error::invalid(format!("{} mixes slice sizes", meta.subject)));
            }
            let label = r.label.as_ref().ok_or_else(|| Error::Unlabeled(r.describe()))?;
            voxels.extend_from_slice(&r.image.data);
            brain.extend(label.brain_mask());
            lesion.extend(label.lesion_mask());
        }
        out.push(Volume::new(
            dims,
            spacing,
            voxels,
            Mask3::new(dims, brain)?,
            Some(Mask3::new(dims, lesion)?),
            meta,
        )?);
    }
    Ok(out)
}

/// Segments every stack of [`slice_stacks`] slice by slice and scores it.
pub fn evaluate_manifest(net: &UNet, m: &DatasetManifest, spacing: [f64; 3]) -> Result<MetricsReport> {
    let mut records = Vec::new();
    for v in slice_stacks(m, spacing)? {
        let [cols, rows, nz] = v.dims;
        let slices: Vec<Raster> = (0..nz).map(|z| Raster::new(rows, cols, v.slice(z).to_vec())).collect::<Result<_>>()?;
        let preds = net.predict_batch(&slices.iter().collect::<Vec<_>>())?;
        let mut mask = Mask3::empty(v.dims);
        for (z, p) in preds.iter().enumerate() {
            mask.slice_mut(z).copy_from_slice(p);
        }
        records.push(score_case(&mask, &v)?);
    }
    Ok(MetricsReport::from_records(records))
}
