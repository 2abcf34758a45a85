//! Cross-vendor COV comparison and the report bundle: metric tables, FID
//! table and SVG plots, regenerated purely from ledger artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::ledger::RunLedger;
use crate::error::{Error, Result};
use crate::metrics::{cov_ratio, MetricsReport, METRIC_NAMES, TAPS};

/// Per-vendor mean Dice of one method and its coefficient of variation.
#[derive(Clone, Debug, PartialEq)]
pub struct CovRow {
    pub method: String,
    /// Aligned with the table's vendor list; `None` when a vendor is missing.
    pub means: Vec<Option<f64>>,
    /// `None` when any vendor is missing or the ratio is undefined.
    pub cov: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovTable {
    pub vendors: Vec<String>,
    pub rows: Vec<CovRow>,
}

impl CovTable {
    pub fn row(&self, method: &str) -> Option<&CovRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("method,{},cov\n", self.vendors.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r.means.iter().map(|m| m.map(|v| format!("{v:.6}")).unwrap_or_default()).collect();
            let cov = r.cov.map(|c| format!("{c:.6}")).unwrap_or_default();
            let _ = writeln!(s, "{},{},{cov}", r.method, cells.join(","));
        }
        s
    }
}

/// COV of per-vendor mean Dice for each method, lower bound included as an
/// ordinary row.
pub fn compare_cov(methods: &[(String, BTreeMap<String, f64>)], vendors: &[String]) -> CovTable {
    let rows = methods
        .iter()
        .map(|(name, means)| {
            let cells: Vec<Option<f64>> = vendors.iter().map(|v| means.get(v).copied()).collect();
            let cov = if cells.iter().all(Option::is_some) {
                cov_ratio(&cells.iter().flatten().copied().collect::<Vec<_>>()).ok()
            } else {
                None
            };
            CovRow {
                method: name.clone(),
                means: cells,
                cov,
            }
        })
        .collect();
    CovTable {
        vendors: vendors.to_vec(),
        rows,
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Row label of a job in the tables.
fn method_name(job: &str) -> String {
    match job {
        "bound/lower" => "Lower".into(),
        "bound/upper" => "Upper".into(),
        other => other.trim_start_matches("segment/").to_string(),
    }
}

fn method_order(job: &str) -> (u8, &str) {
    match job {
        "bound/lower" => (0, job),
        "bound/upper" => (1, job),
        _ => (2, job),
    }
}

/// Parses a headed numeric CSV into named columns.
fn columns(text: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let mut cols: Vec<(String, Vec<f64>)> = header.iter().map(|h| (h.to_string(), Vec::new())).collect();
    for (i, line) in lines.enumerate() {
        for (j, cell) in line.split(',').enumerate().take(cols.len()) {
            let v = cell.parse::<f64>().map_err(|e| Error::Parse {
                path: "history".into(),
                line: i + 2,
                msg: e.to_string(),
            })?;
            cols[j].1.push(v);
        }
    }
    Ok(cols)
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart of several series sharing the x axis.
pub fn line_plot_svg(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let pts = series.iter().flat_map(|(_, p)| p.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n");
    let _ = writeln!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"20\" text-anchor=\"middle\">{}</text>", w / 2.0, esc(title));
    let _ = writeln!(
        s,
        "<path d=\"M{m} {} H{} M{m} {} V{m}\" stroke=\"black\" fill=\"none\"/>",
        h - m,
        w - m,
        h - m
    );
    let _ = writeln!(s, "<text x=\"{m}\" y=\"{}\">{x0:.3}</text>", h - m + 15.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{x1:.3}</text>", w - m, h - m + 15.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y0:.4}</text>", m - 4.0, h - m);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y1:.4}</text>", m - 4.0, m + 4.0);
    for (i, (name, p)) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let d: Vec<String> = p
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .enumerate()
            .map(|(k, &(x, y))| format!("{}{:.2} {:.2}", if k == 0 { "M" } else { "L" }, sx(x), sy(y)))
            .collect();
        let _ = writeln!(s, "<path d=\"{}\" stroke=\"{c}\" fill=\"none\" stroke-width=\"1.5\"/>", d.join(" "));
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{c}\">{}</text>",
            w - m - 140.0,
            m + 14.0 * i as f64,
            esc(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Scatter of tagged 2D points, one colour per tag.
pub fn scatter_svg(title: &str, points: &[(f64, f64, String)]) -> String {
    let mut tags: Vec<&str> = points.iter().map(|p| p.2.as_str()).collect();
    tags.sort_unstable();
    tags.dedup();
    let (w, h, m) = (640.0, 640.0, 40.0);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y, _) in points {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if !(x1 > x0) {
        (x0, x1) = (x0.min(0.0) - 1.0, x0.max(0.0) + 1.0);
    }
    if !(y1 > y0) {
        (y0, y1) = (y0.min(0.0) - 1.0, y0.max(0.0) + 1.0);
    }
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n");
    let _ = writeln!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"20\" text-anchor=\"middle\">{}</text>", w / 2.0, esc(title));
    for (x, y, t) in points {
        let c = PALETTE[tags.iter().position(|g| g == t).unwrap_or(0) % PALETTE.len()];
        let px = m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
        let py = h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
        let _ = writeln!(s, "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"3\" fill=\"{c}\" fill-opacity=\"0.7\"/>");
    }
    for (i, t) in tags.iter().enumerate() {
        let _ = writeln!(
            s,
            "<text x=\"{m}\" y=\"{}\" fill=\"{}\">{}</text>",
            m + 14.0 * i as f64,
            PALETTE[i % PALETTE.len()],
            esc(t)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn history_plot(title: &str, csv: &str) -> Result<String> {
    let cols = columns(csv)?;
    let epoch = cols.first().map(|c| c.1.clone()).unwrap_or_default();
    let series: Vec<(String, Vec<(f64, f64)>)> = cols
        .iter()
        .skip(1)
        .filter(|(name, _)| name != "lr" && name != "steps")
        .map(|(name, v)| (name.clone(), epoch.iter().copied().zip(v.iter().copied()).collect()))
        .collect();
    Ok(line_plot_svg(title, &series))
}

fn file_stem(job: &str) -> String {
    job.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

/// Writes the report bundle under `<out>/report` and returns the files it
/// produced. Output depends only on the ledger and its artifacts.
pub fn emit_report_bundle(ledger: &RunLedger, out: &Path) -> Result<Vec<PathBuf>> {
    let dir = out.join("report");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let p = dir.join(name);
        write(&p, &body)?;
        written.push(p);
        Ok(())
    };

    // metric tables
    let mut reports: Vec<(&str, MetricsReport)> = Vec::new();
    for (job, path) in ledger.reports() {
        reports.push((job, MetricsReport::from_csv(&read(path)?)?));
    }
    reports.sort_by(|a, b| method_order(a.0).cmp(&method_order(b.0)));
    let mut vendors: Vec<String> = reports.iter().flat_map(|(_, r)| r.per_vendor.keys().cloned()).collect();
    vendors.sort();
    vendors.dedup();

    let mut csv = String::from("method,vendor");
    for m in METRIC_NAMES {
        let _ = write!(csv, ",{m},{m}_sd,{m}_excluded");
    }
    csv.push('\n');
    let mut text = String::new();
    for v in &vendors {
        let _ = writeln!(text, "[{v}]");
        let _ = writeln!(text, "{:<28}{}", "method", METRIC_NAMES.map(|m| format!("{m:>20}")).join(""));
        for (job, r) in &reports {
            let Some(sums) = r.per_vendor.get(v) else { continue };
            let _ = write!(csv, "{},{v}", method_name(job));
            let _ = write!(text, "{:<28}", method_name(job));
            for s in sums {
                let f = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
                let _ = write!(csv, ",{},{},{}", f(s.mean), f(s.std), s.excluded);
                let cell = match (s.mean, s.std) {
                    (Some(m), Some(d)) => format!("{m:.2}±{d:.2}"),
                    _ => "-".into(),
                };
                let _ = write!(text, "{cell:>20}");
            }
            csv.push('\n');
            text.push('\n');
        }
        text.push('\n');
    }
    put("metrics_table.csv".into(), csv)?;
    put("metrics_table.txt".into(), text)?;

    // COV across vendors
    let methods: Vec<(String, BTreeMap<String, f64>)> = reports
        .iter()
        .map(|(job, r)| Ok((method_name(job), r.vendor_means("Dice")?)))
        .collect::<Result<_>>()?;
    put("cov.csv".into(), compare_cov(&methods, &vendors).to_csv())?;

    // FID table
    let mut fid_csv = format!("set,{}\n", TAPS.map(|t| t.to_string()).join(","));
    for (job, rec) in ledger.jobs.iter().filter(|(_, r)| r.is_done()) {
        let Some(p) = rec.artifacts.get("fid") else { continue };
        let cols = columns(&read(p)?)?;
        let (taps, vals) = (&cols[0].1, &cols[1].1);
        let cells: Vec<String> = TAPS
            .iter()
            .map(|t| taps.iter().position(|x| *x as usize == *t).map(|i| format!("{:.6}", vals[i])).unwrap_or_default())
            .collect();
        let name = if job == "bound/lower" { "source".to_string() } else { job.trim_start_matches("pool/").to_string() };
        let _ = writeln!(fid_csv, "{name},{}", cells.join(","));
    }
    put("fid_table.csv".into(), fid_csv)?;

    // plots
    for (job, rec) in ledger.jobs.iter().filter(|(_, r)| r.is_done()) {
        if let Some(p) = rec.artifacts.get("history") {
            put(format!("loss_{}.svg", file_stem(job)), history_plot(job, &read(p)?)?)?;
        }
        if let Some(p) = rec.artifacts.get("embedding") {
            let mut pts = Vec::new();
            for line in read(p)?.lines().skip(1) {
                let f: Vec<&str> = line.splitn(3, ',').collect();
                if let [x, y, t] = f[..] {
                    let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::invalid(e.to_string()));
                    pts.push((parse(x)?, parse(y)?, t.to_string()));
                }
            }
            put("embedding.svg".into(), scatter_svg("t-SNE of pooled features", &pts))?;
        }
    }
    Ok(written)
}
