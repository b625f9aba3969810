//! Result tables and image dumps.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use ctlab_core::grid::ImageGrid;
use ctlab_core::metrics::format_db;
use serde::{Deserialize, Serialize};

/// `git describe`-style version recorded in every row.
pub fn version() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

/// One result row. The leading columns are the stable metrics schema; the
/// rest are provenance and are left empty where they do not apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub domain: String,
    pub prior: String,
    pub n_views: usize,
    pub nfe: Option<usize>,
    pub schedule_kind: Option<String>,
    pub gamma_max: Option<f64>,
    pub seed: u64,
    pub psnr_db: Option<String>,
    pub ssim: Option<String>,
    pub data_range_mode: String,
    pub experiment: String,
    pub method: String,
    pub resolution: usize,
    pub condition: String,
    pub gamma_min: Option<f64>,
    pub config_hash: String,
    pub version: String,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn psnr_value(&self) -> Option<f64> {
        self.psnr_db.as_deref().map(|s| if s == "inf" { f64::INFINITY } else { s.parse().unwrap_or(f64::NAN) })
    }

    pub fn ssim_value(&self) -> Option<f64> {
        self.ssim.as_deref().and_then(|s| s.parse().ok())
    }

    pub fn set_metrics(&mut self, psnr_db: f64, ssim: f64) {
        self.psnr_db = Some(format_db(psnr_db));
        self.ssim = Some(format!("{ssim:.6}"));
    }

    /// Every column except the seed and outcome: rows sharing it belong to
    /// the same cell of the experiment grid.
    fn group_key(&self) -> (String, String, String, usize, String, usize, String, Option<usize>, String) {
        (
            self.domain.clone(),
            self.condition.clone(),
            self.method.clone(),
            self.resolution,
            self.prior.clone(),
            self.n_views,
            self.schedule_kind.clone().unwrap_or_default(),
            self.nfe,
            format!("{:?}/{:?}", self.gamma_max, self.gamma_min),
        )
    }
}

pub fn write_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

/// Per-cell mean and population standard deviation over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub domain: String,
    pub condition: String,
    pub method: String,
    pub resolution: usize,
    pub prior: String,
    pub n_views: usize,
    pub schedule_kind: Option<String>,
    pub gamma_max: Option<f64>,
    pub gamma_min: Option<f64>,
    pub nfe: Option<usize>,
    pub n_seeds: usize,
    pub n_failed: usize,
    pub mean_psnr_db: Option<String>,
    pub std_psnr_db: Option<String>,
    pub mean_ssim: Option<String>,
    pub std_ssim: Option<String>,
}

pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    // first-appearance order keeps the summary in canonical grid order
    let mut order = Vec::new();
    let mut groups: BTreeMap<_, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        let key = r.group_key();
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            let first = members[0];
            let ok: Vec<&&ResultRow> = members.iter().filter(|r| r.error.is_none()).collect();
            let stats = |f: &dyn Fn(&ResultRow) -> Option<f64>| -> (Option<String>, Option<String>) {
                let vals: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                if vals.is_empty() {
                    return (None, None);
                }
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                if mean.is_infinite() {
                    return (Some(format_db(mean)), None);
                }
                let std = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
                (Some(format!("{mean:.6}")), Some(format!("{std:.6}")))
            };
            let (mean_psnr_db, std_psnr_db) = stats(&|r| r.psnr_value());
            let (mean_ssim, std_ssim) = stats(&|r| r.ssim_value());
            SummaryRow {
                domain: first.domain.clone(),
                condition: first.condition.clone(),
                method: first.method.clone(),
                resolution: first.resolution,
                prior: first.prior.clone(),
                n_views: first.n_views,
                schedule_kind: first.schedule_kind.clone(),
                gamma_max: first.gamma_max,
                gamma_min: first.gamma_min,
                nfe: first.nfe,
                n_seeds: members.len(),
                n_failed: members.len() - ok.len(),
                mean_psnr_db,
                std_psnr_db,
                mean_ssim,
                std_ssim,
            }
        })
        .collect()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format line profile: one line per pixel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRow {
    pub run_id: String,
    pub domain: String,
    pub condition: String,
    pub method: String,
    pub resolution: usize,
    pub n_views: usize,
    pub row: usize,
    pub column: usize,
    pub truth: String,
    pub recon: String,
}

pub fn write_profiles(path: &Path, rows: &[ProfileRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// 8-bit grayscale PNG with `[lo, hi]` mapped to `[0, 255]`. Rows are
/// flipped so that +y points up in the picture.
pub fn write_png(path: &Path, img: &ImageGrid, lo: f64, hi: f64) -> Result<()> {
    let n = img.side();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut data = Vec::with_capacity(n * n);
    for r in (0..n).rev() {
        for &v in img.row(r) {
            data.push((((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let buf = image::GrayImage::from_raw(n as u32, n as u32, data).expect("buffer matches size");
    buf.save(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}
