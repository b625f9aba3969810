//! Image-quality metrics and seed ensembles.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, CtError, Result};
use crate::grid::ImageGrid;

pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// Seeds per cell in ensemble statistics.
pub const DEFAULT_N_SEEDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataRange {
    /// `max(ref) − min(ref)`.
    Auto,
    Fixed(f64),
}

impl DataRange {
    pub fn resolve(&self, reference: &ImageGrid) -> f64 {
        match *self {
            DataRange::Auto => {
                let (lo, hi) = reference.min_max();
                hi - lo
            }
            DataRange::Fixed(r) => r,
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            DataRange::Auto => "auto",
            DataRange::Fixed(_) => "fixed",
        }
    }
}

fn check_shapes(x: &ImageGrid, reference: &ImageGrid) -> Result<()> {
    x.same_shape(reference)
}

/// `10·log10(range² / MSE)`; identical images give `+∞`.
pub fn psnr(x: &ImageGrid, reference: &ImageGrid, range: DataRange) -> Result<f64> {
    check_shapes(x, reference)?;
    let n = x.values().len() as f64;
    let mse = x
        .values()
        .iter()
        .zip(reference.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let r = range.resolve(reference);
    Ok(10.0 * (r * r / mse).log10())
}

/// Decibel value as written to result tables (`inf` for identical images).
pub fn format_db(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as i64;
    let w: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering: output side is `n − window + 1`.
fn filter_valid(values: &[f64], n: usize, w: &[f64]) -> Vec<f64> {
    let k = w.len();
    let m = n - k + 1;
    let mut rows = vec![0.0; n * m];
    for r in 0..n {
        for c in 0..m {
            rows[r * m + c] = (0..k).map(|j| w[j] * values[r * n + c + j]).sum();
        }
    }
    let mut out = vec![0.0; m * m];
    for r in 0..m {
        for c in 0..m {
            out[r * m + c] = (0..k).map(|j| w[j] * rows[(r + j) * m + c]).sum();
        }
    }
    out
}

/// Mean structural similarity over all fully contained 11×11 Gaussian
/// (σ = 1.5) windows.
pub fn ssim(x: &ImageGrid, reference: &ImageGrid, range: DataRange) -> Result<f64> {
    check_shapes(x, reference)?;
    let n = x.side();
    if n < SSIM_WINDOW {
        return Err(invalid(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {n}x{n}")));
    }
    let l = range.resolve(reference);
    let c1 = (SSIM_K1 * l).powi(2);
    let c2 = (SSIM_K2 * l).powi(2);
    let w = gaussian_window();
    let a = x.values();
    let b = reference.values();
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(u, v)| u * v).collect();
    let mu_a = filter_valid(a, n, &w);
    let mu_b = filter_valid(b, n, &w);
    let e_aa = filter_valid(&aa, n, &w);
    let e_bb = filter_valid(&bb, n, &w);
    let e_ab = filter_valid(&ab, n, &w);
    let count = mu_a.len();
    let total: f64 = (0..count)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / count as f64)
}

pub fn line_profile(x: &ImageGrid, row: usize) -> Result<Vec<f64>> {
    if row >= x.side() {
        return Err(CtError::InvalidParameter(format!("row {row} out of bounds for {0}x{0} image", x.side())));
    }
    Ok(x.row(row).to_vec())
}

/// Index ranges `[start, end)` of plateaus strictly lower than both
/// neighbours. Plateaus touching either end of the profile are ignored.
pub fn local_minima(profile: &[f64]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < profile.len() {
        let mut j = i;
        while j + 1 < profile.len() && profile[j + 1] == profile[i] {
            j += 1;
        }
        if j + 1 < profile.len() && profile[i - 1] > profile[i] && profile[j + 1] > profile[i] {
            out.push((i, j + 1));
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub n_seeds: usize,
    pub std_psnr_db: f64,
    pub std_ssim: f64,
}

impl MetricReport {
    pub fn single(psnr_db: f64, ssim: f64) -> Self {
        Self { psnr_db, ssim, n_seeds: 1, std_psnr_db: 0.0, std_ssim: 0.0 }
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and population standard deviation across per-seed reports.
pub fn ensemble(reports: &[MetricReport]) -> Result<MetricReport> {
    if reports.is_empty() {
        return Err(invalid("ensemble of zero reports"));
    }
    let (psnr_db, std_psnr_db) = mean_std(reports.iter().map(|r| r.psnr_db));
    let (ssim, std_ssim) = mean_std(reports.iter().map(|r| r.ssim));
    Ok(MetricReport { psnr_db, ssim, n_seeds: reports.len(), std_psnr_db, std_ssim })
}
