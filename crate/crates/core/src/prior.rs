//! Noise-prediction denoisers `ε(x_t, t)`.
//!
//! The sampler only sees the [`Denoiser`] trait. The implementations here
//! cover exact verification ([`GaussianDenoiser`], [`NoiseOracle`]),
//! reductions ([`ZeroDenoiser`]), a heuristic image prior for end-to-end
//! runs ([`SmoothingDenoiser`]) and a file/subprocess bridge for externally
//! trained models ([`ExternalDenoiser`]).

use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, CtError, Result};
use crate::grid::ImageGrid;
use crate::io;
use crate::schedules::NoiseSchedule;

/// Default blur width (pixels) of [`SmoothingDenoiser`] at full noise.
pub const DEFAULT_SMOOTHING_SIGMA_MAX: f64 = 2.0;

pub trait Denoiser: Send + Sync {
    /// Predicted noise for `x_t` at timestep `t`. Same shape as the input.
    fn predict_noise(&self, x_t: &ImageGrid, t: usize, schedule: &NoiseSchedule) -> Result<ImageGrid>;

    fn name(&self) -> &str;
}

/// `ε` implied by a clean estimate: `(x_t − √ᾱ x̂) / √(1 − ᾱ)`, zero at `ᾱ = 1`.
pub(crate) fn implied_noise(x_t: &ImageGrid, x_hat: &ImageGrid, alpha_bar: f64) -> ImageGrid {
    if alpha_bar >= 1.0 {
        return x_t.map(|_| 0.0);
    }
    let sa = alpha_bar.sqrt();
    let sn = (1.0 - alpha_bar).sqrt();
    let values = x_t
        .values()
        .iter()
        .zip(x_hat.values())
        .map(|(xt, xh)| (xt - sa * xh) / sn)
        .collect();
    x_t.with_values(values).expect("same shape")
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn predict_noise(&self, x_t: &ImageGrid, _t: usize, _schedule: &NoiseSchedule) -> Result<ImageGrid> {
        Ok(x_t.map(|_| 0.0))
    }

    fn name(&self) -> &str {
        "zero"
    }
}

/// Exact MMSE denoiser of the isotropic Gaussian prior `x₀ ~ N(μ, τ² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianDenoiser {
    mean_image: ImageGrid,
    variance_tau2: f64,
}

impl GaussianDenoiser {
    pub fn new(mean_image: ImageGrid, variance_tau2: f64) -> Result<Self> {
        if !(variance_tau2 > 0.0 && variance_tau2.is_finite()) {
            return Err(invalid(format!("prior variance must be positive, got {variance_tau2}")));
        }
        Ok(Self { mean_image, variance_tau2 })
    }

    pub fn mean_image(&self) -> &ImageGrid {
        &self.mean_image
    }

    pub fn variance_tau2(&self) -> f64 {
        self.variance_tau2
    }

    /// `E[x₀ | x_t] = (τ²√ᾱ x_t + (1 − ᾱ) μ) / (ᾱ τ² + 1 − ᾱ)`.
    pub fn conditional_mean(&self, x_t: &ImageGrid, alpha_bar: f64) -> Result<ImageGrid> {
        x_t.same_shape(&self.mean_image)?;
        let tau2 = self.variance_tau2;
        let sa = alpha_bar.sqrt();
        let denom = alpha_bar * tau2 + 1.0 - alpha_bar;
        let values = x_t
            .values()
            .iter()
            .zip(self.mean_image.values())
            .map(|(xt, mu)| (tau2 * sa * xt + (1.0 - alpha_bar) * mu) / denom)
            .collect();
        x_t.with_values(values)
    }
}

impl Denoiser for GaussianDenoiser {
    fn predict_noise(&self, x_t: &ImageGrid, t: usize, schedule: &NoiseSchedule) -> Result<ImageGrid> {
        let alpha_bar = schedule.alpha_bar(t);
        let m = self.conditional_mean(x_t, alpha_bar)?;
        Ok(implied_noise(x_t, &m, alpha_bar))
    }

    fn name(&self) -> &str {
        "gaussian"
    }
}

/// Returns a fixed noise realisation regardless of input. Inverting a
/// noising step with the very noise that produced it recovers `x₀`.
#[derive(Debug, Clone)]
pub struct NoiseOracle {
    noise: ImageGrid,
}

impl NoiseOracle {
    pub fn new(noise: ImageGrid) -> Self {
        Self { noise }
    }
}

impl Denoiser for NoiseOracle {
    fn predict_noise(&self, x_t: &ImageGrid, _t: usize, _schedule: &NoiseSchedule) -> Result<ImageGrid> {
        x_t.same_shape(&self.noise)?;
        Ok(self.noise.clone())
    }

    fn name(&self) -> &str {
        "oracle"
    }
}

/// Heuristic prior: the clean estimate is a Gaussian blur of `x_t/√ᾱ` whose
/// width `σ_max·√(1 − ᾱ)` grows with the noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingDenoiser {
    pub sigma_max: f64,
}

impl Default for SmoothingDenoiser {
    fn default() -> Self {
        Self { sigma_max: DEFAULT_SMOOTHING_SIGMA_MAX }
    }
}

impl SmoothingDenoiser {
    pub fn new(sigma_max: f64) -> Result<Self> {
        if !(sigma_max >= 0.0 && sigma_max.is_finite()) {
            return Err(invalid(format!("sigma_max must be >= 0, got {sigma_max}")));
        }
        Ok(Self { sigma_max })
    }

    pub fn clean_estimate(&self, x_t: &ImageGrid, alpha_bar: f64) -> ImageGrid {
        let inv = 1.0 / alpha_bar.sqrt();
        x_t.map(|v| v * inv).gaussian_blur(self.sigma_max * (1.0 - alpha_bar).sqrt())
    }
}

impl Denoiser for SmoothingDenoiser {
    fn predict_noise(&self, x_t: &ImageGrid, t: usize, schedule: &NoiseSchedule) -> Result<ImageGrid> {
        let alpha_bar = schedule.alpha_bar(t);
        Ok(implied_noise(x_t, &self.clean_estimate(x_t, alpha_bar), alpha_bar))
    }

    fn name(&self) -> &str {
        "smoothing"
    }
}

/// Bridge to an externally trained model.
///
/// For each call the sampler writes `x_t` to a temporary CTIMG1 file and
/// runs `program [args..] <input> <t> <alpha_bar> <output>`; the program must
/// write `ε` as CTIMG1 to `<output>` and exit with status 0 within
/// `timeout`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalDenoiser {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl ExternalDenoiser {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>, timeout: Duration) -> Self {
        Self { program: program.into(), args, timeout }
    }
}

impl Denoiser for ExternalDenoiser {
    fn predict_noise(&self, x_t: &ImageGrid, t: usize, schedule: &NoiseSchedule) -> Result<ImageGrid> {
        let fail = |msg: String| CtError::ExternalDenoiser(msg);
        let dir = tempfile::tempdir()?;
        let input = dir.path().join("x_t.ctimg");
        let output = dir.path().join("eps.ctimg");
        io::write_image(&input, x_t)?;

        let mut child = Command::new(&self.program)
            .args(&self.args)
            .arg(&input)
            .arg(t.to_string())
            .arg(format!("{:.17e}", schedule.alpha_bar(t)))
            .arg(&output)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| fail(format!("cannot start {}: {e}", self.program.display())))?;

        let started = Instant::now();
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if started.elapsed() >= self.timeout {
                let _ = child.kill();
                let _ = child.wait();
                return Err(fail(format!("timed out after {:?}", self.timeout)));
            }
            std::thread::sleep(Duration::from_millis(5));
        };
        if !status.success() {
            return Err(fail(format!("exited with {status}")));
        }
        let eps = io::read_image(&output).map_err(|e| fail(format!("unreadable output: {e}")))?;
        x_t.same_shape(&eps)?;
        Ok(eps)
    }

    fn name(&self) -> &str {
        "external"
    }
}
