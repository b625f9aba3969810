//! Test domains, reconstruction methods and prior choices.

use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Result};
use ctlab_core::grid::ImageGrid;
use ctlab_core::phantom::{experimental_shepp_logan, rasterize, standard_shepp_logan};
use ctlab_core::prior::{
    Denoiser, ExternalDenoiser, GaussianDenoiser, SmoothingDenoiser, ZeroDenoiser, DEFAULT_SMOOTHING_SIGMA_MAX,
};
use serde::{Deserialize, Serialize};

/// Blur applied to the experimental surrogate in the `sim_recon_surrogate`
/// domain, in pixels at 128².
pub const SURROGATE_PSF_PX: f64 = 0.75;

/// Resolution at which pixel-valued widths are specified.
pub const REFERENCE_SIDE: f64 = 128.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// Standard phantom.
    SimStd,
    /// Experimental phantom design, piecewise constant.
    SimCad,
    /// Experimental phantom design blurred to mimic a reconstructed scan.
    SimReconSurrogate,
}

impl Domain {
    pub fn name(&self) -> &'static str {
        match self {
            Domain::SimStd => "sim_std",
            Domain::SimCad => "sim_cad",
            Domain::SimReconSurrogate => "sim_recon_surrogate",
        }
    }

    pub fn ground_truth(&self, side: usize, pixel_size_mm: f64) -> Result<ImageGrid> {
        Ok(match self {
            Domain::SimStd => rasterize(&standard_shepp_logan(), side, pixel_size_mm)?,
            Domain::SimCad => rasterize(&experimental_shepp_logan(), side, pixel_size_mm)?,
            Domain::SimReconSurrogate => rasterize(&experimental_shepp_logan(), side, pixel_size_mm)?
                .gaussian_blur(SURROGATE_PSF_PX * side as f64 / REFERENCE_SIDE),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Measurement simulated with the reconstruction operator.
    Clean,
    /// Measurement passed through the mismatch injector.
    Mismatched,
}

impl Condition {
    pub fn name(&self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::Mismatched => "mismatched",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cgls,
    Dds,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Cgls => "cgls",
            Method::Dds => "dds",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    Zero,
    /// `sigma_max` in pixels at 128², scaled with resolution.
    Smoothing {
        #[serde(default = "default_sigma_max")]
        sigma_max: f64,
    },
    /// Gaussian prior centred on the standard phantom.
    Gaussian {
        #[serde(default = "default_tau2")]
        tau2: f64,
    },
    External {
        program: PathBuf,
        #[serde(default)]
        args: Vec<String>,
        #[serde(default = "default_timeout")]
        timeout_s: f64,
    },
}

fn default_sigma_max() -> f64 {
    DEFAULT_SMOOTHING_SIGMA_MAX
}

fn default_tau2() -> f64 {
    0.01
}

fn default_timeout() -> f64 {
    60.0
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::Smoothing { sigma_max: DEFAULT_SMOOTHING_SIGMA_MAX }
    }
}

impl PriorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            PriorSpec::Zero => "zero",
            PriorSpec::Smoothing { .. } => "smoothing",
            PriorSpec::Gaussian { .. } => "gaussian",
            PriorSpec::External { .. } => "external",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PriorSpec::Smoothing { sigma_max } if !(*sigma_max >= 0.0 && sigma_max.is_finite()) => {
                bail!("sigma_max must be finite and >= 0")
            }
            PriorSpec::Gaussian { tau2 } if !(*tau2 > 0.0 && tau2.is_finite()) => bail!("tau2 must be positive"),
            PriorSpec::External { timeout_s, .. } if !(*timeout_s > 0.0 && timeout_s.is_finite()) => {
                bail!("timeout_s must be positive")
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self, side: usize, pixel_size_mm: f64) -> Result<Box<dyn Denoiser>> {
        Ok(match self {
            PriorSpec::Zero => Box::new(ZeroDenoiser),
            PriorSpec::Smoothing { sigma_max } => {
                Box::new(SmoothingDenoiser::new(sigma_max * side as f64 / REFERENCE_SIDE)?)
            }
            PriorSpec::Gaussian { tau2 } => {
                Box::new(GaussianDenoiser::new(Domain::SimStd.ground_truth(side, pixel_size_mm)?, *tau2)?)
            }
            PriorSpec::External { program, args, timeout_s } => Box::new(ExternalDenoiser::new(
                program.clone(),
                args.clone(),
                Duration::from_secs_f64(*timeout_s),
            )),
        })
    }
}
