//! Reverse-diffusion sampling with measurement consistency.
//!
//! Each step of [`dds_reconstruct`] forms the Tweedie estimate of the clean
//! image, pulls it towards the measurements (CG proximal step, plain CG or a
//! single gradient step, depending on [`ConsistencyForm`]) and re-noises the
//! corrected estimate to the next timestep with a DDIM update.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CtError, Result};
use crate::geometry::{Projector, Sinogram};
use crate::grid::ImageGrid;
use crate::prior::{implied_noise, Denoiser};
use crate::schedules::{gamma_at, make_timesteps, GammaSchedule, NoiseSchedule};
use crate::seed::rng_from_seed;
use crate::solvers::{data_residual, dds_data_consistency, DEFAULT_M_STEPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyForm {
    /// CG on `(γ AᵀA + I) x = x̂ + γ Aᵀ y` from `x̂`.
    Regularized,
    /// CG on `AᵀA x = Aᵀ y` from `x̂`; the likelihood weight is unused.
    Unregularized,
    /// One explicit gradient step `x̂ − γ Aᵀ(A x̂ − y)`.
    GradientSurrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub nfe: usize,
    pub m_steps: usize,
    pub eta: f64,
    /// Measurement noise level. Recorded only; the likelihood weight already
    /// sets the data/prior balance.
    pub sigma_y: f64,
    pub gamma_schedule: GammaSchedule,
    pub seed: u64,
    pub form: ConsistencyForm,
    /// Keep the corrected estimate of every step in the trajectory.
    pub snapshots: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            nfe: 1000,
            m_steps: DEFAULT_M_STEPS,
            eta: 0.85,
            sigma_y: 1e-7,
            gamma_schedule: GammaSchedule::constant(1.0),
            seed: 0,
            form: ConsistencyForm::Regularized,
            snapshots: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(invalid(format!("eta must be in [0, 1], got {}", self.eta)));
        }
        if self.nfe == 0 || self.m_steps == 0 {
            return Err(invalid("nfe and m_steps must be at least 1"));
        }
        self.gamma_schedule.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: usize,
    pub gamma: f64,
    /// `‖y − A x̂‖` of the Tweedie estimate, before data consistency.
    pub residual_before: f64,
    /// `‖y − A x̂'‖` after data consistency.
    pub residual: f64,
    pub snapshot: Option<ImageGrid>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSV with header `step,t,gamma,residual_before,residual`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "step,t,gamma,residual_before,residual")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{},{}", r.step, r.t, r.gamma, r.residual_before, r.residual)?;
        }
        Ok(())
    }
}

/// Tweedie estimate from a noise prediction: `(x_t − √(1−ᾱ) ε) / √ᾱ`.
pub fn tweedie_from_noise(x_t: &ImageGrid, eps: &ImageGrid, alpha_bar: f64) -> Result<ImageGrid> {
    if !(alpha_bar > 0.0) {
        return Err(invalid("Tweedie estimate needs alpha_bar > 0"));
    }
    x_t.same_shape(eps)?;
    let sa = alpha_bar.sqrt();
    let sn = (1.0 - alpha_bar).sqrt();
    let values = x_t.values().iter().zip(eps.values()).map(|(x, e)| (x - sn * e) / sa).collect();
    x_t.with_values(values)
}

pub fn tweedie(x_t: &ImageGrid, t: usize, denoiser: &dyn Denoiser, schedule: &NoiseSchedule) -> Result<ImageGrid> {
    if t > schedule.total_steps() {
        return Err(invalid(format!("timestep {t} beyond schedule length {}", schedule.total_steps())));
    }
    let eps = denoiser.predict_noise(x_t, t, schedule)?;
    x_t.same_shape(&eps)?;
    tweedie_from_noise(x_t, &eps, schedule.alpha_bar(t))
}

/// Standard deviation of the fresh noise injected by a DDIM step from
/// `ᾱ_t` to `ᾱ_prev`.
pub fn ddim_sigma(alpha_t: f64, alpha_prev: f64, eta: f64) -> f64 {
    if eta == 0.0 || alpha_t >= 1.0 {
        return 0.0;
    }
    let ratio = ((1.0 - alpha_prev) / (1.0 - alpha_t)).max(0.0);
    eta * ratio.sqrt() * (1.0 - alpha_t / alpha_prev).max(0.0).sqrt()
}

/// DDIM update from `x_t` to `x_{t_prev}` given the clean estimate `x_hat`.
/// The noise direction is re-derived from `(x_t, x_hat)`, so a corrected
/// estimate stays self-consistent. No random numbers are drawn when the
/// injected noise level is zero.
pub fn ddim_step<R: Rng + ?Sized>(
    x_hat: &ImageGrid,
    x_t: &ImageGrid,
    t: usize,
    t_prev: usize,
    eta: f64,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<ImageGrid> {
    if t_prev >= t || t > schedule.total_steps() {
        return Err(invalid(format!("invalid DDIM transition {t} -> {t_prev}")));
    }
    x_hat.same_shape(x_t)?;
    let alpha_t = schedule.alpha_bar(t);
    let alpha_prev = schedule.alpha_bar(t_prev);
    let eps = implied_noise(x_t, x_hat, alpha_t);
    let sigma = ddim_sigma(alpha_t, alpha_prev, eta);
    let direction = (1.0 - alpha_prev - sigma * sigma).max(0.0).sqrt();
    let sa = alpha_prev.sqrt();
    let mut values: Vec<f64> = x_hat
        .values()
        .iter()
        .zip(eps.values())
        .map(|(xh, e)| sa * xh + direction * e)
        .collect();
    if sigma > 0.0 {
        for v in values.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += sigma * z;
        }
    }
    x_hat.with_values(values)
}

/// `x̂ − γ Aᵀ(A x̂ − y)`.
pub fn dps_gradient_step(x_hat: &ImageGrid, y: &Sinogram, projector: &Projector, gamma_t: f64) -> Result<ImageGrid> {
    projector.check(y)?;
    if x_hat.side() != projector.side() {
        return Err(CtError::ShapeMismatch {
            expected: format!("{0}x{0} image", projector.side()),
            found: format!("{0}x{0} image", x_hat.side()),
        });
    }
    let mut r = vec![0.0; projector.n_rays()];
    projector.forward_into(x_hat.values(), &mut r);
    for (ri, yi) in r.iter_mut().zip(y.values()) {
        *ri -= yi;
    }
    let mut grad = vec![0.0; projector.n_pixels()];
    projector.adjoint_into(&r, &mut grad);
    let values = x_hat.values().iter().zip(&grad).map(|(x, g)| x - gamma_t * g).collect();
    x_hat.with_values(values)
}

pub fn dds_reconstruct(
    y: &Sinogram,
    projector: &Projector,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<(ImageGrid, Trajectory)> {
    let mut rng = rng_from_seed(cfg.seed);
    dds_reconstruct_with_rng(y, projector, denoiser, schedule, cfg, &mut rng)
}

/// As [`dds_reconstruct`], drawing from a caller-supplied source instead of
/// `cfg.seed`.
pub fn dds_reconstruct_with_rng<R: Rng + ?Sized>(
    y: &Sinogram,
    projector: &Projector,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<(ImageGrid, Trajectory)> {
    cfg.validate()?;
    projector.check(y)?;
    let total = schedule.total_steps();
    let plan = make_timesteps(total, cfg.nfe)?;

    let init: Vec<f64> = (0..projector.n_pixels()).map(|_| StandardNormal.sample(rng)).collect();
    let mut x_t = ImageGrid::new(projector.side(), projector.pixel_size_mm(), init)?;
    let mut trajectory = Trajectory::default();
    let mut result = None;

    for (step, (t, t_prev)) in plan.transitions().enumerate() {
        let wrap = |e: CtError| CtError::SamplerStep { step, t, source: Box::new(e) };
        let x_hat = tweedie(&x_t, t, denoiser, schedule).map_err(wrap)?;
        let gamma = gamma_at(&cfg.gamma_schedule, t, total);
        let corrected = match cfg.form {
            ConsistencyForm::Regularized => {
                dds_data_consistency(&x_hat, y, projector, Some(gamma), cfg.m_steps).map_err(wrap)?.0
            }
            ConsistencyForm::Unregularized => {
                dds_data_consistency(&x_hat, y, projector, None, cfg.m_steps).map_err(wrap)?.0
            }
            ConsistencyForm::GradientSurrogate => dps_gradient_step(&x_hat, y, projector, gamma).map_err(wrap)?,
        };
        if corrected.values().iter().any(|v| !v.is_finite()) {
            return Err(wrap(CtError::Divergence { iteration: cfg.m_steps }));
        }
        trajectory.records.push(StepRecord {
            step,
            t,
            gamma,
            residual_before: data_residual(&x_hat, y, projector),
            residual: data_residual(&corrected, y, projector),
            snapshot: cfg.snapshots.then(|| corrected.clone()),
        });
        if t_prev == 0 {
            result = Some(corrected);
        } else {
            x_t = ddim_step(&corrected, &x_t, t, t_prev, cfg.eta, schedule, rng).map_err(wrap)?;
        }
    }
    let image = result.expect("timestep plans end at t = 1");
    Ok((image, trajectory))
}
