//! Forward-model mismatch injection.
//!
//! Stages, in order, each disabled when its parameter is zero:
//!
//! 1. angular offset: the sinogram is simulated with every view rotated by
//!    the offset but labelled with the nominal geometry
//!    ([`simulate_measurement`] only, since it needs the object);
//! 2. centre-of-rotation shift by a fractional number of channels (linear
//!    interpolation, edge values held);
//! 3. per-channel gain ripple `1 + amp·sin(2π·channel/16)`;
//! 4. beam hardening `p → p − β·p²`;
//! 5. Poisson counting noise, `counts ~ Poisson(I₀·e^{−p})`,
//!    `p' = −ln(max(counts, 1)/I₀)`.
//!
//! Stages 4 and 5 act on physical line integrals `p·attenuation_scale`,
//! which lets images be stored in normalised units.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{FanBeamGeometry, Projector, Sinogram};
use crate::error::{invalid, Result};
use crate::grid::ImageGrid;

const GAIN_RIPPLE_PERIOD: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MismatchConfig {
    pub angular_offset_deg: f64,
    pub cor_shift_channels: f64,
    pub gain_drift_amp: f64,
    /// Incident photons per ray; 0 disables counting noise.
    pub photon_count_i0: f64,
    /// 0 disables beam hardening.
    pub beam_hardening_beta: f64,
    /// Physical attenuation (per mm) of one image unit.
    pub attenuation_scale: f64,
}

impl Default for MismatchConfig {
    fn default() -> Self {
        Self::none()
    }
}

impl MismatchConfig {
    /// Every stage disabled.
    pub fn none() -> Self {
        Self {
            angular_offset_deg: 0.0,
            cor_shift_channels: 0.0,
            gain_drift_amp: 0.0,
            photon_count_i0: 0.0,
            beam_hardening_beta: 0.0,
            attenuation_scale: 1.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.angular_offset_deg == 0.0
            && self.cor_shift_channels == 0.0
            && self.gain_drift_amp == 0.0
            && self.photon_count_i0 == 0.0
            && self.beam_hardening_beta == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.photon_count_i0 >= 0.0 && self.photon_count_i0.is_finite()) {
            return Err(invalid("photon_count_i0 must be finite and >= 0"));
        }
        if !(self.gain_drift_amp >= 0.0 && self.gain_drift_amp.is_finite()) {
            return Err(invalid("gain_drift_amp must be finite and >= 0"));
        }
        if !(self.attenuation_scale > 0.0 && self.attenuation_scale.is_finite()) {
            return Err(invalid("attenuation_scale must be positive"));
        }
        if ![self.angular_offset_deg, self.cor_shift_channels, self.beam_hardening_beta]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(invalid("mismatch parameters must be finite"));
        }
        Ok(())
    }
}

/// Applies stages 2–5 to an already simulated sinogram.
pub fn apply_mismatch<R: Rng + ?Sized>(
    s: &Sinogram,
    g: &FanBeamGeometry,
    cfg: &MismatchConfig,
    rng: &mut R,
) -> Result<Sinogram> {
    cfg.validate()?;
    s.check_geometry(g)?;
    let mut out = s.clone();
    let n_channels = s.n_channels();

    if cfg.cor_shift_channels != 0.0 {
        let src = s.values();
        let dst = out.values_mut();
        for v in 0..s.n_views() {
            let row = &src[v * n_channels..(v + 1) * n_channels];
            for c in 0..n_channels {
                dst[v * n_channels + c] = sample_linear(row, c as f64 - cfg.cor_shift_channels);
            }
        }
    }

    if cfg.gain_drift_amp != 0.0 {
        for (i, p) in out.values_mut().iter_mut().enumerate() {
            let channel = (i % n_channels) as f64;
            *p *= 1.0 + cfg.gain_drift_amp * (std::f64::consts::TAU * channel / GAIN_RIPPLE_PERIOD).sin();
        }
    }

    let scale = cfg.attenuation_scale;
    if cfg.beam_hardening_beta != 0.0 {
        for p in out.values_mut() {
            let phys = *p * scale;
            *p = (phys - cfg.beam_hardening_beta * phys * phys) / scale;
        }
    }

    if cfg.photon_count_i0 > 0.0 {
        let i0 = cfg.photon_count_i0;
        for p in out.values_mut() {
            let expected = i0 * (-*p * scale).exp();
            let counts = if expected > 0.0 {
                Poisson::new(expected).map_err(|e| invalid(e.to_string()))?.sample(rng)
            } else {
                0.0
            };
            *p = -(counts.max(1.0) / i0).ln() / scale;
        }
    }
    Ok(out)
}

fn sample_linear(row: &[f64], pos: f64) -> f64 {
    let last = row.len() - 1;
    if pos <= 0.0 {
        return row[0];
    }
    if pos >= last as f64 {
        return row[last];
    }
    let i = pos.floor() as usize;
    let t = pos - i as f64;
    row[i] * (1.0 - t) + row[i + 1] * t
}

/// Simulates a measurement of `x` under `cfg` and labels it with the nominal
/// geometry `g`, so that reconstruction uses the unperturbed operator.
pub fn simulate_measurement<R: Rng + ?Sized>(
    x: &ImageGrid,
    g: &FanBeamGeometry,
    cfg: &MismatchConfig,
    rng: &mut R,
) -> Result<Sinogram> {
    cfg.validate()?;
    let clean = if cfg.angular_offset_deg != 0.0 {
        let shifted = g.rotated(cfg.angular_offset_deg.to_radians());
        Projector::new(&shifted, x.side(), x.pixel_size_mm())?.forward(x)?.retagged(g)
    } else {
        Projector::new(g, x.side(), x.pixel_size_mm())?.forward(x)?
    };
    apply_mismatch(&clean, g, cfg, rng)
}
