//! Noise schedules, reduced-NFE timestep plans and likelihood-weight ramps.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Offset of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;
/// Per-step β cap applied by both schedule kinds.
pub const MAX_BETA: f64 = 0.999;
/// Linear-schedule β endpoints for a 1000-step chain.
pub const LINEAR_BETA_START: f64 = 1e-4;
pub const LINEAR_BETA_END: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// Cumulative signal retention `ᾱ_t` for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    total_steps: usize,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn table(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Schedule from an explicit `ᾱ` table (index 0 must be 1).
    pub fn from_table(kind: ScheduleKind, alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 || alpha_bar[0] != 1.0 {
            return Err(invalid("alpha-bar table needs at least two entries starting at 1"));
        }
        if alpha_bar.windows(2).any(|w| !(w[1] < w[0])) || alpha_bar.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(invalid("alpha-bar must decrease strictly and stay in (0, 1]"));
        }
        Ok(Self { kind, total_steps: alpha_bar.len() - 1, alpha_bar })
    }
}

fn cumulative(betas: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut table = vec![1.0];
    let mut acc = 1.0;
    for b in betas {
        acc *= 1.0 - b.min(MAX_BETA);
        table.push(acc);
    }
    table
}

pub fn build_schedule(kind: ScheduleKind, total_steps: usize) -> Result<NoiseSchedule> {
    if total_steps == 0 {
        return Err(invalid("schedule needs at least one step"));
    }
    let t_max = total_steps as f64;
    let alpha_bar = match kind {
        ScheduleKind::Linear => {
            let scale = 1000.0 / t_max;
            let (start, end) = (scale * LINEAR_BETA_START, scale * LINEAR_BETA_END);
            cumulative((0..total_steps).map(|i| {
                if total_steps == 1 {
                    start
                } else {
                    start + (end - start) * i as f64 / (t_max - 1.0)
                }
            }))
        }
        ScheduleKind::Cosine => {
            let f = |t: f64| {
                let angle = (t / t_max + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2;
                angle.cos().powi(2)
            };
            cumulative((1..=total_steps).map(|t| 1.0 - f(t as f64) / f(t as f64 - 1.0)))
        }
    };
    Ok(NoiseSchedule { kind, total_steps, alpha_bar })
}

/// Strictly decreasing timesteps visited by a reduced-NFE sampler.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestepPlan {
    steps: Vec<usize>,
}

impl TimestepPlan {
    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn nfe(&self) -> usize {
        self.steps.len()
    }

    /// `(t, t_prev)` pairs; the last step's successor is 0.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.steps
            .iter()
            .enumerate()
            .map(move |(i, &t)| (t, self.steps.get(i + 1).copied().unwrap_or(0)))
    }
}

/// `nfe` timesteps from `T` down to 1, both included: step `i` is
/// `round(T − i·(T − 1)/(nfe − 1))` (ties away from zero). A single-step plan
/// is `[T]`.
pub fn make_timesteps(total_steps: usize, nfe: usize) -> Result<TimestepPlan> {
    if nfe == 0 || nfe > total_steps {
        return Err(invalid(format!("need 1 <= nfe <= T, got nfe={nfe}, T={total_steps}")));
    }
    if nfe == 1 {
        return Ok(TimestepPlan { steps: vec![total_steps] });
    }
    let stride = (total_steps - 1) as f64 / (nfe - 1) as f64;
    let steps = (0..nfe)
        .map(|i| (total_steps as f64 - i as f64 * stride).round() as usize)
        .collect();
    Ok(TimestepPlan { steps })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaSchedule {
    Constant { gamma: f64 },
    /// Linear ramp in `t/T`, from `gamma_max` at `t = T` to `gamma_min` at 0.
    LinearDecay { gamma_max: f64, gamma_min: f64 },
}

impl GammaSchedule {
    pub fn constant(gamma: f64) -> Self {
        GammaSchedule::Constant { gamma }
    }

    pub fn linear_decay(gamma_max: f64) -> Self {
        GammaSchedule::LinearDecay { gamma_max, gamma_min: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            GammaSchedule::Constant { gamma } if gamma >= 0.0 && gamma.is_finite() => Ok(()),
            GammaSchedule::LinearDecay { gamma_max, gamma_min }
                if gamma_min >= 0.0 && gamma_max >= gamma_min && gamma_max.is_finite() =>
            {
                Ok(())
            }
            _ => Err(invalid(format!("invalid likelihood-weight schedule {self:?}"))),
        }
    }

    /// Label used in result tables.
    pub fn kind_name(&self) -> &'static str {
        match self {
            GammaSchedule::Constant { .. } => "constant",
            GammaSchedule::LinearDecay { .. } => "linear_decay",
        }
    }

    /// Peak weight of the schedule.
    pub fn gamma_max(&self) -> f64 {
        match *self {
            GammaSchedule::Constant { gamma } => gamma,
            GammaSchedule::LinearDecay { gamma_max, .. } => gamma_max,
        }
    }
}

pub fn gamma_at(sched: &GammaSchedule, t: usize, total_steps: usize) -> f64 {
    match *sched {
        GammaSchedule::Constant { gamma } => gamma,
        GammaSchedule::LinearDecay { gamma_max, gamma_min } => {
            gamma_min + (gamma_max - gamma_min) * t as f64 / total_steps as f64
        }
    }
}
