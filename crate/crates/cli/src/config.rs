//! Experiment configuration files.
//!
//! A config is a TOML document; every key is optional and falls back to the
//! defaults of the experiment being run. [`ExperimentConfig::resolve`] turns
//! it into a fully specified [`Plan`].

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ctlab_core::geometry::{MismatchConfig, ScannerPreset, Span};
use ctlab_core::metrics::{DataRange, DEFAULT_N_SEEDS};
use ctlab_core::phantom::PerturbationConfig;
use ctlab_core::sampler::ConsistencyForm;
use ctlab_core::schedules::{GammaSchedule, ScheduleKind};
use ctlab_core::solvers::{DEFAULT_CGLS_ITERS, DEFAULT_M_STEPS};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{Condition, Domain, Method, PriorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    GenDataset,
    Sweep,
    ScheduleGrid,
    Gap,
    Reconstruct,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::GenDataset => "gen-dataset",
            Experiment::Sweep => "sweep",
            Experiment::ScheduleGrid => "schedule-grid",
            Experiment::Gap => "gap",
            Experiment::Reconstruct => "reconstruct",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Std,
    Exp,
    Mix,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub m_steps: Option<usize>,
    pub eta: Option<f64>,
    pub sigma_y: Option<f64>,
    pub form: Option<ConsistencyForm>,
    pub schedule: Option<ScheduleKind>,
    pub total_steps: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub n: Option<usize>,
    pub kind: Option<DatasetKind>,
    pub mix_pi: Option<f64>,
    /// Also rasterize every sample at this side length.
    pub image_side: Option<usize>,
    /// Replaces the perturbation strengths implied by `kind`.
    pub perturbation: Option<PerturbationConfig>,
}

/// The file-level view: everything optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub domains: Option<Vec<Domain>>,
    pub conditions: Option<Vec<Condition>>,
    pub methods: Option<Vec<Method>>,
    pub views: Option<Vec<usize>>,
    pub resolutions: Option<Vec<usize>>,
    pub nfe: Option<Vec<usize>>,
    pub seeds: Option<Vec<u64>>,
    pub gamma_schedules: Option<Vec<GammaSchedule>>,
    pub cgls_iters: Option<usize>,
    pub span: Option<Span>,
    pub geometry: Option<ScannerPreset>,
    pub sampler: SamplerSection,
    pub prior: Option<PriorSpec>,
    pub mismatch: Option<MismatchConfig>,
    pub data_range: Option<DataRange>,
    /// Profile row on a 128-pixel grid; rescaled to keep the same height at
    /// other resolutions.
    pub profile_row: Option<usize>,
    pub write_images: Option<bool>,
    pub snapshot_steps: Option<bool>,
    /// `reconstruct` only: reconstruct this CTSIN1 file instead of a
    /// simulated measurement.
    pub input_sinogram: Option<PathBuf>,
    pub dataset: DatasetSection,
}

/// Mismatch used for the `mismatched` condition unless configured.
pub fn default_mismatch() -> MismatchConfig {
    MismatchConfig {
        angular_offset_deg: 0.25,
        cor_shift_channels: 0.5,
        gain_drift_amp: 0.005,
        photon_count_i0: 1e5,
        beam_hardening_beta: 0.05,
        attenuation_scale: 0.02,
    }
}

/// Likelihood-weight schedules of the schedule grid.
pub fn default_gamma_grid() -> Vec<GammaSchedule> {
    vec![
        GammaSchedule::constant(0.5),
        GammaSchedule::constant(5.0),
        GammaSchedule::linear_decay(5.0),
        GammaSchedule::linear_decay(50.0),
        GammaSchedule::linear_decay(150.0),
    ]
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plan {
    pub experiment: Experiment,
    pub seed: u64,
    #[serde(skip)]
    pub out: PathBuf,
    #[serde(skip)]
    pub threads: Option<usize>,
    pub domains: Vec<Domain>,
    pub conditions: Vec<Condition>,
    pub methods: Vec<Method>,
    pub views: Vec<usize>,
    pub resolutions: Vec<usize>,
    pub nfe: Vec<usize>,
    pub seeds: Vec<u64>,
    pub gamma_schedules: Vec<GammaSchedule>,
    pub cgls_iters: usize,
    pub span: Span,
    pub geometry: ScannerPreset,
    pub m_steps: usize,
    pub eta: f64,
    pub sigma_y: f64,
    pub form: ConsistencyForm,
    pub schedule: ScheduleKind,
    pub total_steps: usize,
    pub prior: PriorSpec,
    pub mismatch: MismatchConfig,
    pub data_range: DataRange,
    pub profile_row: usize,
    pub write_images: bool,
    pub snapshot_steps: bool,
    pub input_sinogram: Option<PathBuf>,
    pub dataset_n: usize,
    pub dataset_kind: DatasetKind,
    pub dataset_mix_pi: f64,
    pub dataset_image_side: Option<usize>,
    pub perturbation: PerturbationConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("invalid config")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Fills defaults for `experiment` (or the config's own `experiment`
    /// key) and validates the result.
    pub fn resolve(&self, experiment: Option<Experiment>) -> Result<Plan> {
        let experiment = match (experiment, self.experiment) {
            (Some(cli), Some(file)) if cli != file => {
                bail!("config is for `{}` but `{}` was requested", file.name(), cli.name())
            }
            (Some(e), _) | (None, Some(e)) => e,
            (None, None) => bail!("no experiment given"),
        };
        use Experiment::*;
        let pick = |v: &Option<Vec<usize>>, d: &[usize]| v.clone().unwrap_or_else(|| d.to_vec());

        let domains = self.domains.clone().unwrap_or_else(|| match experiment {
            Sweep => vec![Domain::SimStd, Domain::SimCad, Domain::SimReconSurrogate],
            _ => vec![Domain::SimReconSurrogate],
        });
        let conditions = self.conditions.clone().unwrap_or_else(|| match experiment {
            Gap => vec![Condition::Clean, Condition::Mismatched],
            ScheduleGrid => vec![Condition::Mismatched],
            _ => vec![Condition::Clean],
        });
        let methods = self.methods.clone().unwrap_or_else(|| match experiment {
            Sweep => vec![Method::Cgls, Method::Dds],
            _ => vec![Method::Dds],
        });
        let views = pick(
            &self.views,
            match experiment {
                Sweep => &[5, 9, 12, 18, 24, 30],
                Gap => &[9, 25],
                ScheduleGrid => &[12, 24],
                _ => &[12],
            },
        );
        let resolutions = pick(&self.resolutions, if experiment == Gap { &[128, 256, 512] } else { &[128] });
        let nfe = pick(&self.nfe, if experiment == ScheduleGrid { &[1000, 100, 10] } else { &[1000] });
        let gamma_schedules = self.gamma_schedules.clone().unwrap_or_else(|| match experiment {
            ScheduleGrid => default_gamma_grid(),
            _ => vec![GammaSchedule::constant(1.0)],
        });
        let seeds = self.seeds.clone().unwrap_or_else(|| {
            let n = if experiment == Reconstruct { 1 } else { DEFAULT_N_SEEDS as u64 };
            (0..n).collect()
        });

        let dataset_kind = self.dataset.kind.unwrap_or(DatasetKind::Mix);
        let dataset_mix_pi = self.dataset.mix_pi.unwrap_or(0.5);
        let perturbation = self.dataset.perturbation.unwrap_or(match dataset_kind {
            DatasetKind::Std => PerturbationConfig::standard(),
            DatasetKind::Exp => PerturbationConfig::experimental(),
            DatasetKind::Mix => PerturbationConfig::mixed(dataset_mix_pi),
        });

        let plan = Plan {
            experiment,
            seed: self.seed.unwrap_or(0),
            out: self.out.clone().unwrap_or_else(|| PathBuf::from("results").join(experiment.name())),
            threads: self.threads,
            domains,
            conditions,
            methods,
            views,
            resolutions,
            nfe,
            seeds,
            gamma_schedules,
            cgls_iters: self.cgls_iters.unwrap_or(DEFAULT_CGLS_ITERS),
            span: self.span.unwrap_or(Span::Half),
            geometry: self.geometry.unwrap_or_default(),
            m_steps: self.sampler.m_steps.unwrap_or(DEFAULT_M_STEPS),
            eta: self.sampler.eta.unwrap_or(0.85),
            sigma_y: self.sampler.sigma_y.unwrap_or(1e-7),
            form: self.sampler.form.unwrap_or(ConsistencyForm::Regularized),
            schedule: self.sampler.schedule.unwrap_or(ScheduleKind::Cosine),
            total_steps: self.sampler.total_steps.unwrap_or(1000),
            prior: self.prior.clone().unwrap_or_default(),
            mismatch: self.mismatch.unwrap_or_else(default_mismatch),
            data_range: self.data_range.unwrap_or(DataRange::Auto),
            profile_row: self.profile_row.unwrap_or(25),
            write_images: self.write_images.unwrap_or(true),
            snapshot_steps: self.snapshot_steps.unwrap_or(false),
            input_sinogram: self.input_sinogram.clone(),
            dataset_n: self.dataset.n.unwrap_or(1000),
            dataset_kind,
            dataset_mix_pi,
            dataset_image_side: self.dataset.image_side,
            perturbation,
        };
        plan.validate()?;
        Ok(plan)
    }
}

impl Plan {
    pub fn validate(&self) -> Result<()> {
        let nonempty = [
            ("domains", self.domains.is_empty()),
            ("conditions", self.conditions.is_empty()),
            ("methods", self.methods.is_empty()),
            ("views", self.views.is_empty()),
            ("resolutions", self.resolutions.is_empty()),
            ("nfe", self.nfe.is_empty()),
            ("seeds", self.seeds.is_empty()),
            ("gamma_schedules", self.gamma_schedules.is_empty()),
        ];
        for (name, empty) in nonempty {
            if empty {
                bail!("`{name}` must not be empty");
            }
        }
        if self.views.contains(&0) {
            bail!("view counts must be positive");
        }
        if let Some(&r) = self.resolutions.iter().find(|&&r| r < 16) {
            bail!("resolution {r} is below the 16-pixel minimum");
        }
        if let Some(&n) = self.nfe.iter().find(|&&n| n == 0 || n > self.total_steps) {
            bail!("nfe {n} must be in 1..={}", self.total_steps);
        }
        if self.cgls_iters == 0 || self.m_steps == 0 {
            bail!("iteration counts must be positive");
        }
        if !(0.0..=1.0).contains(&self.eta) {
            bail!("eta must be in [0, 1]");
        }
        if !(self.sigma_y >= 0.0 && self.sigma_y.is_finite()) {
            bail!("sigma_y must be finite and >= 0");
        }
        if self.profile_row >= 128 {
            bail!("profile_row is given on a 128-pixel grid and must be < 128");
        }
        if self.dataset_n == 0 {
            bail!("dataset size must be positive");
        }
        if self.threads == Some(0) {
            bail!("threads must be positive");
        }
        for g in &self.gamma_schedules {
            g.validate()?;
        }
        self.mismatch.validate()?;
        self.perturbation.validate()?;
        self.prior.validate()?;
        if let DataRange::Fixed(r) = self.data_range {
            if !(r > 0.0 && r.is_finite()) {
                bail!("fixed data range must be positive");
            }
        }
        ctlab_core::schedules::build_schedule(self.schedule, self.total_steps)?;
        Ok(())
    }

    /// Short digest of every setting that can change results; the output
    /// directory and thread count are excluded.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("plan serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Profile row at `side`, at the same height as `profile_row` on 128².
    pub fn profile_row_at(&self, side: usize) -> usize {
        (((self.profile_row as f64 + 0.5) * side as f64 / 128.0).floor() as usize).min(side - 1)
    }
}
