//! Experiment grids: cell enumeration, execution and merging.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ctlab_core::geometry::{make_geometry, simulate_measurement, FanBeamGeometry, MismatchConfig, Projector, Sinogram};
use ctlab_core::grid::ImageGrid;
use ctlab_core::io::{read_sinogram, write_image, write_sinogram};
use ctlab_core::metrics::{line_profile, psnr, ssim};
use ctlab_core::sampler::{dds_reconstruct, SamplerConfig, Trajectory};
use ctlab_core::schedules::{build_schedule, GammaSchedule, NoiseSchedule};
use ctlab_core::seed::{derive_seed, derived_rng, CtRng};
use ctlab_core::solvers::cgls;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, Plan};
use crate::domain::{Condition, Domain, Method};
use crate::output::{self, ProfileRow, ResultRow};

const MEASUREMENT_STREAM: u64 = 1;
const SAMPLER_STREAM: u64 = 2;

/// One point of an experiment grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub domain: Domain,
    pub condition: Condition,
    pub resolution: usize,
    pub n_views: usize,
    pub method: Method,
    pub nfe: Option<usize>,
    pub gamma: Option<GammaSchedule>,
    pub seed: u64,
}

impl Cell {
    pub fn run_id(&self, experiment: Experiment) -> String {
        format!("{}-{:05}", experiment.name(), self.index)
    }
}

/// Canonical cell order: resolution, views, domain, condition, method,
/// NFE, likelihood-weight schedule, seed. Least-squares cells ignore the
/// sampler axes.
pub fn enumerate_cells(plan: &Plan) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &resolution in &plan.resolutions {
        for &n_views in &plan.views {
            for &domain in &plan.domains {
                for &condition in &plan.conditions {
                    for &method in &plan.methods {
                        let sampler_axes: Vec<(Option<usize>, Option<GammaSchedule>)> = match method {
                            Method::Cgls => vec![(None, None)],
                            Method::Dds => plan
                                .nfe
                                .iter()
                                .flat_map(|&n| plan.gamma_schedules.iter().map(move |&g| (Some(n), Some(g))))
                                .collect(),
                        };
                        for (nfe, gamma) in sampler_axes {
                            for &seed in &plan.seeds {
                                cells.push(Cell {
                                    index: cells.len(),
                                    domain,
                                    condition,
                                    resolution,
                                    n_views,
                                    method,
                                    nfe,
                                    gamma,
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    cells
}

/// Measurement noise stream of a cell. Shared by every method, NFE and
/// weight schedule at the same (seed, resolution, views), so comparisons
/// along those axes see identical data.
fn measurement_rng(plan: &Plan, cell: &Cell) -> CtRng {
    let s = derive_seed(derive_seed(plan.seed, cell.seed), MEASUREMENT_STREAM);
    derived_rng(derive_seed(s, cell.resolution as u64), cell.n_views as u64)
}

fn sampler_seed(plan: &Plan, seed: u64) -> u64 {
    derive_seed(derive_seed(plan.seed, seed), SAMPLER_STREAM)
}

/// Simulates the measurement of `truth` for `condition`, with additive
/// Gaussian noise of standard deviation `sigma_y` on every ray.
pub fn measure(
    truth: &ImageGrid,
    geometry: &FanBeamGeometry,
    projector: &Projector,
    condition: Condition,
    mismatch: &MismatchConfig,
    sigma_y: f64,
    rng: &mut CtRng,
) -> Result<Sinogram> {
    let y = match condition {
        Condition::Clean => projector.forward(truth)?,
        Condition::Mismatched => simulate_measurement(truth, geometry, mismatch, rng)?,
    };
    if sigma_y == 0.0 {
        return Ok(y);
    }
    let noisy = y
        .values()
        .iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(rng);
            v + sigma_y * z
        })
        .collect();
    Ok(Sinogram::for_geometry(geometry, noisy)?)
}

fn sampler_config(plan: &Plan, cell: &Cell, snapshots: bool) -> SamplerConfig {
    SamplerConfig {
        nfe: cell.nfe.unwrap_or(plan.nfe[0]),
        m_steps: plan.m_steps,
        eta: plan.eta,
        sigma_y: plan.sigma_y,
        gamma_schedule: cell.gamma.unwrap_or(plan.gamma_schedules[0]),
        seed: sampler_seed(plan, cell.seed),
        form: plan.form,
        snapshots,
    }
}

/// Reconstruction from `y` with the cell's method.
pub fn reconstruct(
    plan: &Plan,
    cell: &Cell,
    y: &Sinogram,
    projector: &Projector,
    schedule: &NoiseSchedule,
    snapshots: bool,
) -> Result<(ImageGrid, Option<Trajectory>)> {
    match cell.method {
        Method::Cgls => Ok((cgls(y, projector, plan.cgls_iters)?.0, None)),
        Method::Dds => {
            let denoiser = plan.prior.build(projector.side(), projector.pixel_size_mm())?;
            let cfg = sampler_config(plan, cell, snapshots);
            let (x, traj) = dds_reconstruct(y, projector, denoiser.as_ref(), schedule, &cfg)?;
            Ok((x, Some(traj)))
        }
    }
}

fn blank_row(plan: &Plan, cell: &Cell, hash: &str) -> ResultRow {
    let is_dds = cell.method == Method::Dds;
    let (gamma_max, gamma_min) = match cell.gamma {
        Some(GammaSchedule::Constant { gamma }) => (Some(gamma), None),
        Some(GammaSchedule::LinearDecay { gamma_max, gamma_min }) => (Some(gamma_max), Some(gamma_min)),
        None => (None, None),
    };
    ResultRow {
        run_id: cell.run_id(plan.experiment),
        domain: cell.domain.name().into(),
        prior: if is_dds { plan.prior.name().into() } else { "none".into() },
        n_views: cell.n_views,
        nfe: cell.nfe,
        schedule_kind: cell.gamma.map(|g| g.kind_name().to_string()),
        gamma_max,
        seed: cell.seed,
        psnr_db: None,
        ssim: None,
        data_range_mode: plan.data_range.mode_name().into(),
        experiment: plan.experiment.name().into(),
        method: cell.method.name().into(),
        resolution: cell.resolution,
        condition: cell.condition.name().into(),
        gamma_min,
        config_hash: hash.into(),
        version: output::version(),
        error: None,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CellFile {
    row: ResultRow,
    profile: Vec<ProfileRowData>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileRowData {
    row: usize,
    truth: Vec<f64>,
    recon: Vec<f64>,
}

struct Shared<'a> {
    plan: &'a Plan,
    hash: String,
    geometry: FanBeamGeometry,
    projector: Projector,
    schedule: &'a NoiseSchedule,
    cells_dir: PathBuf,
    images_dir: PathBuf,
    first_seed: u64,
}

fn run_cell(ctx: &Shared, cell: &Cell) -> Result<CellFile> {
    let plan = ctx.plan;
    let mut row = blank_row(plan, cell, &ctx.hash);
    let mut profile = Vec::new();
    let outcome = (|| -> Result<(ImageGrid, ImageGrid)> {
        let truth = cell.domain.ground_truth(cell.resolution, ctx.projector.pixel_size_mm())?;
        let mut rng = measurement_rng(plan, cell);
        let y = measure(&truth, &ctx.geometry, &ctx.projector, cell.condition, &plan.mismatch, plan.sigma_y, &mut rng)?;
        let (x, _) = reconstruct(plan, cell, &y, &ctx.projector, ctx.schedule, false)?;
        Ok((truth, x))
    })();
    match outcome {
        Ok((truth, x)) => {
            row.set_metrics(psnr(&x, &truth, plan.data_range)?, ssim(&x, &truth, plan.data_range)?);
            if cell.seed == ctx.first_seed {
                if plan.write_images {
                    let (lo, hi) = truth.min_max();
                    let id = &row.run_id;
                    output::write_png(&ctx.images_dir.join(format!("{id}.png")), &x, lo, hi)?;
                    write_image(&ctx.images_dir.join(format!("{id}.ctimg")), &x)?;
                }
                if plan.experiment == Experiment::Gap {
                    let r = plan.profile_row_at(cell.resolution);
                    profile.push(ProfileRowData { row: r, truth: line_profile(&truth, r)?, recon: line_profile(&x, r)? });
                }
            }
        }
        Err(e) => row.error = Some(format!("{e:#}")),
    }
    let file = CellFile { row, profile };
    let path = ctx.cells_dir.join(format!("{}.json", file.row.run_id));
    fs::write(&path, serde_json::to_vec(&file)?).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(file)
}

/// Outcome of a grid experiment.
#[derive(Debug)]
pub struct RunSummary {
    pub rows: Vec<ResultRow>,
    pub failed: usize,
    pub out: PathBuf,
}

fn write_truth_images(plan: &Plan, dir: &Path) -> Result<()> {
    for &res in &plan.resolutions {
        for &d in &plan.domains {
            let truth = d.ground_truth(res, plan.geometry.pixel_size_for(res))?;
            let (lo, hi) = truth.min_max();
            output::write_png(&dir.join(format!("truth_{}_{res}.png", d.name())), &truth, lo, hi)?;
        }
    }
    Ok(())
}

/// Runs a sweep, gap or schedule-grid experiment into `plan.out`.
pub fn run_grid(plan: &Plan) -> Result<RunSummary> {
    if !matches!(plan.experiment, Experiment::Sweep | Experiment::Gap | Experiment::ScheduleGrid) {
        bail!("`{}` is not a grid experiment", plan.experiment.name());
    }
    let out = plan.out.clone();
    let cells_dir = out.join("cells");
    let images_dir = out.join("images");
    fs::create_dir_all(&cells_dir).with_context(|| format!("cannot create {}", cells_dir.display()))?;
    if plan.write_images {
        fs::create_dir_all(&images_dir)?;
        write_truth_images(plan, &images_dir)?;
    }
    let schedule = build_schedule(plan.schedule, plan.total_steps)?;
    let hash = plan.config_hash();
    let cells = enumerate_cells(plan);

    let mut files: Vec<CellFile> = Vec::with_capacity(cells.len());
    for &res in &plan.resolutions {
        for &views in &plan.views {
            let geometry = make_geometry(views, plan.span, &plan.geometry)?;
            let projector = Projector::new(&geometry, res, plan.geometry.pixel_size_for(res))?;
            let ctx = Shared {
                plan,
                hash: hash.clone(),
                geometry,
                projector,
                schedule: &schedule,
                cells_dir: cells_dir.clone(),
                images_dir: images_dir.clone(),
                first_seed: plan.seeds[0],
            };
            let group: Vec<&Cell> = cells.iter().filter(|c| c.resolution == res && c.n_views == views).collect();
            let done: Vec<CellFile> = group.par_iter().map(|c| run_cell(&ctx, c)).collect::<Result<_>>()?;
            files.extend(done);
        }
    }
    files.sort_by(|a, b| a.row.run_id.cmp(&b.row.run_id));

    let rows: Vec<ResultRow> = files.iter().map(|f| f.row.clone()).collect();
    output::write_rows(&out.join("results.csv"), &rows)?;
    output::write_summary(&out.join("summary.csv"), &output::summarize(&rows))?;
    if plan.experiment == Experiment::Gap {
        let profiles: Vec<ProfileRow> = files
            .iter()
            .flat_map(|f| {
                f.profile.iter().flat_map(move |p| {
                    (0..p.truth.len()).map(move |c| ProfileRow {
                        run_id: f.row.run_id.clone(),
                        domain: f.row.domain.clone(),
                        condition: f.row.condition.clone(),
                        method: f.row.method.clone(),
                        resolution: f.row.resolution,
                        n_views: f.row.n_views,
                        row: p.row,
                        column: c,
                        truth: format!("{:.6e}", p.truth[c]),
                        recon: format!("{:.6e}", p.recon[c]),
                    })
                })
            })
            .collect();
        output::write_profiles(&out.join("profiles.csv"), &profiles)?;
    }
    fs::remove_dir_all(&cells_dir)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    Ok(RunSummary { rows, failed, out })
}

/// Single reconstruction with full diagnostics.
pub fn run_reconstruct(plan: &Plan) -> Result<RunSummary> {
    let out = plan.out.clone();
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let res = plan.resolutions[0];
    let geometry = make_geometry(plan.views[0], plan.span, &plan.geometry)?;
    let projector = Projector::new(&geometry, res, plan.geometry.pixel_size_for(res))?;
    let schedule = build_schedule(plan.schedule, plan.total_steps)?;
    let cell = enumerate_cells(plan).into_iter().next().expect("validated plan has a cell");
    let mut row = blank_row(plan, &cell, &plan.config_hash());

    let truth = cell.domain.ground_truth(res, projector.pixel_size_mm())?;
    let y = match &plan.input_sinogram {
        Some(path) => {
            let y = read_sinogram(path)?;
            y.check_geometry(&geometry)
                .with_context(|| format!("{} was not measured with the configured geometry", path.display()))?;
            y
        }
        None => {
            let mut rng = measurement_rng(plan, &cell);
            let y = measure(&truth, &geometry, &projector, cell.condition, &plan.mismatch, plan.sigma_y, &mut rng)?;
            write_sinogram(&out.join("measurement.ctsin"), &y)?;
            y
        }
    };

    match reconstruct(plan, &cell, &y, &projector, &schedule, plan.snapshot_steps) {
        Ok((x, traj)) => {
            // metrics need a known object, so they are left empty for external data
            if plan.input_sinogram.is_none() {
                row.set_metrics(psnr(&x, &truth, plan.data_range)?, ssim(&x, &truth, plan.data_range)?);
            }
            write_image(&out.join("recon.ctimg"), &x)?;
            let (lo, hi) = if plan.input_sinogram.is_none() { truth.min_max() } else { x.min_max() };
            output::write_png(&out.join("recon.png"), &x, lo, hi)?;
            if plan.input_sinogram.is_none() {
                output::write_png(&out.join("truth.png"), &truth, lo, hi)?;
            }
            if let Some(traj) = traj {
                let f = fs::File::create(out.join("trajectory.csv"))?;
                traj.write_csv(std::io::BufWriter::new(f))?;
                if plan.snapshot_steps {
                    let dir = out.join("snapshots");
                    fs::create_dir_all(&dir)?;
                    for r in &traj.records {
                        if let Some(img) = &r.snapshot {
                            write_image(&dir.join(format!("step_{:04}.ctimg", r.step)), img)?;
                        }
                    }
                }
            }
        }
        Err(e) => row.error = Some(format!("{e:#}")),
    }
    let rows = vec![row];
    output::write_rows(&out.join("results.csv"), &rows)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    Ok(RunSummary { rows, failed, out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn tiny(experiment: Experiment, out: &Path) -> Plan {
        let text = format!(
            r#"
            out = "{}"
            views = [4]
            resolutions = [16]
            nfe = [3]
            seeds = [0, 1]
            write_images = false
            [sampler]
            total_steps = 20
            "#,
            out.display()
        );
        ExperimentConfig::from_toml(&text).unwrap().resolve(Some(experiment)).unwrap()
    }

    #[test]
    fn cell_grid_shape() {
        let dir = tempfile::tempdir().unwrap();
        let plan = ExperimentConfig::default().resolve(Some(Experiment::ScheduleGrid)).unwrap();
        let cells = enumerate_cells(&plan);
        assert_eq!(cells.len(), 5 * 3 * 2 * 10);
        assert!(cells.iter().enumerate().all(|(i, c)| c.index == i));

        let sweep = tiny(Experiment::Sweep, dir.path());
        let cells = enumerate_cells(&sweep);
        // three domains × (cgls + one dds setting) × two seeds
        assert_eq!(cells.len(), 3 * 2 * 2);
        assert!(cells.iter().filter(|c| c.method == Method::Cgls).all(|c| c.nfe.is_none()));
    }

    #[test]
    fn shared_measurement_across_methods() {
        let dir = tempfile::tempdir().unwrap();
        let plan = tiny(Experiment::Sweep, dir.path());
        let cells = enumerate_cells(&plan);
        let a = cells.iter().find(|c| c.method == Method::Cgls && c.seed == 1).unwrap();
        let b = cells.iter().find(|c| c.method == Method::Dds && c.seed == 1 && c.domain == a.domain).unwrap();
        let mut ra = measurement_rng(&plan, a);
        let mut rb = measurement_rng(&plan, b);
        let za: f64 = StandardNormal.sample(&mut ra);
        let zb: f64 = StandardNormal.sample(&mut rb);
        assert_eq!(za, zb);
    }

    #[test]
    fn grid_run_writes_ordered_rows() {
        let dir = tempfile::tempdir().unwrap();
        let plan = tiny(Experiment::Gap, dir.path());
        let summary = run_grid(&plan).unwrap();
        assert_eq!(summary.failed, 0);
        assert_eq!(summary.rows.len(), 2 * 2);
        let ids: Vec<_> = summary.rows.iter().map(|r| r.run_id.clone()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        assert!(dir.path().join("results.csv").exists());
        assert!(dir.path().join("summary.csv").exists());
        assert!(dir.path().join("profiles.csv").exists());
        assert!(!dir.path().join("cells").exists());
    }

    #[test]
    fn failing_cells_are_recorded_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = tiny(Experiment::Sweep, dir.path());
        plan.domains = vec![Domain::SimStd];
        plan.prior = crate::domain::PriorSpec::External {
            program: dir.path().join("no-such-model"),
            args: vec![],
            timeout_s: 1.0,
        };
        let summary = run_grid(&plan).unwrap();
        let (cg, dds): (Vec<_>, Vec<_>) = summary.rows.iter().partition(|r| r.method == "cgls");
        assert!(cg.iter().all(|r| r.error.is_none() && r.psnr_db.is_some()));
        assert!(dds.iter().all(|r| r.error.is_some() && r.psnr_db.is_none()));
        assert_eq!(summary.failed, dds.len());
    }
}
