//! Parametric ellipse phantoms of the Shepp-Logan family.
//!
//! A phantom is an ordered list of ellipses whose intensities add where they
//! overlap. Coordinates are normalised: centres live in `[-1, 1]²` and
//! semi-axes are fractions of the half-width. Rotations are in degrees,
//! counter-clockwise, measured from the x-axis to the `a` semi-axis.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::ImageGrid;
use crate::seed::derived_rng;

/// Contrast compression applied to the interior ellipses of the
/// experimental surrogate.
pub const EXPERIMENTAL_CONTRAST_FACTOR: f64 = 0.3;

/// Ellipses of the experimental surrogate that are left empty (air-filled
/// cut-outs). Zero-based indices into the standard layout.
pub const EXPERIMENTAL_AIR_ELLIPSES: [usize; 2] = [2, 3];

/// The three small ellipses near `y = -0.605` that are cut as holes.
pub const SMALL_HOLE_ELLIPSES: [usize; 3] = [7, 8, 9];

/// Horizontal/vertical span of the normalised coordinate frame.
const COORDINATE_SPAN: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseSpec {
    pub intensity: f64,
    pub semi_axis_a: f64,
    pub semi_axis_b: f64,
    pub center_x: f64,
    pub center_y: f64,
    /// Degrees, normalised to `[0, 360)`.
    pub rotation_phi: f64,
}

impl EllipseSpec {
    pub fn new(
        intensity: f64,
        semi_axis_a: f64,
        semi_axis_b: f64,
        center_x: f64,
        center_y: f64,
        rotation_phi: f64,
    ) -> Result<Self> {
        if !(semi_axis_a > 0.0 && semi_axis_b > 0.0) {
            return Err(invalid(format!(
                "semi-axes must be positive, got ({semi_axis_a}, {semi_axis_b})"
            )));
        }
        if ![intensity, center_x, center_y, rotation_phi].iter().all(|v| v.is_finite()) {
            return Err(invalid("ellipse parameters must be finite"));
        }
        Ok(Self {
            intensity,
            semi_axis_a,
            semi_axis_b,
            center_x,
            center_y,
            rotation_phi: normalize_degrees(rotation_phi),
        })
    }

    /// Whether the normalised point `(x, y)` lies inside (or on) the ellipse.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.rotation_phi.to_radians().sin_cos();
        let dx = x - self.center_x;
        let dy = y - self.center_y;
        let xr = dx * c + dy * s;
        let yr = -dx * s + dy * c;
        let u = xr / self.semi_axis_a;
        let v = yr / self.semi_axis_b;
        u * u + v * v <= 1.0
    }
}

fn normalize_degrees(phi: f64) -> f64 {
    let r = phi.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomLabel {
    Standard,
    Experimental,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipseSet {
    pub ellipses: Vec<EllipseSpec>,
    pub label: PhantomLabel,
}

impl EllipseSet {
    pub fn len(&self) -> usize {
        self.ellipses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ellipses.is_empty()
    }

    /// Sum of intensities of every ellipse containing `(x, y)`.
    pub fn evaluate(&self, x: f64, y: f64) -> f64 {
        self.ellipses
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| e.intensity)
            .sum()
    }

    /// Copy with every intensity multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let ellipses = self
            .ellipses
            .iter()
            .map(|e| EllipseSpec { intensity: e.intensity * factor, ..*e })
            .collect();
        Self { ellipses, label: self.label }
    }
}

/// The modified Shepp-Logan table (higher-contrast variant): intensity, a, b, x0, y0, phi.
const STANDARD_TABLE: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
    [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
];

fn from_table(table: &[[f64; 6]], label: PhantomLabel) -> EllipseSet {
    let ellipses = table
        .iter()
        .map(|r| EllipseSpec::new(r[0], r[1], r[2], r[3], r[4], r[5]).expect("valid table"))
        .collect();
    EllipseSet { ellipses, label }
}

pub fn standard_shepp_logan() -> EllipseSet {
    from_table(&STANDARD_TABLE, PhantomLabel::Standard)
}

/// Surrogate of the laser-cut phantom design: the standard layout with the
/// two lateral ellipses left as air (zero contrast), the three small
/// ellipses cut as holes (contrast inverted) and all interior contrasts
/// compressed by [`EXPERIMENTAL_CONTRAST_FACTOR`].
pub fn experimental_shepp_logan() -> EllipseSet {
    let mut set = standard_shepp_logan();
    set.label = PhantomLabel::Experimental;
    for (i, e) in set.ellipses.iter_mut().enumerate().skip(1) {
        if EXPERIMENTAL_AIR_ELLIPSES.contains(&i) {
            e.intensity = 0.0;
        } else if SMALL_HOLE_ELLIPSES.contains(&i) {
            e.intensity = -e.intensity.abs() * EXPERIMENTAL_CONTRAST_FACTOR;
        } else {
            e.intensity *= EXPERIMENTAL_CONTRAST_FACTOR;
        }
    }
    set
}

/// Per-parameter perturbation strengths of a training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub sigma_intensity: f64,
    pub sigma_axes: f64,
    pub sigma_center: f64,
    /// Degrees.
    pub sigma_phi: f64,
    pub p_add_drop: f64,
    pub mix_pi: f64,
}

impl PerturbationConfig {
    /// Row for the standard-centred training set.
    pub fn standard() -> Self {
        Self {
            sigma_intensity: 0.03,
            sigma_axes: 0.02,
            sigma_center: 0.01,
            sigma_phi: 10.0,
            p_add_drop: 0.01,
            mix_pi: 0.0,
        }
    }

    /// Row for the experimental-centred training set.
    pub fn experimental() -> Self {
        Self { mix_pi: 1.0, ..Self::standard() }
    }

    /// Row for the mixed training set; the wider sigmas apply to both
    /// mixture branches.
    pub fn mixed(mix_pi: f64) -> Self {
        Self {
            sigma_intensity: 0.03,
            sigma_axes: 0.03,
            sigma_center: 0.02,
            sigma_phi: 45.0,
            p_add_drop: 0.03,
            mix_pi,
        }
    }

    pub fn zero() -> Self {
        Self {
            sigma_intensity: 0.0,
            sigma_axes: 0.0,
            sigma_center: 0.0,
            sigma_phi: 0.0,
            p_add_drop: 0.0,
            mix_pi: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            ("sigma_intensity", self.sigma_intensity),
            ("sigma_axes", self.sigma_axes),
            ("sigma_center", self.sigma_center),
            ("sigma_phi", self.sigma_phi),
        ];
        for (name, s) in sigmas {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(invalid(format!("{name} must be a finite non-negative number, got {s}")));
            }
        }
        for (name, p) in [("p_add_drop", self.p_add_drop), ("mix_pi", self.mix_pi)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

fn perturb_one<R: Rng + ?Sized>(e: &EllipseSpec, cfg: &PerturbationConfig, rng: &mut R) -> EllipseSpec {
    let mut draw = |sigma: f64| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        sigma * z
    };
    let intensity = e.intensity + e.intensity.abs() * draw(cfg.sigma_intensity);
    let a = e.semi_axis_a + e.semi_axis_a.abs() * draw(cfg.sigma_axes);
    let b = e.semi_axis_b + e.semi_axis_b.abs() * draw(cfg.sigma_axes);
    let x0 = e.center_x + COORDINATE_SPAN * draw(cfg.sigma_center);
    let y0 = e.center_y + COORDINATE_SPAN * draw(cfg.sigma_center);
    let phi = e.rotation_phi + draw(cfg.sigma_phi);
    EllipseSpec {
        intensity,
        // a relative jitter can only flip the sign for sigma >~ 0.3; reflect it
        semi_axis_a: positive_axis(a),
        semi_axis_b: positive_axis(b),
        center_x: x0,
        center_y: y0,
        rotation_phi: normalize_degrees(phi),
    }
}

fn positive_axis(v: f64) -> f64 {
    v.abs().max(1e-6)
}

/// Perturbs every ellipse parameter around `base`, then independently drops
/// one interior ellipse and appends one freshly perturbed copy of a random
/// ellipse, each with probability `cfg.p_add_drop`.
pub fn perturb<R: Rng + ?Sized>(
    base: &EllipseSet,
    cfg: &PerturbationConfig,
    rng: &mut R,
) -> Result<EllipseSet> {
    cfg.validate()?;
    if base.is_empty() {
        return Err(invalid("cannot perturb an empty ellipse set"));
    }
    let mut ellipses: Vec<EllipseSpec> = base.ellipses.iter().map(|e| perturb_one(e, cfg, rng)).collect();

    // the outer boundary (index 0) is never dropped
    if rng.random_bool(cfg.p_add_drop) && ellipses.len() > 1 {
        let idx = rng.random_range(1..ellipses.len());
        ellipses.remove(idx);
    }
    if rng.random_bool(cfg.p_add_drop) {
        let idx = rng.random_range(0..base.len());
        ellipses.push(perturb_one(&base.ellipses[idx], cfg, rng));
    }
    Ok(EllipseSet { ellipses, label: PhantomLabel::Sampled })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSample {
    pub index: usize,
    /// Which mean set the sample was centred on.
    pub center: PhantomLabel,
    pub phantom: EllipseSet,
}

/// Draws `n` phantoms. Sample `i` owns a random stream derived from
/// `(seed, i)`, so the output is independent of thread scheduling.
pub fn sample_dataset(
    n: usize,
    std_center: &EllipseSet,
    exp_center: &EllipseSet,
    cfg: &PerturbationConfig,
    seed: u64,
) -> Result<Vec<DatasetSample>> {
    if n == 0 {
        return Err(invalid("dataset size must be at least 1"));
    }
    cfg.validate()?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = derived_rng(seed, i as u64);
            let use_exp = rng.random_bool(cfg.mix_pi);
            let (center, base) = if use_exp {
                (PhantomLabel::Experimental, exp_center)
            } else {
                (PhantomLabel::Standard, std_center)
            };
            let phantom = perturb(base, cfg, &mut rng)?;
            Ok(DatasetSample { index: i, center, phantom })
        })
        .collect()
}

/// Renders the additive ellipse sum at pixel centres.
pub fn rasterize(set: &EllipseSet, side: usize, pixel_size_mm: f64) -> Result<ImageGrid> {
    if set.is_empty() {
        return Err(invalid("cannot rasterize an empty ellipse set"));
    }
    if side < 2 {
        return Err(invalid(format!("grid side must be >= 2, got {side}")));
    }
    let values: Vec<f64> = (0..side * side)
        .into_par_iter()
        .map(|idx| {
            let (r, c) = (idx / side, idx % side);
            set.evaluate(ImageGrid::unit_center(c, side), ImageGrid::unit_center(r, side))
        })
        .collect();
    ImageGrid::new(side, pixel_size_mm, values)
}
