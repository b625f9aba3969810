//! Fan-beam scanner model.
//!
//! The rotation axis sits at the origin of the image frame. For view angle
//! `theta` the point source is at `sod·(cos θ, sin θ)` and the flat detector
//! is centred at distance `sdd` from the source on the opposite side, with
//! channel `k` offset by `(k - (n - 1)/2)·pitch` along `(-sin θ, cos θ)`.
//! Each channel receives a single ray from the source to its centre.

mod dense;
mod mismatch;
mod siddon;

pub use dense::{as_dense_matrix, DenseMatrix, DENSE_ENTRY_LIMIT};
pub use mismatch::{apply_mismatch, simulate_measurement, MismatchConfig};
pub use siddon::{Projector, RayWeights};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, CtError, Result};
use crate::grid::ImageGrid;

/// Source/detector distances and detector sampling of the physical scanner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScannerPreset {
    pub sod_mm: f64,
    pub sdd_mm: f64,
    pub det_pixel_mm: f64,
    pub n_channels: usize,
}

impl Default for ScannerPreset {
    fn default() -> Self {
        Self { sod_mm: 234.92, sdd_mm: 400.0, det_pixel_mm: 0.2992, n_channels: 478 }
    }
}

impl ScannerPreset {
    pub fn magnification(&self) -> f64 {
        self.sdd_mm / self.sod_mm
    }

    /// Width of the detector footprint at the rotation axis.
    pub fn field_of_view_mm(&self) -> f64 {
        self.det_pixel_mm / self.magnification() * self.n_channels as f64
    }

    /// Pixel pitch for which a `side`-pixel grid spans the magnified detector
    /// footprint.
    pub fn pixel_size_for(&self, side: usize) -> f64 {
        self.field_of_view_mm() / side as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Span {
    /// `[0°, 180°)`, endpoint excluded.
    Half,
    /// `[0°, 360°]`: a full rotation whose last view returns to the start
    /// angle, as recorded by the scanner.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanBeamGeometry {
    pub sod_mm: f64,
    pub sdd_mm: f64,
    pub det_pixel_mm: f64,
    pub n_channels: usize,
    pub angles_rad: Vec<f64>,
}

impl FanBeamGeometry {
    pub fn new(
        sod_mm: f64,
        sdd_mm: f64,
        det_pixel_mm: f64,
        n_channels: usize,
        angles_rad: Vec<f64>,
    ) -> Result<Self> {
        let g = Self { sod_mm, sdd_mm, det_pixel_mm, n_channels, angles_rad };
        g.validate()?;
        Ok(g)
    }

    pub fn from_preset(preset: &ScannerPreset, angles_rad: Vec<f64>) -> Result<Self> {
        Self::new(preset.sod_mm, preset.sdd_mm, preset.det_pixel_mm, preset.n_channels, angles_rad)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sod_mm > 0.0 && self.sod_mm < self.sdd_mm && self.sdd_mm.is_finite()) {
            return Err(invalid(format!(
                "need 0 < sod < sdd, got sod={} sdd={}",
                self.sod_mm, self.sdd_mm
            )));
        }
        if !(self.det_pixel_mm > 0.0) {
            return Err(invalid("detector pitch must be positive"));
        }
        if self.n_channels == 0 {
            return Err(invalid("need at least one detector channel"));
        }
        if self.angles_rad.is_empty() {
            return Err(invalid("need at least one view angle"));
        }
        if self.angles_rad.iter().any(|a| !a.is_finite()) {
            return Err(invalid("view angles must be finite"));
        }
        if self.angles_rad.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("view angles must be strictly increasing"));
        }
        let sweep = self.angles_rad.last().unwrap() - self.angles_rad[0];
        if sweep > std::f64::consts::TAU + 1e-9 {
            return Err(invalid("view angles must lie within one revolution"));
        }
        Ok(())
    }

    pub fn n_views(&self) -> usize {
        self.angles_rad.len()
    }

    pub fn n_rays(&self) -> usize {
        self.n_views() * self.n_channels
    }

    pub fn magnification(&self) -> f64 {
        self.sdd_mm / self.sod_mm
    }

    /// Same geometry with every view angle shifted by `offset_rad`.
    pub fn rotated(&self, offset_rad: f64) -> Self {
        Self {
            angles_rad: self.angles_rad.iter().map(|a| a + offset_rad).collect(),
            ..self.clone()
        }
    }

    /// Source position and detector-channel centre for ray `(view, channel)`.
    pub fn ray_endpoints(&self, view: usize, channel: usize) -> ([f64; 2], [f64; 2]) {
        let (s, c) = self.angles_rad[view].sin_cos();
        let source = [self.sod_mm * c, self.sod_mm * s];
        let offset = (channel as f64 - (self.n_channels as f64 - 1.0) / 2.0) * self.det_pixel_mm;
        let back = self.sod_mm - self.sdd_mm;
        let detector = [back * c - offset * s, back * s + offset * c];
        (source, detector)
    }

    /// Stable 64-bit digest of every field, carried by sinograms so that an
    /// operator can refuse data produced by a different geometry.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.sod_mm.to_le_bytes());
        h.update(self.sdd_mm.to_le_bytes());
        h.update(self.det_pixel_mm.to_le_bytes());
        h.update((self.n_channels as u64).to_le_bytes());
        for a in &self.angles_rad {
            h.update(a.to_le_bytes());
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
    }
}

/// Equally spaced views over `span` with the scanner preset's detector.
pub fn make_geometry(n_views: usize, span: Span, preset: &ScannerPreset) -> Result<FanBeamGeometry> {
    if n_views == 0 {
        return Err(invalid("need at least one view"));
    }
    let step_deg = match span {
        Span::Half => 180.0 / n_views as f64,
        Span::Full if n_views == 1 => 0.0,
        Span::Full => 360.0 / (n_views - 1) as f64,
    };
    let angles = (0..n_views).map(|i| (i as f64 * step_deg).to_radians()).collect();
    FanBeamGeometry::from_preset(preset, angles)
}

/// Line-integral measurements, view-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sinogram {
    n_views: usize,
    n_channels: usize,
    values: Vec<f64>,
    geometry_fingerprint: u64,
}

impl Sinogram {
    pub fn new(n_views: usize, n_channels: usize, values: Vec<f64>, geometry_fingerprint: u64) -> Result<Self> {
        if values.len() != n_views * n_channels {
            return Err(CtError::ShapeMismatch {
                expected: format!("{n_views}x{n_channels} sinogram"),
                found: format!("{} values", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("sinogram values must be finite"));
        }
        Ok(Self { n_views, n_channels, values, geometry_fingerprint })
    }

    pub fn zeros(g: &FanBeamGeometry) -> Self {
        Self {
            n_views: g.n_views(),
            n_channels: g.n_channels,
            values: vec![0.0; g.n_rays()],
            geometry_fingerprint: g.fingerprint(),
        }
    }

    pub fn for_geometry(g: &FanBeamGeometry, values: Vec<f64>) -> Result<Self> {
        Self::new(g.n_views(), g.n_channels, values, g.fingerprint())
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn geometry_fingerprint(&self) -> u64 {
        self.geometry_fingerprint
    }

    pub fn view(&self, v: usize) -> &[f64] {
        &self.values[v * self.n_channels..(v + 1) * self.n_channels]
    }

    pub fn norm(&self) -> f64 {
        crate::grid::norm(&self.values)
    }

    pub fn check_geometry(&self, g: &FanBeamGeometry) -> Result<()> {
        let expected = g.fingerprint();
        if self.geometry_fingerprint != expected {
            return Err(CtError::GeometryMismatch { expected, found: self.geometry_fingerprint });
        }
        Ok(())
    }

    /// Re-tags the data as belonging to `g`. Used to pair a sinogram acquired
    /// with a perturbed geometry with the nominal operator.
    pub(crate) fn retagged(mut self, g: &FanBeamGeometry) -> Self {
        self.geometry_fingerprint = g.fingerprint();
        self
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// `A x` for a single image. Builds a throwaway [`Projector`]; keep one
/// around when applying the operator repeatedly.
pub fn forward_project(x: &ImageGrid, g: &FanBeamGeometry) -> Result<Sinogram> {
    Projector::new(g, x.side(), x.pixel_size_mm())?.forward(x)
}

/// `Aᵀ s` onto a grid of `side` pixels of pitch `pixel_size_mm`.
pub fn back_project(s: &Sinogram, g: &FanBeamGeometry, side: usize, pixel_size_mm: f64) -> Result<ImageGrid> {
    s.check_geometry(g)?;
    Projector::new(g, side, pixel_size_mm)?.adjoint(s)
}
