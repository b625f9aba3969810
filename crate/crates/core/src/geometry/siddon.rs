//! Exact ray/pixel intersection lengths (Siddon's method) and the sparse
//! system matrix built from them.
//!
//! A ray `p(α) = p0 + α (p1 - p0)`, `α ∈ [0, 1]`, is clipped to the grid box.
//! The parametric values at which it crosses the vertical and horizontal
//! pixel boundaries are merged into one sorted list; every consecutive pair
//! bounds a segment lying in a single pixel, which is located from the
//! segment midpoint. The segment length is `Δα · |p1 - p0|`.
//!
//! The forward operator is stored row-wise (one row per ray) and its
//! transpose column-wise, so that both `A x` and `Aᵀ s` parallelise over
//! output elements with a fixed per-element summation order.

use rayon::prelude::*;

use super::{FanBeamGeometry, Sinogram};
use crate::error::{invalid, CtError, Result};
use crate::grid::ImageGrid;

/// Pixel-boundary layout of a square grid centred on the rotation axis.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GridFrame {
    pub side: usize,
    pub pixel_mm: f64,
    pub origin_mm: f64,
}

impl GridFrame {
    pub fn new(side: usize, pixel_mm: f64) -> Self {
        Self { side, pixel_mm, origin_mm: -(side as f64) * pixel_mm / 2.0 }
    }

    /// Coordinate of boundary `i` (`0..=side`), identical along x and y.
    #[inline]
    pub fn plane(&self, i: usize) -> f64 {
        self.origin_mm + i as f64 * self.pixel_mm
    }

    #[inline]
    fn cell(&self, coord: f64) -> usize {
        let c = ((coord - self.origin_mm) / self.pixel_mm).floor();
        (c.max(0.0) as usize).min(self.side - 1)
    }
}

/// Parametric range `[lo, hi]` over which the ray lies between planes
/// `first` and `last` along one axis, or `None` if it never does.
#[inline]
pub(crate) fn slab(start: f64, delta: f64, first: f64, last: f64) -> Option<(f64, f64)> {
    if delta != 0.0 {
        let a = (first - start) / delta;
        let b = (last - start) / delta;
        Some(if a < b { (a, b) } else { (b, a) })
    } else if start > first && start < last {
        Some((f64::NEG_INFINITY, f64::INFINITY))
    } else {
        None
    }
}

/// Calls `emit(pixel_index, length)` for every pixel the ray crosses with
/// positive length, in order from `p0` towards `p1`.
pub(crate) fn trace_ray(p0: [f64; 2], p1: [f64; 2], frame: &GridFrame, mut emit: impl FnMut(usize, f64)) {
    let n = frame.side;
    let dx = p1[0] - p0[0];
    let dy = p1[1] - p0[1];
    let length = dx.hypot(dy);
    let (lo, hi) = (frame.plane(0), frame.plane(n));
    let Some((ax0, ax1)) = slab(p0[0], dx, lo, hi) else { return };
    let Some((ay0, ay1)) = slab(p0[1], dy, lo, hi) else { return };
    let a_min = ax0.max(ay0).max(0.0);
    let a_max = ax1.min(ay1).min(1.0);
    if a_min >= a_max {
        return;
    }

    let crossings = |start: f64, delta: f64| -> Vec<f64> {
        if delta == 0.0 {
            return Vec::new();
        }
        let mut v: Vec<f64> = (0..=n)
            .map(|i| (frame.plane(i) - start) / delta)
            .filter(|&a| a > a_min && a < a_max)
            .collect();
        if delta < 0.0 {
            v.reverse();
        }
        v
    };
    let xs = crossings(p0[0], dx);
    let ys = crossings(p0[1], dy);

    let mut prev = a_min;
    let mut visit = |a: f64| {
        if a > prev {
            let mid = 0.5 * (prev + a);
            let col = frame.cell(p0[0] + mid * dx);
            let row = frame.cell(p0[1] + mid * dy);
            emit(row * n + col, (a - prev) * length);
            prev = a;
        }
    };
    let (mut i, mut j) = (0, 0);
    while i < xs.len() || j < ys.len() {
        let a = if j >= ys.len() || (i < xs.len() && xs[i] <= ys[j]) {
            i += 1;
            xs[i - 1]
        } else {
            j += 1;
            ys[j - 1]
        };
        visit(a);
    }
    visit(a_max);
}

/// Pixel indices and intersection lengths of one ray.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RayWeights {
    pub pixels: Vec<u32>,
    pub lengths: Vec<f64>,
}

/// Sparse system matrix of a fan-beam geometry on a fixed image grid.
#[derive(Debug, Clone)]
pub struct Projector {
    geometry: FanBeamGeometry,
    fingerprint: u64,
    side: usize,
    pixel_size_mm: f64,
    row_ptr: Vec<usize>,
    row_pixels: Vec<u32>,
    row_lengths: Vec<f64>,
    col_ptr: Vec<usize>,
    col_rays: Vec<u32>,
    col_lengths: Vec<f64>,
}

impl Projector {
    pub fn new(geometry: &FanBeamGeometry, side: usize, pixel_size_mm: f64) -> Result<Self> {
        geometry.validate()?;
        if side == 0 || !(pixel_size_mm > 0.0) {
            return Err(invalid(format!("bad image grid: side={side}, pixel={pixel_size_mm}")));
        }
        if side * side > u32::MAX as usize || geometry.n_rays() > u32::MAX as usize {
            return Err(invalid("grid or ray count too large for 32-bit indices"));
        }
        let frame = GridFrame::new(side, pixel_size_mm);
        let n_channels = geometry.n_channels;
        let rows: Vec<RayWeights> = (0..geometry.n_rays())
            .into_par_iter()
            .map(|ray| {
                let (p0, p1) = geometry.ray_endpoints(ray / n_channels, ray % n_channels);
                let mut w = RayWeights::default();
                trace_ray(p0, p1, &frame, |p, l| {
                    w.pixels.push(p as u32);
                    w.lengths.push(l);
                });
                w
            })
            .collect();

        let nnz: usize = rows.iter().map(|r| r.pixels.len()).sum();
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut row_pixels = Vec::with_capacity(nnz);
        let mut row_lengths = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for r in &rows {
            row_pixels.extend_from_slice(&r.pixels);
            row_lengths.extend_from_slice(&r.lengths);
            row_ptr.push(row_pixels.len());
        }

        // transpose by counting sort; rays are visited in increasing order
        let n_pixels = side * side;
        let mut col_ptr = vec![0usize; n_pixels + 1];
        for &p in &row_pixels {
            col_ptr[p as usize + 1] += 1;
        }
        for i in 0..n_pixels {
            col_ptr[i + 1] += col_ptr[i];
        }
        let mut fill = col_ptr.clone();
        let mut col_rays = vec![0u32; nnz];
        let mut col_lengths = vec![0.0; nnz];
        for ray in 0..rows.len() {
            for k in row_ptr[ray]..row_ptr[ray + 1] {
                let p = row_pixels[k] as usize;
                col_rays[fill[p]] = ray as u32;
                col_lengths[fill[p]] = row_lengths[k];
                fill[p] += 1;
            }
        }

        Ok(Self {
            geometry: geometry.clone(),
            fingerprint: geometry.fingerprint(),
            side,
            pixel_size_mm,
            row_ptr,
            row_pixels,
            row_lengths,
            col_ptr,
            col_rays,
            col_lengths,
        })
    }

    pub fn geometry(&self) -> &FanBeamGeometry {
        &self.geometry
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixel_size_mm(&self) -> f64 {
        self.pixel_size_mm
    }

    pub fn n_rays(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn n_pixels(&self) -> usize {
        self.side * self.side
    }

    pub fn nnz(&self) -> usize {
        self.row_pixels.len()
    }

    pub fn ray(&self, ray: usize) -> RayWeights {
        let span = self.row_ptr[ray]..self.row_ptr[ray + 1];
        RayWeights {
            pixels: self.row_pixels[span.clone()].to_vec(),
            lengths: self.row_lengths[span].to_vec(),
        }
    }

    /// Empty image on this projector's grid.
    pub fn zero_image(&self) -> ImageGrid {
        ImageGrid::new_unchecked(self.side, self.pixel_size_mm, vec![0.0; self.n_pixels()])
    }

    pub fn zero_sinogram(&self) -> Sinogram {
        Sinogram::zeros(&self.geometry)
    }

    /// `out = A x` on raw slices.
    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.n_pixels());
        assert_eq!(out.len(), self.n_rays());
        out.par_iter_mut().enumerate().for_each(|(ray, o)| {
            let span = self.row_ptr[ray]..self.row_ptr[ray + 1];
            *o = self.row_pixels[span.clone()]
                .iter()
                .zip(&self.row_lengths[span])
                .map(|(&p, &l)| l * x[p as usize])
                .sum();
        });
    }

    /// `out = Aᵀ s` on raw slices.
    pub fn adjoint_into(&self, s: &[f64], out: &mut [f64]) {
        assert_eq!(s.len(), self.n_rays());
        assert_eq!(out.len(), self.n_pixels());
        out.par_iter_mut().enumerate().for_each(|(pix, o)| {
            let span = self.col_ptr[pix]..self.col_ptr[pix + 1];
            *o = self.col_rays[span.clone()]
                .iter()
                .zip(&self.col_lengths[span])
                .map(|(&r, &l)| l * s[r as usize])
                .sum();
        });
    }

    pub fn forward(&self, x: &ImageGrid) -> Result<Sinogram> {
        if x.side() != self.side {
            return Err(CtError::ShapeMismatch {
                expected: format!("{0}x{0} image", self.side),
                found: format!("{0}x{0} image", x.side()),
            });
        }
        let mut out = vec![0.0; self.n_rays()];
        self.forward_into(x.values(), &mut out);
        Sinogram::new(self.geometry.n_views(), self.geometry.n_channels, out, self.fingerprint)
    }

    pub fn adjoint(&self, s: &Sinogram) -> Result<ImageGrid> {
        if s.geometry_fingerprint() != self.fingerprint {
            return Err(CtError::GeometryMismatch { expected: self.fingerprint, found: s.geometry_fingerprint() });
        }
        let mut out = vec![0.0; self.n_pixels()];
        self.adjoint_into(s.values(), &mut out);
        Ok(ImageGrid::new_unchecked(self.side, self.pixel_size_mm, out))
    }

    /// `Aᵀ A x` on raw slices, with a caller-provided sinogram buffer.
    pub fn normal_into(&self, x: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        self.forward_into(x, scratch);
        self.adjoint_into(scratch, out);
    }

    pub fn check(&self, s: &Sinogram) -> Result<()> {
        s.check_geometry(&self.geometry)
    }
}
