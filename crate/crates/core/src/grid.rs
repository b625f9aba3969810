//! Square image grids with a physical pixel pitch.
//!
//! Storage is row-major. Row 0 lies at the bottom of the field of view
//! (y = -1 in normalised coordinates) and column 0 at the left (x = -1), so
//! the normalised centre of pixel `(row, col)` on an `n`-pixel grid is
//! `(-1 + (col + 0.5)·2/n, -1 + (row + 0.5)·2/n)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, CtError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    side: usize,
    pixel_size_mm: f64,
    values: Vec<f64>,
}

impl ImageGrid {
    pub fn new(side: usize, pixel_size_mm: f64, values: Vec<f64>) -> Result<Self> {
        if side < 2 {
            return Err(invalid(format!("grid side must be >= 2, got {side}")));
        }
        if !(pixel_size_mm > 0.0 && pixel_size_mm.is_finite()) {
            return Err(invalid(format!("pixel size must be positive, got {pixel_size_mm}")));
        }
        if values.len() != side * side {
            return Err(CtError::ShapeMismatch {
                expected: format!("{} values", side * side),
                found: format!("{} values", values.len()),
            });
        }
        Ok(Self { side, pixel_size_mm, values })
    }

    /// Grid with side 1 is only meaningful as a projector test fixture, so
    /// this constructor skips the `side >= 2` rule.
    pub(crate) fn new_unchecked(side: usize, pixel_size_mm: f64, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), side * side);
        Self { side, pixel_size_mm, values }
    }

    pub fn zeros(side: usize, pixel_size_mm: f64) -> Result<Self> {
        Self::filled(side, pixel_size_mm, 0.0)
    }

    pub fn filled(side: usize, pixel_size_mm: f64, value: f64) -> Result<Self> {
        Self::new(side, pixel_size_mm, vec![value; side * side])
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixel_size_mm(&self) -> f64 {
        self.pixel_size_mm
    }

    /// Physical edge length of the field of view.
    pub fn width_mm(&self) -> f64 {
        self.side as f64 * self.pixel_size_mm
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.side + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.side..(row + 1) * self.side]
    }

    /// Same shape and pitch, new contents.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.side, self.pixel_size_mm, values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            side: self.side,
            pixel_size_mm: self.pixel_size_mm,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_shape(&self, other: &ImageGrid) -> Result<()> {
        if self.side != other.side {
            return Err(CtError::ShapeMismatch {
                expected: format!("{0}x{0} grid", self.side),
                found: format!("{0}x{0} grid", other.side),
            });
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Normalised pixel-centre coordinate along one axis.
    pub fn unit_center(index: usize, side: usize) -> f64 {
        -1.0 + (index as f64 + 0.5) * 2.0 / side as f64
    }

    /// Separable Gaussian blur with width `sigma_px` (in pixels) and
    /// symmetric (mirror) boundary extension, so constants are preserved.
    /// `sigma_px <= 0` returns a copy.
    pub fn gaussian_blur(&self, sigma_px: f64) -> Self {
        if !(sigma_px > 0.0) {
            return self.clone();
        }
        let kernel = gaussian_kernel(sigma_px);
        let n = self.side;
        let mut tmp = vec![0.0; n * n];
        for r in 0..n {
            let row = &self.values[r * n..(r + 1) * n];
            convolve_line(row, &kernel, &mut tmp[r * n..(r + 1) * n]);
        }
        let mut out = vec![0.0; n * n];
        let mut column = vec![0.0; n];
        let mut blurred = vec![0.0; n];
        for c in 0..n {
            for r in 0..n {
                column[r] = tmp[r * n + c];
            }
            convolve_line(&column, &kernel, &mut blurred);
            for r in 0..n {
                out[r * n + c] = blurred[r];
            }
        }
        Self { side: n, pixel_size_mm: self.pixel_size_mm, values: out }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Mirror index into `[0, n)`: ... 2 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
fn reflect(i: i64, n: i64) -> usize {
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

fn convolve_line(input: &[f64], kernel: &[f64], out: &mut [f64]) {
    let n = input.len() as i64;
    let radius = (kernel.len() / 2) as i64;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &w) in kernel.iter().enumerate() {
            let src = i as i64 + j as i64 - radius;
            acc += w * input[reflect(src, n)];
        }
        *o = acc;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
