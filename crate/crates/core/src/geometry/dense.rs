//! Explicit system matrix for small grids, computed pixel by pixel.
//!
//! Every entry is obtained by clipping the ray against that single pixel's
//! box, independently of the traversal in `siddon`. It serves as the
//! reference the sparse projector is checked against.

use super::siddon::GridFrame;
use super::FanBeamGeometry;
use crate::error::{CtError, Result};

/// Upper bound on `rays × pixels` for [`as_dense_matrix`].
pub const DENSE_ENTRY_LIMIT: usize = 10_000_000;

/// Largest grid side accepted by [`as_dense_matrix`].
const DENSE_MAX_SIDE: usize = 32;

/// Row-major `rows × cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn transpose_mul_vec(&self, s: &[f64]) -> Vec<f64> {
        assert_eq!(s.len(), self.rows);
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self.get(r, c) * s[r]).sum())
            .collect()
    }
}

fn axis_interval(start: f64, delta: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    if delta != 0.0 {
        let a = (lo - start) / delta;
        let b = (hi - start) / delta;
        Some((a.min(b), a.max(b)))
    } else if start >= lo && start < hi {
        Some((f64::NEG_INFINITY, f64::INFINITY))
    } else {
        None
    }
}

/// Intersection length of segment `p0 → p1` with the pixel at `(row, col)`.
fn pixel_chord(p0: [f64; 2], p1: [f64; 2], frame: &GridFrame, row: usize, col: usize) -> f64 {
    let dx = p1[0] - p0[0];
    let dy = p1[1] - p0[1];
    let Some((x0, x1)) = axis_interval(p0[0], dx, frame.plane(col), frame.plane(col + 1)) else {
        return 0.0;
    };
    let Some((y0, y1)) = axis_interval(p0[1], dy, frame.plane(row), frame.plane(row + 1)) else {
        return 0.0;
    };
    let enter = x0.max(y0).max(0.0);
    let exit = x1.min(y1).min(1.0);
    if exit > enter {
        (exit - enter) * dx.hypot(dy)
    } else {
        0.0
    }
}

/// `rays × pixels` matrix whose entry `(r, p)` is the length of ray `r`
/// inside pixel `p`.
pub fn as_dense_matrix(g: &FanBeamGeometry, side: usize, pixel_size_mm: f64) -> Result<DenseMatrix> {
    g.validate()?;
    let rays = g.n_rays();
    let pixels = side * side;
    if side == 0 || side > DENSE_MAX_SIDE || rays.saturating_mul(pixels) > DENSE_ENTRY_LIMIT {
        return Err(CtError::SizeGuard { rays, pixels, limit: DENSE_ENTRY_LIMIT });
    }
    let frame = GridFrame::new(side, pixel_size_mm);
    let mut data = vec![0.0; rays * pixels];
    for ray in 0..rays {
        let (p0, p1) = g.ray_endpoints(ray / g.n_channels, ray % g.n_channels);
        for row in 0..side {
            for col in 0..side {
                data[ray * pixels + row * side + col] = pixel_chord(p0, p1, &frame, row, col);
            }
        }
    }
    Ok(DenseMatrix { rows: rays, cols: pixels, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_geometry, ScannerPreset, Span};

    #[test]
    fn single_pixel_central_ray() {
        let g = FanBeamGeometry::new(100.0, 200.0, 1.0, 1, vec![0.0]).unwrap();
        let m = as_dense_matrix(&g, 1, 2.5).unwrap();
        assert_eq!((m.rows, m.cols), (1, 1));
        assert!((m.get(0, 0) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn entries_nonnegative_and_rows_bounded() {
        let preset = ScannerPreset::default();
        let g = make_geometry(4, Span::Half, &preset).unwrap();
        let side = 8;
        let pix = preset.pixel_size_for(side);
        let m = as_dense_matrix(&g, side, pix).unwrap();
        let diagonal = side as f64 * pix * 2f64.sqrt();
        assert!(m.data.iter().all(|&v| v >= 0.0));
        for r in 0..m.rows {
            assert!(m.row(r).iter().sum::<f64>() <= diagonal + 1e-12);
        }
    }

    #[test]
    fn size_guard() {
        let g = make_geometry(4, Span::Half, &ScannerPreset::default()).unwrap();
        assert!(matches!(as_dense_matrix(&g, 33, 1.0), Err(CtError::SizeGuard { .. })));
        let big = make_geometry(40, Span::Half, &ScannerPreset::default()).unwrap();
        assert!(matches!(as_dense_matrix(&big, 32, 1.0), Err(CtError::SizeGuard { .. })));
    }
}
