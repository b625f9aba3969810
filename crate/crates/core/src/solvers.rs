//! Conjugate-gradient machinery: a generic SPD solver, CGLS for the
//! least-squares baseline, and the proximal data-consistency step used
//! inside diffusion sampling.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, CtError, Result};
use crate::geometry::{Projector, Sinogram};
use crate::grid::{dot, norm, ImageGrid};

/// Default number of CG steps per data-consistency update.
pub const DEFAULT_M_STEPS: usize = 5;

/// Default CGLS iteration budget for 128² reconstructions.
pub const DEFAULT_CGLS_ITERS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgReport {
    pub iterations_run: usize,
    pub final_relative_residual: f64,
    pub converged: bool,
}

fn relative(r: f64, b: f64) -> f64 {
    if b > 0.0 {
        r / b
    } else {
        r
    }
}

/// Conjugate gradient for `A x = b` with `A` symmetric positive definite,
/// given as `apply(x, out)` computing `out = A x`.
///
/// Stops after `max_iters` iterations or once `‖b − A x‖ / ‖b‖ <= tol`
/// (absolute residual when `b = 0`). `tol = 0` runs the full budget unless
/// the residual vanishes exactly.
pub fn cg<F>(mut apply: F, b: &[f64], x0: &[f64], max_iters: usize, tol: f64) -> Result<(Vec<f64>, CgReport)>
where
    F: FnMut(&[f64], &mut [f64]),
{
    if b.len() != x0.len() {
        return Err(CtError::ShapeMismatch {
            expected: format!("{} unknowns", b.len()),
            found: format!("{} unknowns", x0.len()),
        });
    }
    let n = b.len();
    let b_norm = norm(b);
    let mut x = x0.to_vec();
    let mut ap = vec![0.0; n];
    apply(&x, &mut ap);
    let mut r: Vec<f64> = b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    if !rs.is_finite() {
        return Err(CtError::Divergence { iteration: 0 });
    }

    let mut iterations = 0;
    while iterations < max_iters {
        if rs == 0.0 || relative(rs.sqrt(), b_norm) <= tol {
            break;
        }
        apply(&p, &mut ap);
        let curvature = dot(&p, &ap);
        iterations += 1;
        if !curvature.is_finite() || curvature <= 0.0 {
            return Err(CtError::Divergence { iteration: iterations });
        }
        let alpha = rs / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_next = dot(&r, &r);
        if !rs_next.is_finite() {
            return Err(CtError::Divergence { iteration: iterations });
        }
        let beta = rs_next / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_next;
    }
    let final_relative_residual = relative(rs.sqrt(), b_norm);
    let report = CgReport {
        iterations_run: iterations,
        final_relative_residual,
        converged: final_relative_residual <= tol,
    };
    Ok((x, report))
}

/// CGLS on `min ‖A x − y‖²` from `x = 0`, running exactly `iters` steps
/// unless the normal-equation residual vanishes.
pub fn cgls(y: &Sinogram, projector: &Projector, iters: usize) -> Result<(ImageGrid, CgReport)> {
    if iters == 0 {
        return Err(invalid("CGLS needs at least one iteration"));
    }
    projector.check(y)?;
    let n = projector.n_pixels();
    let m = projector.n_rays();
    let mut x = vec![0.0; n];
    let mut r = y.values().to_vec();
    let mut s = vec![0.0; n];
    projector.adjoint_into(&r, &mut s);
    let s0_norm = norm(&s);
    let mut p = s.clone();
    let mut gamma = dot(&s, &s);
    let mut q = vec![0.0; m];

    let mut iterations = 0;
    while iterations < iters && gamma > 0.0 {
        projector.forward_into(&p, &mut q);
        let qq = dot(&q, &q);
        iterations += 1;
        if !qq.is_finite() || qq <= 0.0 {
            if qq == 0.0 {
                break;
            }
            return Err(CtError::Divergence { iteration: iterations });
        }
        let alpha = gamma / qq;
        for i in 0..n {
            x[i] += alpha * p[i];
        }
        for i in 0..m {
            r[i] -= alpha * q[i];
        }
        projector.adjoint_into(&r, &mut s);
        let gamma_next = dot(&s, &s);
        if !gamma_next.is_finite() {
            return Err(CtError::Divergence { iteration: iterations });
        }
        let beta = gamma_next / gamma;
        for i in 0..n {
            p[i] = s[i] + beta * p[i];
        }
        gamma = gamma_next;
    }
    let rel = relative(gamma.sqrt(), s0_norm);
    let image = ImageGrid::new_unchecked(projector.side(), projector.pixel_size_mm(), x);
    Ok((image, CgReport { iterations_run: iterations, final_relative_residual: rel, converged: gamma == 0.0 }))
}

/// Data-consistency update applied to a denoised estimate `x̂`.
///
/// With `gamma = Some(γ)` this runs `m_steps` CG iterations on
/// `(γ AᵀA + I) x = x̂ + γ Aᵀ y` from `x̂`, i.e. towards the minimiser of
/// `(γ/2)‖y − A x‖² + (1/2)‖x − x̂‖²`. With `gamma = None` it runs CG on the
/// plain normal equations `AᵀA x = Aᵀ y` from `x̂`.
pub fn dds_data_consistency(
    x_hat: &ImageGrid,
    y: &Sinogram,
    projector: &Projector,
    gamma: Option<f64>,
    m_steps: usize,
) -> Result<(ImageGrid, CgReport)> {
    projector.check(y)?;
    if x_hat.side() != projector.side() {
        return Err(CtError::ShapeMismatch {
            expected: format!("{0}x{0} image", projector.side()),
            found: format!("{0}x{0} image", x_hat.side()),
        });
    }
    let n = projector.n_pixels();
    let mut aty = vec![0.0; n];
    projector.adjoint_into(y.values(), &mut aty);
    let mut scratch = vec![0.0; projector.n_rays()];

    let (x, report) = match gamma {
        Some(g) => {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(invalid(format!("likelihood weight must be >= 0, got {g}")));
            }
            let b: Vec<f64> = x_hat.values().iter().zip(&aty).map(|(xh, a)| xh + g * a).collect();
            cg(
                |v, out| {
                    projector.normal_into(v, &mut scratch, out);
                    for (o, vi) in out.iter_mut().zip(v) {
                        *o = g * *o + vi;
                    }
                },
                &b,
                x_hat.values(),
                m_steps,
                0.0,
            )?
        }
        None => cg(|v, out| projector.normal_into(v, &mut scratch, out), &aty, x_hat.values(), m_steps, 0.0)?,
    };
    Ok((x_hat.with_values(x)?, report))
}

/// `(γ/2)‖y − A x‖² + (1/2)‖x − x̂‖²`.
pub fn proximal_objective(x: &ImageGrid, x_hat: &ImageGrid, y: &Sinogram, projector: &Projector, gamma: f64) -> f64 {
    let mut ax = vec![0.0; projector.n_rays()];
    projector.forward_into(x.values(), &mut ax);
    let data: f64 = ax.iter().zip(y.values()).map(|(a, b)| (b - a) * (b - a)).sum();
    let prox: f64 = x.values().iter().zip(x_hat.values()).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * gamma * data + 0.5 * prox
}

/// `‖y − A x‖`.
pub fn data_residual(x: &ImageGrid, y: &Sinogram, projector: &Projector) -> f64 {
    let mut ax = vec![0.0; projector.n_rays()];
    projector.forward_into(x.values(), &mut ax);
    ax.iter().zip(y.values()).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_geometry, ScannerPreset, Span};
    use crate::seed::rng_from_seed;
    use rand::Rng;

    #[test]
    fn identity_system_one_step() {
        let b = vec![1.0, -2.0, 3.5];
        let (x, rep) = cg(|v, o| o.copy_from_slice(v), &b, &[0.0; 3], 1, 1e-14).unwrap();
        assert_eq!(x, b);
        assert_eq!(rep.iterations_run, 1);
    }

    #[test]
    fn diagonal_two_by_two() {
        let d = [2.0, 5.0];
        let apply = |v: &[f64], o: &mut [f64]| {
            o[0] = d[0] * v[0];
            o[1] = d[1] * v[1];
        };
        let (x, _) = cg(apply, &[2.0, 5.0], &[0.0, 0.0], 2, 0.0).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn divergence_is_reported() {
        let mut calls = 0;
        let apply = |v: &[f64], o: &mut [f64]| {
            calls += 1;
            if calls > 1 {
                o.fill(f64::NAN)
            } else {
                o.copy_from_slice(v)
            }
        };
        let err = cg(apply, &[1.0, 1.0], &[0.0, 0.0], 5, 0.0).unwrap_err();
        assert!(matches!(err, CtError::Divergence { iteration: 1 }));
    }

    #[test]
    fn shape_mismatch() {
        assert!(cg(|v, o| o.copy_from_slice(v), &[1.0], &[0.0, 0.0], 1, 0.0).is_err());
    }

    #[test]
    fn random_spd_objective_monotone() {
        let n = 12;
        let mut rng = rng_from_seed(9);
        let m: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = (0..n).map(|k| m[k * n + i] * m[k * n + j]).sum::<f64>() + if i == j { 0.5 } else { 0.0 };
            }
        }
        let apply = |v: &[f64], o: &mut [f64]| {
            for i in 0..n {
                o[i] = (0..n).map(|j| a[i * n + j] * v[j]).sum();
            }
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let objective = |x: &[f64]| {
            let mut ax = vec![0.0; n];
            apply(x, &mut ax);
            0.5 * dot(x, &ax) - dot(&b, x)
        };
        let mut prev = objective(&vec![0.0; n]);
        for k in 1..=n {
            let (x, _) = cg(apply, &b, &vec![0.0; n], k, 0.0).unwrap();
            let f = objective(&x);
            assert!(f <= prev + 1e-12);
            prev = f;
        }
    }

    fn small_problem() -> (Projector, ImageGrid) {
        let preset = ScannerPreset::default();
        let g = make_geometry(6, Span::Half, &preset).unwrap();
        let side = 12;
        let p = Projector::new(&g, side, preset.pixel_size_for(side)).unwrap();
        let vals: Vec<f64> = (0..side * side).map(|i| ((i * 7 % 11) as f64) / 11.0).collect();
        let x = ImageGrid::new(side, p.pixel_size_mm(), vals).unwrap();
        (p, x)
    }

    #[test]
    fn cgls_zero_sinogram_gives_zero_image() {
        let (p, _) = small_problem();
        let (x, rep) = cgls(&p.zero_sinogram(), &p, 10).unwrap();
        assert!(x.values().iter().all(|&v| v == 0.0));
        assert_eq!(rep.iterations_run, 0);
        assert!(cgls(&p.zero_sinogram(), &p, 0).is_err());
    }

    #[test]
    fn cgls_reduces_data_residual() {
        let (p, x) = small_problem();
        let y = p.forward(&x).unwrap();
        let (r5, _) = cgls(&y, &p, 5).unwrap();
        let (r50, _) = cgls(&y, &p, 50).unwrap();
        let res5 = data_residual(&r5, &y, &p);
        let res50 = data_residual(&r50, &y, &p);
        assert!(res50 < res5);
        assert!(res50 / y.norm() < 1e-3);
    }

    #[test]
    fn zero_gamma_is_identity() {
        let (p, x) = small_problem();
        let y = p.forward(&x.map(|v| 1.0 - v)).unwrap();
        for m in [1, 5, 20] {
            let (out, _) = dds_data_consistency(&x, &y, &p, Some(0.0), m).unwrap();
            assert_eq!(out, x);
        }
    }

    #[test]
    fn proximal_objective_never_increases() {
        let (p, x) = small_problem();
        let y = p.forward(&x).unwrap();
        let x_hat = x.map(|v| 0.5 * v + 0.1);
        for gamma in [0.1, 1.0, 10.0] {
            let before = proximal_objective(&x_hat, &x_hat, &y, &p, gamma);
            let mut prev = before;
            for m in 1..=6 {
                let (out, _) = dds_data_consistency(&x_hat, &y, &p, Some(gamma), m).unwrap();
                let after = proximal_objective(&out, &x_hat, &y, &p, gamma);
                assert!(after <= prev * (1.0 + 1e-12));
                prev = after;
            }
        }
    }

    #[test]
    fn unregularized_form_fits_data() {
        let (p, x) = small_problem();
        let y = p.forward(&x).unwrap();
        let start = x.map(|_| 0.0);
        let (out, _) = dds_data_consistency(&start, &y, &p, None, 40).unwrap();
        assert!(data_residual(&out, &y, &p) < 1e-3 * y.norm());
    }

    #[test]
    fn rejects_negative_gamma() {
        let (p, x) = small_problem();
        let y = p.forward(&x).unwrap();
        assert!(dds_data_consistency(&x, &y, &p, Some(-1.0), 5).is_err());
    }
}
