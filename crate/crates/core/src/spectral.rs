//! Spectral radius estimation.
//!
//! Power iteration renormalizes the iterate every step and measures growth as
//! the geometric mean of the norm ratios over a trailing window. A real matrix
//! whose dominant eigenvalues form a complex-conjugate pair makes single-step
//! ratios oscillate; the windowed mean averages the rotation out.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{EsnError, Result};
use crate::sparse::SparseMatrix;

pub const DEFAULT_WINDOW: usize = 32;
pub const DEFAULT_TOL: f64 = 1e-3;
pub const DEFAULT_MAX_ITERS: usize = 10_000;
/// Largest dimension for which a non-converged power iteration falls back to
/// a dense eigensolver.
pub const DENSE_FALLBACK_MAX_DIM: usize = 512;
/// Windows to run before the stopping test is consulted.
const MIN_WINDOWS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub radius: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Windowed power iteration in 64-bit.
///
/// Stops once two consecutive window estimates differ by less than `tol`
/// relative, or after `max_iters` steps with `converged = false`.
pub fn power_iteration<R: Rng + ?Sized>(
    m: &SparseMatrix,
    window: usize,
    tol: f64,
    max_iters: usize,
    rng: &mut R,
) -> Result<SpectralEstimate> {
    if !m.is_square() {
        return Err(EsnError::invalid(format!(
            "spectral radius needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if window == 0 || max_iters == 0 || !(tol > 0.0) {
        return Err(EsnError::invalid("window, max_iters and tol must be positive"));
    }
    let zero = SpectralEstimate {
        radius: 0.0,
        iterations: 0,
        converged: true,
    };
    if m.values().iter().all(|&v| v == 0.0) {
        return Ok(zero);
    }

    let n = m.rows();
    let mut x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let norm = l2(&x);
    x.iter_mut().for_each(|v| *v /= norm);
    let mut y = vec![0.0; n];

    let mut log_sum = 0.0;
    let mut prev: Option<f64> = None;
    let mut estimate = 0.0;
    let mut windows = 0;
    for it in 1..=max_iters {
        m.mul_vec_f64(&x, &mut y);
        let growth = l2(&y);
        if growth == 0.0 {
            // Nilpotent on the probe's Krylov space.
            return Ok(SpectralEstimate { iterations: it, ..zero });
        }
        log_sum += growth.ln();
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / growth;
        }
        if it % window == 0 {
            estimate = (log_sum / window as f64).exp();
            log_sum = 0.0;
            windows += 1;
            if let Some(p) = prev {
                if windows >= MIN_WINDOWS && (estimate - p).abs() < tol * estimate {
                    return Ok(SpectralEstimate {
                        radius: estimate,
                        iterations: it,
                        converged: true,
                    });
                }
            }
            prev = Some(estimate);
        }
    }
    if windows == 0 {
        // max_iters shorter than one window: use the partial window.
        let done = max_iters % window;
        estimate = (log_sum / done as f64).exp();
    }
    Ok(SpectralEstimate {
        radius: estimate,
        iterations: max_iters,
        converged: false,
    })
}

/// Exact spectral radius from a real Schur decomposition. `None` if the
/// decomposition does not converge.
pub fn dense_spectral_radius(m: &SparseMatrix) -> Option<f64> {
    let n = m.rows();
    assert!(m.is_square(), "dense spectral radius needs a square matrix");
    let dense = DMatrix::from_row_slice(n, n, &m.to_dense_f64());
    let schur = dense.try_schur(1e-12, 0)?;
    Some(schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Power iteration with the default window, tolerance and iteration cap,
/// falling back to the dense eigensolver for small matrices that did not
/// converge.
pub fn estimate_spectral_radius<R: Rng + ?Sized>(m: &SparseMatrix, rng: &mut R) -> Result<SpectralEstimate> {
    let est = power_iteration(m, DEFAULT_WINDOW, DEFAULT_TOL, DEFAULT_MAX_ITERS, rng)?;
    if est.converged || m.rows() > DENSE_FALLBACK_MAX_DIM {
        return Ok(est);
    }
    Ok(match dense_spectral_radius(m) {
        Some(radius) => SpectralEstimate {
            radius,
            converged: true,
            ..est
        },
        None => est,
    })
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
