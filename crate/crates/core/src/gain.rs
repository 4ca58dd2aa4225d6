//! Discrete-time LQR synthesis for the ancillary feedback `u = K z`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_square, is_spd, serde_matrix, symmetrize};

const DIVERGENCE: f64 = 1e12;

/// Closed loops with `rho(A + BK) >= 1 - SCHUR_MARGIN` are rejected.
pub const SCHUR_MARGIN: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainResult {
    /// Feedback gain with the sign convention `u = K z`.
    #[serde(with = "serde_matrix")]
    pub k: DMatrix<f64>,
    /// Stabilizing solution of the discrete algebraic Riccati equation.
    #[serde(with = "serde_matrix")]
    pub p: DMatrix<f64>,
    pub spectral_radius: f64,
    pub iterations: usize,
}

/// Largest eigenvalue modulus from the Hessenberg/Schur eigenvalues.
/// `tol` is accepted for interface symmetry; the result is exact up to
/// rounding.
pub fn spectral_radius(m: &DMatrix<f64>, _tol: f64) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::dim("spectral radius of a non-square matrix"));
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite matrix".into()));
    }
    Ok(m
        .complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, l| acc.max(l.norm())))
}

fn gain_from(p: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let bt_p = b.transpose() * p;
    let s = r + &bt_p * b;
    let chol = s.cholesky()?;
    Some(-chol.solve(&(&bt_p * a)))
}

/// Iterates `P <- Q + A^T P A - A^T P B (R + B^T P B)^-1 B^T P A` from `P = Q`
/// until the max-abs change falls below `tol` relative to `max(1, |P|_max)`.
pub fn dlqr(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<GainResult> {
    let n = a.nrows();
    check_square(a, n, "A")?;
    if b.nrows() != n {
        return Err(Error::dim(format!("B has {} rows, expected {n}", b.nrows())));
    }
    let m = b.ncols();
    check_square(q, n, "Q")?;
    check_square(r, m, "R")?;
    if !is_spd(q) {
        return Err(Error::InvalidParameter("Q must be symmetric positive definite".into()));
    }
    if !is_spd(r) {
        return Err(Error::InvalidParameter("R must be symmetric positive definite".into()));
    }

    let mut p = q.clone();
    for it in 1..=max_iter {
        let k = gain_from(&p, a, b, r)
            .ok_or_else(|| Error::InvalidParameter("R + B^T P B is not positive definite".into()))?;
        // With u = K z the update is Q + A^T P (A + B K).
        let next = symmetrize(&(q + a.transpose() * &p * (a + b * &k)));
        if next.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE) {
            let rho = spectral_radius(&(a + b * &k), 0.0)?;
            return Err(if rho >= 1.0 - SCHUR_MARGIN {
                Error::NotStabilizing(rho)
            } else {
                Error::NoConvergence(it)
            });
        }
        let delta = (&next - &p).amax();
        p = next;
        if delta <= tol * p.amax().max(1.0) {
            let k = gain_from(&p, a, b, r).expect("checked above");
            let rho = spectral_radius(&(a + b * &k), 0.0)?;
            if rho >= 1.0 - SCHUR_MARGIN {
                return Err(Error::NotStabilizing(rho));
            }
            return Ok(GainResult {
                k,
                p,
                spectral_radius: rho,
                iterations: it,
            });
        }
    }
    if let Some(k) = gain_from(&p, a, b, r) {
        let rho = spectral_radius(&(a + b * &k), 0.0)?;
        if rho >= 1.0 - SCHUR_MARGIN {
            return Err(Error::NotStabilizing(rho));
        }
    }
    Err(Error::NoConvergence(max_iter))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, xs)
    }

    #[test]
    fn scalar_riccati() {
        let g = dlqr(&m(1, 1, &[0.5]), &m(1, 1, &[1.0]), &m(1, 1, &[1.0]), &m(1, 1, &[1.0]), 1e-12, 1000).unwrap();
        // P = 1 + 0.25 P / (1 + P)  <=>  P^2 - 0.25 P - 1 = 0
        let p = (0.25 + (0.25f64 * 0.25 + 4.0).sqrt()) / 2.0;
        assert!((g.p[(0, 0)] - p).abs() < 1e-9);
        assert!((g.k[(0, 0)] + 0.5 * p / (1.0 + p)).abs() < 1e-9);
        assert!((g.p[(0, 0)] - 1.13278).abs() < 1e-5);
        assert!((g.k[(0, 0)] + 0.26556).abs() < 1e-5);
    }

    #[test]
    fn unstabilizable_is_rejected() {
        let e = dlqr(&m(1, 1, &[2.0]), &m(1, 1, &[0.0]), &m(1, 1, &[1.0]), &m(1, 1, &[1.0]), 1e-12, 10_000).unwrap_err();
        match e {
            Error::NotStabilizing(rho) => assert!((rho - 2.0).abs() < 1e-12),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn rejects_bad_weights() {
        let a = m(1, 1, &[0.5]);
        let b = m(1, 1, &[1.0]);
        assert!(dlqr(&a, &b, &m(1, 1, &[0.0]), &m(1, 1, &[1.0]), 1e-12, 100).is_err());
        assert!(dlqr(&a, &b, &m(1, 1, &[1.0]), &m(1, 1, &[-1.0]), 1e-12, 100).is_err());
        assert!(dlqr(&a, &m(2, 1, &[1.0, 0.0]), &m(1, 1, &[1.0]), &m(1, 1, &[1.0]), 1e-12, 100).is_err());
    }

    #[test]
    fn example_system_gain() {
        let (l, mu) = (-0.1, 2.0);
        let a = m(3, 3, &[l, 0.0, 0.0, 0.0, mu, l * l - mu, 0.0, 0.0, l * l]);
        let b = m(3, 1, &[0.0, 1.0, 0.0]);
        let g = dlqr(&a, &b, &DMatrix::identity(3, 3), &DMatrix::identity(1, 1), 1e-12, 10_000).unwrap();
        // Decoupled z2 channel: P = 2 + sqrt(5), K = -mu P / (1 + P).
        let p = 2.0 + 5f64.sqrt();
        assert!((g.p[(1, 1)] - p).abs() < 1e-8);
        assert!((g.k[(0, 1)] + mu * p / (1.0 + p)).abs() < 1e-8);
        assert!(g.k[(0, 0)].abs() < 1e-12);
        let mut eig: Vec<f64> = (&a + &b * &g.k).complex_eigenvalues().iter().map(|c| c.re).collect();
        eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((eig[0] + 0.1).abs() < 1e-9);
        assert!((eig[1] - 0.01).abs() < 1e-9);
        assert!((eig[2] - (2.0 - mu * p / (1.0 + p))).abs() < 1e-8);
        assert!(g.spectral_radius < 1.0);
    }

    #[test]
    fn spectral_radius_of_rotation() {
        let rot = m(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert!((spectral_radius(&rot, 0.0).unwrap() - 0.5).abs() < 1e-14);
        assert!(spectral_radius(&m(1, 2, &[1.0, 2.0]), 0.0).is_err());
    }

    #[test]
    fn zero_dynamics_give_zero_gain() {
        let g = dlqr(&DMatrix::zeros(2, 2), &m(2, 1, &[1.0, 0.5]), &DMatrix::identity(2, 2), &m(1, 1, &[1.0]), 1e-12, 100)
            .unwrap();
        assert!(g.k.amax() < 1e-15);
        assert!((&g.p - DMatrix::identity(2, 2)).amax() < 1e-15);
        assert_eq!(g.spectral_radius, 0.0);
    }

    #[test]
    fn stable_uncontrolled_system() {
        let a = m(2, 2, &[0.5, 0.0, 0.0, -0.9]);
        let g = dlqr(&a, &DMatrix::zeros(2, 1), &DMatrix::identity(2, 2), &m(1, 1, &[1.0]), 1e-13, 10_000).unwrap();
        assert!((g.spectral_radius - 0.9).abs() < 1e-12);
        // P = diag(1 / (1 - a_ii^2))
        assert!((g.p[(0, 0)] - 1.0 / 0.75).abs() < 1e-9);
        assert!((g.p[(1, 1)] - 1.0 / 0.19).abs() < 1e-9);
    }

    #[test]
    fn marginal_uncontrollable_mode_is_rejected() {
        let a = m(2, 2, &[1.0, 0.0, 0.0, 0.5]);
        let b = m(2, 1, &[0.0, 1.0]);
        let e = dlqr(&a, &b, &DMatrix::identity(2, 2), &m(1, 1, &[1.0]), 1e-12, 5_000).unwrap_err();
        assert!(matches!(e, Error::NotStabilizing(r) if (r - 1.0).abs() < 1e-12));
    }
}
