//! Small fixed-size helpers shared by the filters.

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector2};
use std::f64::consts::PI;

use crate::error::{MttError, Result};

pub(crate) const SYMMETRY_TOL: f64 = 1e-9;
pub(crate) const PSD_TOL: f64 = 1e-9;

pub fn symmetrize(m: &Matrix4<f64>) -> Matrix4<f64> {
    (m + m.transpose()) * 0.5
}

/// Checks symmetry and non-negative eigenvalues within the library tolerances.
pub fn check_psd(m: &Matrix4<f64>) -> Result<()> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(MttError::NonPsdCovariance("non-finite entry".into()));
    }
    let asym = (m - m.transpose()).abs().max();
    if asym > SYMMETRY_TOL * (1.0 + m.abs().max()) {
        return Err(MttError::NonPsdCovariance(format!("asymmetry {asym:e}")));
    }
    let min_eig = SymmetricEigen::new(symmetrize(m)).eigenvalues.min();
    if min_eig < -PSD_TOL * (1.0 + m.abs().max()) {
        return Err(MttError::NonPsdCovariance(format!("eigenvalue {min_eig:e}")));
    }
    Ok(())
}

/// Symmetric positive definite check for 2×2 matrices (measurement noise).
pub fn is_spd2(m: &Matrix2<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
        && (m[(0, 1)] - m[(1, 0)]).abs() <= SYMMETRY_TOL * (1.0 + m.abs().max())
        && m[(0, 0)] > 0.0
        && m.determinant() > 0.0
}

/// Precomputed bivariate normal over innovations with covariance `s`.
#[derive(Debug, Clone, Copy)]
pub struct Gaussian2 {
    inv: Matrix2<f64>,
    norm: f64,
}

impl Gaussian2 {
    pub fn new(s: &Matrix2<f64>) -> Result<Self> {
        let det = s.determinant();
        if !(det > 0.0) || !det.is_finite() {
            return Err(MttError::SingularInnovation);
        }
        let inv = s.try_inverse().ok_or(MttError::SingularInnovation)?;
        Ok(Self {
            inv,
            norm: 1.0 / (2.0 * PI * det.sqrt()),
        })
    }

    #[inline]
    pub fn mahalanobis_sq(&self, residual: &Vector2<f64>) -> f64 {
        (residual.transpose() * self.inv * residual)[0]
    }

    #[inline]
    pub fn pdf(&self, residual: &Vector2<f64>) -> f64 {
        self.norm * (-0.5 * self.mahalanobis_sq(residual)).exp()
    }

    pub fn inverse(&self) -> &Matrix2<f64> {
        &self.inv
    }
}
