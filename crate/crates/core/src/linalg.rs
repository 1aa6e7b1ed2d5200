//! Small dense helpers shared by the samplers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{BasmuError, Result};

pub fn std_normal_vec<R: Rng + ?Sized>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

/// Draw from N(Q⁻¹b, Q⁻¹) given a symmetric positive-definite precision Q.
///
/// Returns the draw together with the mean Q⁻¹b.
pub fn sample_gaussian_precision<R: Rng + ?Sized>(
    precision: &DMatrix<f64>,
    rhs: &DVector<f64>,
    rng: &mut R,
    iteration: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let chol = precision
        .clone()
        .cholesky()
        .ok_or_else(|| BasmuError::Numerical {
            iteration,
            message: "precision matrix is not positive definite".into(),
        })?;
    let mean = chol.solve(rhs);
    let z = std_normal_vec(rhs.len(), rng);
    // L Lᵀ = Q, so Lᵀ x = z gives Cov(x) = Q⁻¹
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| BasmuError::Numerical {
            iteration,
            message: "triangular solve failed".into(),
        })?;
    Ok((&mean + noise, mean))
}

/// Inverse-gamma draw with shape `a` and scale `b` (density ∝ x^{-a-1} e^{-b/x}).
pub fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0 / scale).expect("inverse-gamma parameters must be positive");
    1.0 / g.sample(rng)
}
