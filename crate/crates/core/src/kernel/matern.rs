use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{BasmuError, Result};

/// Matérn smoothness τ and length-scale ρ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub smoothness: f64,
    pub length_scale: f64,
}

impl MaternParams {
    pub fn new(smoothness: f64, length_scale: f64) -> Result<Self> {
        if !(smoothness > 0.0 && smoothness.is_finite()) {
            return Err(BasmuError::Argument(format!(
                "Matérn smoothness must be positive, got {smoothness}"
            )));
        }
        if !(length_scale > 0.0 && length_scale.is_finite()) {
            return Err(BasmuError::Argument(format!(
                "Matérn length-scale must be positive, got {length_scale}"
            )));
        }
        Ok(Self {
            smoothness,
            length_scale,
        })
    }
}

impl Default for MaternParams {
    /// τ = 0.2, ρ = 2.
    fn default() -> Self {
        Self {
            smoothness: 0.2,
            length_scale: 2.0,
        }
    }
}

/// Modified Bessel function of the second kind, K_ν(x), for real ν and x > 0.
///
/// Evaluates `K_ν(x) = ∫₀^∞ exp(-x cosh t) cosh(ν t) dt` with the trapezoid
/// rule. The integrand is analytic in the strip |Im t| < π/2, so the rule
/// converges geometrically in the step; h = 0.1 is below f64 resolution.
pub fn bessel_k(nu: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() || !nu.is_finite() {
        return Err(BasmuError::Domain(format!(
            "K_nu(x) needs finite nu and x > 0, got nu={nu}, x={x}"
        )));
    }
    const H: f64 = 0.1;
    let f = |t: f64| (-x * t.cosh()).exp() * (nu * t).cosh();
    let mut sum = 0.5 * f(0.0);
    let mut k = 1usize;
    loop {
        let t = k as f64 * H;
        let term = f(t);
        sum += term;
        // past the maximum of the integrand and negligible
        if term <= sum * 1e-18 && x * t.sinh() > nu.abs() {
            break;
        }
        k += 1;
        if k > 100_000 {
            break;
        }
    }
    Ok(sum * H)
}

/// Matérn correlation at distance `d`: C_τ(d/ρ) with C_τ(0) = 1.
///
/// `C_τ(r) = 2^{1-τ}/Γ(τ) · (√(2τ) r)^τ · K_τ(√(2τ) r)`, evaluated at the
/// unsquared Euclidean distance.
pub fn matern_cov(d: f64, params: &MaternParams) -> Result<f64> {
    if !d.is_finite() || d < 0.0 {
        return Err(BasmuError::Domain(format!(
            "distance must be finite and non-negative, got {d}"
        )));
    }
    if d == 0.0 {
        return Ok(1.0);
    }
    let tau = params.smoothness;
    let x = (2.0 * tau).sqrt() * d / params.length_scale;
    let log_pref = (1.0 - tau) * std::f64::consts::LN_2 - gamma(tau).ln() + tau * x.ln();
    let k = bessel_k(tau, x)?;
    if k == 0.0 {
        return Ok(0.0);
    }
    Ok((log_pref + k.ln()).exp().min(1.0))
}
