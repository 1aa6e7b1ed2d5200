//! Closed-form asymptotic bias limits for the θ_β estimators and the
//! frequentist NIE bias, plus the rank diagnostics behind them.
//!
//! In coefficient space the mediator is `M̃_i = θ_{E,i} + e_i`, where `θ_{E,i}`
//! holds the coefficients of the mean field `α X_i + ξ C_i + η_i` and `e_i` is
//! noise with covariance `σ² I`. For voxel data with iid noise of variance
//! σ_M², that basis-space variance is `σ_M² / p`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, BasmuError, Result};
use crate::kernel::KernelBasis;
use crate::outcome::{fit_outcome_stats, OutcomeModel, OutcomeOptions, OutcomeStats};
use crate::simulate::{make_truth, simulate_dataset, CaseConfig, Truth};
use crate::{eigenbasis, rng_from_seed};

/// Moments entering the bias limits.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasInputs {
    /// L × L, n⁻¹ Σ θ_E θ_Eᵀ.
    pub h: DMatrix<f64>,
    /// n⁻¹ Σ θ_E U⁰.
    pub h0: DVector<f64>,
    /// n⁻¹ Σ θ_E Û.
    pub hhat: DVector<f64>,
    /// Noise variance of M̃ in coefficient space.
    pub sigma2: f64,
}

impl BiasInputs {
    pub fn new(h: DMatrix<f64>, h0: DVector<f64>, hhat: DVector<f64>, sigma2: f64) -> Result<Self> {
        let l = h.nrows();
        if h.ncols() != l || h0.len() != l || hhat.len() != l {
            return arg_err("bias inputs have inconsistent dimensions");
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return arg_err(format!("noise variance must be positive, got {sigma2}"));
        }
        if !h.iter().chain(h0.iter()).chain(hhat.iter()).all(|v| v.is_finite()) {
            return arg_err("bias inputs contain non-finite values");
        }
        if (&h - h.transpose()).amax() > 1e-9 * h.amax().max(1.0) {
            return arg_err("H must be symmetric");
        }
        Ok(Self { h, h0, hhat, sigma2 })
    }
}

/// Per-subject coefficients of the generative mean fields (n × L).
pub fn mean_field_coeffs(
    truth: &Truth,
    x: &DVector<f64>,
    c: &DMatrix<f64>,
    basis: &KernelBasis,
) -> Result<DMatrix<f64>> {
    let n = truth.n();
    if x.len() != n || c.nrows() != n || c.ncols() != truth.xi.nrows() || basis.p() != truth.p() {
        return arg_err("truth, covariates and basis have inconsistent dimensions");
    }
    let fields = x * truth.alpha.transpose() + c * &truth.xi + &truth.eta;
    basis.rows_to_coeffs(&fields)
}

/// Empirical H, h⁰ and ĥ. `fitted` supplies (η̂, ν̂) for ĥ; without it ĥ = 0.
pub fn empirical_h_h(
    truth: &Truth,
    x: &DVector<f64>,
    c: &DMatrix<f64>,
    basis: &KernelBasis,
    fitted: Option<(&DMatrix<f64>, &DVector<f64>)>,
) -> Result<BiasInputs> {
    let theta_e = mean_field_coeffs(truth, x, c, basis)?;
    let n = theta_e.nrows() as f64;
    let h = theta_e.tr_mul(&theta_e) / n;
    let h0 = theta_e.tr_mul(&truth.confounder_term()) / n;
    let hhat = match fitted {
        Some((etahat, nuhat)) => {
            if etahat.shape() != truth.eta.shape() || nuhat.len() != truth.p() {
                return arg_err("fitted (etahat, nuhat) have the wrong shape");
            }
            let uhat = etahat * nuhat / truth.p() as f64;
            theta_e.tr_mul(&uhat) / n
        }
        None => DVector::zeros(basis.len()),
    };
    BiasInputs::new(h, h0, hhat, truth.sigma_m.powi(2) / truth.p() as f64)
}

fn ridge_solve(h: &DMatrix<f64>, sigma2: f64, rhs: &DVector<f64>) -> DVector<f64> {
    let mut a = h.clone();
    for k in 0..a.nrows() {
        a[(k, k)] += sigma2;
    }
    a.cholesky()
        .expect("H + σ²I is positive definite for PSD H and σ² > 0")
        .solve(rhs)
}

/// (H + σ²I)⁻¹ h⁰: the limiting bias of θ̂_β when the confounder term is omitted.
pub fn bias_limit_bima(inputs: &BiasInputs) -> DVector<f64> {
    ridge_solve(&inputs.h, inputs.sigma2, &inputs.h0)
}

/// (H + σ²I)⁻¹ (h⁰ − ĥ): the limiting bias after adjusting for Û.
pub fn bias_limit_basmu(inputs: &BiasInputs) -> DVector<f64> {
    ridge_solve(&inputs.h, inputs.sigma2, &(&inputs.h0 - &inputs.hhat))
}

/// θ_αᵀ (Θ_L + σ²I)⁻¹ Θ_L θ_ν: asymptotic NIE bias of the OLS estimator that
/// omits the confounders.
pub fn freq_bias_limit(
    theta_alpha: &DVector<f64>,
    theta_nu: &DVector<f64>,
    theta_l: &DMatrix<f64>,
    sigma2: f64,
) -> Result<f64> {
    let l = theta_alpha.len();
    if theta_nu.len() != l || theta_l.shape() != (l, l) {
        return arg_err("frequentist bias inputs have inconsistent dimensions");
    }
    if !(sigma2 > 0.0) {
        return arg_err(format!("noise variance must be positive, got {sigma2}"));
    }
    Ok(theta_alpha.dot(&ridge_solve(theta_l, sigma2, &(theta_l * theta_nu))))
}

/// σ_η² / (σ_η² + σ_M²), the shrinkage of the NIE bias for iid individual effects.
pub fn shrinkage_factor(sigma_eta2: f64, sigma_m2: f64) -> f64 {
    sigma_eta2 / (sigma_eta2 + sigma_m2)
}

/// Rank summary of a design matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub max_singular_value: f64,
    pub min_singular_value: f64,
    pub condition_number: f64,
    pub rank_deficient: bool,
}

/// Rank of `[X, C, extra]`; flags deficiency when σ_min < 1e-8 σ_max.
///
/// `extra` holds the individual-effect columns: basis coefficients θ_η
/// (n × L) or η restricted to a support (n × m).
pub fn identifiability_check(
    x: &DVector<f64>,
    c: &DMatrix<f64>,
    extra: &DMatrix<f64>,
) -> Result<IdentifiabilityReport> {
    let n = x.len();
    if c.nrows() != n || extra.nrows() != n {
        return arg_err("design blocks have different row counts");
    }
    let cols = 1 + c.ncols() + extra.ncols();
    if n <= cols {
        return Err(BasmuError::Argument(format!(
            "need n > 1 + q + m, got n = {n} and 1 + q + m = {cols}"
        )));
    }
    let mut z = DMatrix::zeros(n, cols);
    z.set_column(0, x);
    z.columns_mut(1, c.ncols()).copy_from(c);
    z.columns_mut(1 + c.ncols(), extra.ncols()).copy_from(extra);
    let sv = z.singular_values();
    let max = sv.max();
    let min = sv.min();
    let tol = 1e-8 * max;
    Ok(IdentifiabilityReport {
        rows: n,
        cols,
        rank: sv.iter().filter(|&&s| s > tol).count(),
        max_singular_value: max,
        min_singular_value: min,
        condition_number: if min > 0.0 { max / min } else { f64::INFINITY },
        rank_deficient: min < tol,
    })
}

/// Average BIMA θ_β error at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalBias {
    pub n: usize,
    pub reps: usize,
    /// Mean over replications of ‖θ̂_β − θ_β⁰‖.
    pub mean_error_norm: f64,
    /// ‖mean over replications of (θ̂_β − θ_β⁰)‖.
    pub bias_norm: f64,
    pub bias: Vec<f64>,
}

/// Monte Carlo BIMA θ_β error for `cfg` at each sample size, using the
/// posterior mean of the outcome sampler. Replication r uses seed `seed + r`.
pub fn empirical_bias_by_n(
    cfg: &CaseConfig,
    ns: &[usize],
    reps: usize,
    seed: u64,
    opts: &OutcomeOptions,
) -> Result<Vec<EmpiricalBias>> {
    if reps == 0 {
        return arg_err("need at least one replication");
    }
    let basis = eigenbasis(&cfg.grid, &cfg.matern, cfg.l)?;
    let theta_beta0 = basis.to_coeffs(&crate::simulate::signal_shapes(&cfg.grid).1)?;
    let mut out = Vec::with_capacity(ns.len());
    for &n in ns {
        let mut c = cfg.clone();
        c.n = n;
        c.validate()?;
        let mut sum_norm = 0.0;
        let mut sum_err = DVector::zeros(basis.len());
        for r in 0..reps as u64 {
            let mut rng = rng_from_seed(seed + r, n as u64);
            let truth = make_truth(&c, &basis, &mut rng)?;
            let data = simulate_dataset(&truth, &c, &mut rng)?;
            let stats = OutcomeStats::new(&data, &basis, None)?;
            let chains = fit_outcome_stats(OutcomeModel::Bima, &stats, opts, &mut rng)?;
            let err = chains.mean_theta_beta().expect("non-empty chain") - &theta_beta0;
            sum_norm += err.norm();
            sum_err += err;
        }
        let bias = sum_err / reps as f64;
        out.push(EmpiricalBias {
            n,
            reps,
            mean_error_norm: sum_norm / reps as f64,
            bias_norm: bias.norm(),
            bias: bias.iter().cloned().collect(),
        });
    }
    Ok(out)
}

/// Contents of bias_report.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub limit_vector: Vec<f64>,
    pub limit_norm: f64,
    pub basmu_limit_vector: Option<Vec<f64>>,
    pub empirical_bias_by_n: Vec<EmpiricalBias>,
    pub freq_limit_scalar: f64,
    pub shrinkage_factor: f64,
    pub identifiability: IdentifiabilityReport,
}

/// Evaluate every bias quantity for a truth and its covariates.
pub fn bias_report(
    truth: &Truth,
    x: &DVector<f64>,
    c: &DMatrix<f64>,
    basis: &KernelBasis,
    fitted: Option<(&DMatrix<f64>, &DVector<f64>)>,
    empirical: Vec<EmpiricalBias>,
) -> Result<BiasReport> {
    let inputs = empirical_h_h(truth, x, c, basis, fitted)?;
    let limit = bias_limit_bima(&inputs);
    let eta_coeffs = basis.rows_to_coeffs(&truth.eta)?;
    let theta_l = eta_coeffs.tr_mul(&eta_coeffs) / truth.n() as f64;
    let freq = freq_bias_limit(
        &basis.to_coeffs(&truth.alpha)?,
        &basis.to_coeffs(&truth.nu)?,
        &theta_l,
        inputs.sigma2,
    )?;
    let ident = identifiability_check(x, c, &eta_coeffs)?;
    Ok(BiasReport {
        limit_norm: limit.norm(),
        limit_vector: limit.iter().cloned().collect(),
        basmu_limit_vector: fitted.map(|_| bias_limit_basmu(&inputs).iter().cloned().collect()),
        empirical_bias_by_n: empirical,
        freq_limit_scalar: freq,
        shrinkage_factor: shrinkage_factor(truth.sigma_eta.powi(2), truth.sigma_m.powi(2)),
        identifiability: ident,
    })
}
