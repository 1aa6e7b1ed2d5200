//! Posterior sampling for the mediator model
//! `M_i(s) = α(s) X_i + Σ_k ξ_k(s) C_ik + η_i(s) + ε`, with GP priors on α, ξ_k
//! and η_i expressed through the kernel basis.
//!
//! All updates run in coefficient space. Because ΨᵀΨ = p·I, the voxel-level
//! Gaussian likelihood of a field with coefficients c is, up to a constant,
//! `-(p / 2σ_M²) ‖M̃_i − c‖²` with `M̃_i = to_coeffs(M_i)`, and the residual sum
//! of squares needed for σ_M² is `‖M_i‖² − 2p cᵀM̃_i + p‖c‖²`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, BasmuError, Result};
use crate::kernel::KernelBasis;
use crate::linalg::{sample_gaussian_precision, sample_inv_gamma};
use crate::mala::{mala_step, StepAdapter};
use crate::simulate::Dataset;

/// How θ_α is updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoefUpdate {
    Mala,
    Gibbs,
}

impl std::str::FromStr for CoefUpdate {
    type Err = BasmuError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mala" => Ok(CoefUpdate::Mala),
            "gibbs" => Ok(CoefUpdate::Gibbs),
            other => arg_err(format!("unknown update '{other}' (expected mala or gibbs)")),
        }
    }
}

/// Inverse-gamma hyperprior IG(shape, scale) shared by all variance terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvGammaPrior {
    pub shape: f64,
    pub scale: f64,
}

impl Default for InvGammaPrior {
    fn default() -> Self {
        Self {
            shape: 2.0,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MediatorVariances {
    pub sigma_m2: f64,
    pub sigma_alpha2: f64,
    pub sigma_xi2: f64,
    pub sigma_eta2: f64,
}

impl Default for MediatorVariances {
    fn default() -> Self {
        Self {
            sigma_m2: 1.0,
            sigma_alpha2: 1.0,
            sigma_xi2: 1.0,
            sigma_eta2: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediatorOptions {
    pub iters: usize,
    pub burn_in: usize,
    pub alpha_update: CoefUpdate,
    /// Initial MALA step; derived from the data when `None`.
    pub initial_step: Option<f64>,
    pub target_acceptance: f64,
    pub hyperprior: InvGammaPrior,
    /// Hold all variances at these values instead of sampling them.
    pub fixed_variances: Option<MediatorVariances>,
}

impl MediatorOptions {
    /// `iters` iterations keeping the last 10%.
    pub fn with_iters(iters: usize) -> Self {
        Self {
            iters,
            burn_in: iters - iters / 10,
            ..Self::default()
        }
    }
}

impl Default for MediatorOptions {
    fn default() -> Self {
        Self {
            iters: 1000,
            burn_in: 900,
            alpha_update: CoefUpdate::Mala,
            initial_step: None,
            target_acceptance: 0.574,
            hyperprior: InvGammaPrior::default(),
            fixed_variances: None,
        }
    }
}

/// Data reduced to what the coefficient-space sampler needs.
#[derive(Debug, Clone)]
pub struct MediatorStats {
    /// n × L projected mediator M̃.
    pub mt: DMatrix<f64>,
    /// Σ_i ‖M_i‖² over all voxels.
    pub m_sq: f64,
    pub x: DVector<f64>,
    pub c: DMatrix<f64>,
    pub p: usize,
    pub lambda: DVector<f64>,
}

impl MediatorStats {
    pub fn new(data: &Dataset, basis: &KernelBasis) -> Result<Self> {
        if data.p() != basis.p() {
            return arg_err(format!(
                "data has p = {} but the basis has p = {}",
                data.p(),
                basis.p()
            ));
        }
        if data.n() < 2 {
            return Err(BasmuError::Fit(format!("need at least 2 subjects, got {}", data.n())));
        }
        let x_const = data.x.iter().all(|&v| v == data.x[0]);
        if x_const && data.q() == 0 {
            return Err(BasmuError::Fit(
                "degenerate design: constant exposure and no covariates".into(),
            ));
        }
        Ok(Self {
            mt: basis.rows_to_coeffs(&data.m)?,
            m_sq: data.m.norm_squared(),
            x: data.x.clone(),
            c: data.c.clone(),
            p: data.p(),
            lambda: basis.eigenvalues().clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.mt.nrows()
    }

    pub fn l(&self) -> usize {
        self.mt.ncols()
    }

    pub fn q(&self) -> usize {
        self.c.ncols()
    }
}

/// One point in the mediator parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct MediatorState {
    pub theta_alpha: DVector<f64>,
    /// q × L.
    pub theta_xi: DMatrix<f64>,
    /// n × L.
    pub theta_eta: DMatrix<f64>,
    pub variances: MediatorVariances,
}

impl MediatorState {
    pub fn initial(stats: &MediatorStats) -> Self {
        Self {
            theta_alpha: DVector::zeros(stats.l()),
            theta_xi: DMatrix::zeros(stats.q(), stats.l()),
            theta_eta: DMatrix::zeros(stats.n(), stats.l()),
            variances: MediatorVariances::default(),
        }
    }

    /// n × L coefficients of the mean field E[M_i | state].
    pub fn mean_coeffs(&self, stats: &MediatorStats) -> DMatrix<f64> {
        &stats.x * self.theta_alpha.transpose() + &stats.c * &self.theta_xi + &self.theta_eta
    }
}

/// Retained draws from the mediator sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct MediatorChains {
    pub theta_alpha: Vec<DVector<f64>>,
    pub theta_xi: Vec<DMatrix<f64>>,
    pub theta_eta: Vec<DMatrix<f64>>,
    pub sigma_m2: Vec<f64>,
    pub sigma_alpha2: Vec<f64>,
    pub sigma_xi2: Vec<f64>,
    pub sigma_eta2: Vec<f64>,
    pub total_iters: usize,
    pub burn_in: usize,
    /// MALA acceptance rate over retained iterations (1 under Gibbs).
    pub acceptance_rate: f64,
    pub step_size: f64,
}

impl MediatorChains {
    pub fn len(&self) -> usize {
        self.theta_alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta_alpha.is_empty()
    }

    pub fn mean_theta_alpha(&self) -> Option<DVector<f64>> {
        mean_of(&self.theta_alpha)
    }
}

pub(crate) fn mean_of(draws: &[DVector<f64>]) -> Option<DVector<f64>> {
    let first = draws.first()?;
    let mut acc = DVector::zeros(first.len());
    for d in draws {
        acc += d;
    }
    Some(acc / draws.len() as f64)
}

/// Log posterior of θ_α given everything else, and its gradient.
pub fn alpha_log_posterior(
    state: &MediatorState,
    stats: &MediatorStats,
    theta: &DVector<f64>,
) -> (f64, DVector<f64>) {
    let (b, sxx) = alpha_sufficient(state, stats);
    alpha_target(b, sxx, state, stats)(theta)
}

// b = Σ_i X_i r_i with r_i = M̃_i − Ξᵀ C_i − θ_η,i
fn alpha_sufficient(state: &MediatorState, stats: &MediatorStats) -> (DVector<f64>, f64) {
    let resid = &stats.mt - &stats.c * &state.theta_xi - &state.theta_eta;
    (resid.tr_mul(&stats.x), stats.x.norm_squared())
}

fn alpha_target(
    b: DVector<f64>,
    sxx: f64,
    state: &MediatorState,
    stats: &MediatorStats,
) -> impl Fn(&DVector<f64>) -> (f64, DVector<f64>) {
    let prec = stats.p as f64 / state.variances.sigma_m2;
    let prior_var = stats.lambda.map(|l| l * state.variances.sigma_alpha2);
    move |theta: &DVector<f64>| {
        let ll = prec * (theta.dot(&b) - 0.5 * sxx * theta.norm_squared());
        let lp: f64 = theta
            .iter()
            .zip(prior_var.iter())
            .map(|(t, v)| -0.5 * t * t / v)
            .sum();
        let grad = (&b - theta * sxx) * prec - theta.component_div(&prior_var);
        (ll + lp, grad)
    }
}

/// One MALA update of θ_α at step size `step`.
pub fn mala_step_alpha<R: Rng + ?Sized>(
    state: &MediatorState,
    stats: &MediatorStats,
    step: f64,
    rng: &mut R,
) -> Result<(MediatorState, bool)> {
    if !(step > 0.0) {
        return arg_err(format!("MALA step must be positive, got {step}"));
    }
    let (b, sxx) = alpha_sufficient(state, stats);
    let target = alpha_target(b, sxx, state, stats);
    let s = mala_step(&target, &state.theta_alpha, step, rng);
    if !s.finite {
        return Err(BasmuError::Sampler {
            iteration: 0,
            message: "non-finite gradient in alpha update".into(),
        });
    }
    let mut next = state.clone();
    next.theta_alpha = s.theta;
    Ok((next, s.accepted))
}

fn gibbs_alpha<R: Rng + ?Sized>(state: &mut MediatorState, stats: &MediatorStats, rng: &mut R) {
    let (b, sxx) = alpha_sufficient(state, stats);
    let prec_data = stats.p as f64 / state.variances.sigma_m2;
    for l in 0..stats.l() {
        let prec = prec_data * sxx + 1.0 / (state.variances.sigma_alpha2 * stats.lambda[l]);
        let mean = prec_data * b[l] / prec;
        let z: f64 = StandardNormal.sample(rng);
        state.theta_alpha[l] = mean + z / prec.sqrt();
    }
}

fn gibbs_xi<R: Rng + ?Sized>(
    state: &mut MediatorState,
    stats: &MediatorStats,
    rng: &mut R,
    iteration: usize,
) -> Result<()> {
    let q = stats.q();
    if q == 0 {
        return Ok(());
    }
    let prec_data = stats.p as f64 / state.variances.sigma_m2;
    let ctc = stats.c.tr_mul(&stats.c) * prec_data;
    let resid = &stats.mt - &stats.x * state.theta_alpha.transpose() - &state.theta_eta;
    let rhs_all = stats.c.tr_mul(&resid) * prec_data; // q × L
    for l in 0..stats.l() {
        let mut prec = ctc.clone();
        for k in 0..q {
            prec[(k, k)] += 1.0 / (state.variances.sigma_xi2 * stats.lambda[l]);
        }
        let rhs = rhs_all.column(l).into_owned();
        let (draw, _) = sample_gaussian_precision(&prec, &rhs, rng, iteration)?;
        state.theta_xi.set_column(l, &draw);
    }
    Ok(())
}

fn gibbs_eta<R: Rng + ?Sized>(state: &mut MediatorState, stats: &MediatorStats, rng: &mut R) {
    let prec_data = stats.p as f64 / state.variances.sigma_m2;
    let fixed = &stats.x * state.theta_alpha.transpose() + &stats.c * &state.theta_xi;
    for l in 0..stats.l() {
        let prec = prec_data + 1.0 / (state.variances.sigma_eta2 * stats.lambda[l]);
        let sd = prec.sqrt().recip();
        for i in 0..stats.n() {
            let mean = prec_data * (stats.mt[(i, l)] - fixed[(i, l)]) / prec;
            let z: f64 = StandardNormal.sample(rng);
            state.theta_eta[(i, l)] = mean + sd * z;
        }
    }
}

/// Voxel-level residual sum of squares Σ_ij (M_ij − mean_ij)².
pub fn residual_ss(state: &MediatorState, stats: &MediatorStats) -> f64 {
    let mean = state.mean_coeffs(stats);
    let p = stats.p as f64;
    let cross: f64 = mean.iter().zip(stats.mt.iter()).map(|(a, b)| a * b).sum();
    (stats.m_sq - 2.0 * p * cross + p * mean.norm_squared()).max(0.0)
}

fn weighted_sq(theta: &DMatrix<f64>, lambda: &DVector<f64>) -> f64 {
    // rows are draws of L-vectors
    let mut s = 0.0;
    for l in 0..theta.ncols() {
        s += theta.column(l).norm_squared() / lambda[l];
    }
    s
}

fn gibbs_variances<R: Rng + ?Sized>(
    state: &mut MediatorState,
    stats: &MediatorStats,
    prior: &InvGammaPrior,
    rng: &mut R,
) {
    let (a, b) = (prior.shape, prior.scale);
    let (n, l, q) = (stats.n() as f64, stats.l() as f64, stats.q() as f64);
    let ss = residual_ss(state, stats);
    state.variances.sigma_m2 = sample_inv_gamma(a + 0.5 * n * stats.p as f64, b + 0.5 * ss, rng);
    let ta = DMatrix::from_row_slice(1, stats.l(), state.theta_alpha.as_slice());
    state.variances.sigma_alpha2 =
        sample_inv_gamma(a + 0.5 * l, b + 0.5 * weighted_sq(&ta, &stats.lambda), rng);
    if stats.q() > 0 {
        state.variances.sigma_xi2 = sample_inv_gamma(
            a + 0.5 * q * l,
            b + 0.5 * weighted_sq(&state.theta_xi, &stats.lambda),
            rng,
        );
    }
    state.variances.sigma_eta2 = sample_inv_gamma(
        a + 0.5 * n * l,
        b + 0.5 * weighted_sq(&state.theta_eta, &stats.lambda),
        rng,
    );
}

fn state_is_finite(state: &MediatorState) -> bool {
    let v = &state.variances;
    state.theta_alpha.iter().all(|x| x.is_finite())
        && state.theta_xi.iter().all(|x| x.is_finite())
        && state.theta_eta.iter().all(|x| x.is_finite())
        && [v.sigma_m2, v.sigma_alpha2, v.sigma_xi2, v.sigma_eta2]
            .iter()
            .all(|x| x.is_finite() && *x > 0.0)
}

/// Sample the mediator-model posterior.
///
/// Sweep order per iteration: α (MALA or Gibbs), ξ, η, then the variances.
/// The MALA step adapts toward `target_acceptance` during burn-in and is
/// frozen afterwards.
pub fn fit_mediator<R: Rng + ?Sized>(
    data: &Dataset,
    basis: &KernelBasis,
    opts: &MediatorOptions,
    rng: &mut R,
) -> Result<MediatorChains> {
    let stats = MediatorStats::new(data, basis)?;
    fit_mediator_stats(&stats, opts, rng)
}

pub fn fit_mediator_stats<R: Rng + ?Sized>(
    stats: &MediatorStats,
    opts: &MediatorOptions,
    rng: &mut R,
) -> Result<MediatorChains> {
    if opts.burn_in >= opts.iters {
        return arg_err(format!(
            "burn-in {} must be smaller than the iteration count {}",
            opts.burn_in, opts.iters
        ));
    }
    let mut state = MediatorState::initial(stats);
    if let Some(v) = opts.fixed_variances {
        state.variances = v;
    }
    let init_step = opts.initial_step.unwrap_or_else(|| {
        let prec = stats.p as f64 / state.variances.sigma_m2 * stats.x.norm_squared()
            + 1.0 / (state.variances.sigma_alpha2 * stats.lambda.max());
        prec.sqrt().recip() * (stats.l() as f64).powf(-1.0 / 6.0)
    });
    let mut adapter = StepAdapter::new(init_step, opts.target_acceptance);

    let keep = opts.iters - opts.burn_in;
    let mut chains = MediatorChains {
        theta_alpha: Vec::with_capacity(keep),
        theta_xi: Vec::with_capacity(keep),
        theta_eta: Vec::with_capacity(keep),
        sigma_m2: Vec::with_capacity(keep),
        sigma_alpha2: Vec::with_capacity(keep),
        sigma_xi2: Vec::with_capacity(keep),
        sigma_eta2: Vec::with_capacity(keep),
        total_iters: opts.iters,
        burn_in: opts.burn_in,
        acceptance_rate: 1.0,
        step_size: init_step,
    };
    let mut accepted = 0usize;

    for it in 0..opts.iters {
        match opts.alpha_update {
            CoefUpdate::Mala => {
                let (b, sxx) = alpha_sufficient(&state, stats);
                let target = alpha_target(b, sxx, &state, stats);
                let s = mala_step(&target, &state.theta_alpha, adapter.step(), rng);
                if !s.finite {
                    return Err(BasmuError::Sampler {
                        iteration: it,
                        message: "non-finite gradient in alpha update".into(),
                    });
                }
                if it < opts.burn_in {
                    adapter.update(s.accept_prob);
                } else if s.accepted {
                    accepted += 1;
                }
                state.theta_alpha = s.theta;
            }
            CoefUpdate::Gibbs => gibbs_alpha(&mut state, stats, rng),
        }
        gibbs_xi(&mut state, stats, rng, it)?;
        gibbs_eta(&mut state, stats, rng);
        if opts.fixed_variances.is_none() {
            gibbs_variances(&mut state, stats, &opts.hyperprior, rng);
        }
        if !state_is_finite(&state) {
            return Err(BasmuError::Sampler {
                iteration: it,
                message: "mediator state became non-finite".into(),
            });
        }
        if it >= opts.burn_in {
            chains.theta_alpha.push(state.theta_alpha.clone());
            chains.theta_xi.push(state.theta_xi.clone());
            chains.theta_eta.push(state.theta_eta.clone());
            chains.sigma_m2.push(state.variances.sigma_m2);
            chains.sigma_alpha2.push(state.variances.sigma_alpha2);
            chains.sigma_xi2.push(state.variances.sigma_xi2);
            chains.sigma_eta2.push(state.variances.sigma_eta2);
        }
    }
    if opts.alpha_update == CoefUpdate::Mala {
        chains.acceptance_rate = accepted as f64 / keep as f64;
        chains.step_size = adapter.step();
    }
    Ok(chains)
}

/// Mean over retained draws of θ_η, as an n × L matrix.
pub fn posterior_mean_eta_coeffs(chains: &MediatorChains) -> Result<DMatrix<f64>> {
    let first = chains
        .theta_eta
        .first()
        .ok_or_else(|| BasmuError::Argument("empty mediator chain".into()))?;
    let mut acc = DMatrix::zeros(first.nrows(), first.ncols());
    for d in &chains.theta_eta {
        acc += d;
    }
    Ok(acc / chains.theta_eta.len() as f64)
}

/// η̂_i(s_j): the posterior-mean individual effects on the grid (n × p).
pub fn posterior_mean_eta(chains: &MediatorChains, basis: &KernelBasis) -> Result<DMatrix<f64>> {
    basis.rows_from_coeffs(&posterior_mean_eta_coeffs(chains)?)
}
