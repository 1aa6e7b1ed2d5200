//! Posterior sampling for the two outcome models.
//!
//! BIMA regresses `Y_i` on `Σ_j β(s_j) M_i(s_j) λ_cell + γ X_i + ζᵀC_i`; BASMU
//! adds a confounder term built from η̂, the posterior-mean individual effects
//! of the mediator fit, and samples it by the two-stage algorithm.
//!
//! The sampler uses η̂ itself as the n × p design, `Û_i = Σ_j ν_j η̂_i(s_j)`,
//! with the spike-and-slab prior `ν = g·δ`, `g ~ N(0, σ_ν²)`,
//! `δ ~ Bernoulli(p_δ)` on these coefficients. On the scale of the model term
//! `Σ_j ν(s_j) η̂_i(s_j) λ_cell` this is `ν(s_j) = p · ν_j`.
//!
//! With β in the span of the basis, the mediator term equals `θ_βᵀ M̃_i` where
//! `M̃_i = to_coeffs(M_i)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, BasmuError, Result};
use crate::kernel::KernelBasis;
use crate::linalg::{sample_gaussian_precision, sample_inv_gamma, std_normal_vec};
use crate::mala::{mala_step, StepAdapter};
use crate::mediator::{CoefUpdate, InvGammaPrior};
use crate::simulate::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeModel {
    Bima,
    Basmu,
}

impl OutcomeModel {
    pub fn name(self) -> &'static str {
        match self {
            OutcomeModel::Bima => "bima",
            OutcomeModel::Basmu => "basmu",
        }
    }
}

impl std::str::FromStr for OutcomeModel {
    type Err = BasmuError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bima" => Ok(OutcomeModel::Bima),
            "basmu" => Ok(OutcomeModel::Basmu),
            other => arg_err(format!("unknown outcome model '{other}' (expected bima or basmu)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeVariances {
    pub sigma_y2: f64,
    pub sigma_beta2: f64,
    pub sigma_gamma2: f64,
    pub sigma_zeta2: f64,
    pub sigma_nu2: f64,
}

impl Default for OutcomeVariances {
    fn default() -> Self {
        Self {
            sigma_y2: 1.0,
            sigma_beta2: 1.0,
            sigma_gamma2: 1.0,
            sigma_zeta2: 1.0,
            sigma_nu2: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeOptions {
    pub iters: usize,
    pub burn_in: usize,
    pub beta_update: CoefUpdate,
    pub p_delta: f64,
    pub hyperprior: InvGammaPrior,
    pub target_acceptance: f64,
    pub fixed_variances: Option<OutcomeVariances>,
    /// Hold the selection indicators at this value for the whole run.
    pub fixed_delta: Option<Vec<bool>>,
}

impl OutcomeOptions {
    /// `iters` iterations keeping the last 10%.
    pub fn with_iters(iters: usize) -> Self {
        Self {
            iters,
            burn_in: iters - iters / 10,
            ..Self::default()
        }
    }
}

impl Default for OutcomeOptions {
    fn default() -> Self {
        Self {
            iters: 20_000,
            burn_in: 18_000,
            beta_update: CoefUpdate::Gibbs,
            p_delta: 0.5,
            hyperprior: InvGammaPrior::default(),
            target_acceptance: 0.574,
            fixed_variances: None,
            fixed_delta: None,
        }
    }
}

/// Thin singular value decomposition `A = U diag(d) Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub d: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    /// Full thin SVD with min(rows, cols) components, zeros included.
    pub fn from_dense(a: &DMatrix<f64>) -> Result<Self> {
        let (n, m) = a.shape();
        if n == 0 || m == 0 {
            return Ok(Self::empty(n, m));
        }
        let svd = a.clone().svd(true, true);
        let (u, vt) = match (svd.u, svd.v_t) {
            (Some(u), Some(vt)) => (u, vt),
            _ => {
                return Err(BasmuError::Numerical {
                    iteration: 0,
                    message: "SVD did not converge".into(),
                })
            }
        };
        Ok(Self {
            u,
            d: svd.singular_values,
            v: vt.transpose(),
        })
    }

    /// SVD keeping only singular values above `rel_tol · max`.
    pub fn low_rank(a: &DMatrix<f64>, rel_tol: f64) -> Result<Self> {
        let full = Self::from_dense(a)?;
        let max = full.d.iter().cloned().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..full.d.len())
            .filter(|&k| max > 0.0 && full.d[k] > rel_tol * max)
            .collect();
        Ok(Self {
            u: full.u.select_columns(&keep),
            d: DVector::from_iterator(keep.len(), keep.iter().map(|&k| full.d[k])),
            v: full.v.select_columns(&keep),
        })
    }

    fn empty(n: usize, m: usize) -> Self {
        Self {
            u: DMatrix::zeros(n, 0),
            d: DVector::zeros(0),
            v: DMatrix::zeros(m, 0),
        }
    }

    pub fn rank(&self) -> usize {
        self.d.len()
    }

    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn cols(&self) -> usize {
        self.v.nrows()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.d) * self.v.transpose()
    }

    /// Exact SVD of the column submatrix `A[:, cols]`, computed from this
    /// factorization: with `A = U S Wᵀ`, `A[:, cols] = U S W[cols, :]ᵀ`;
    /// a QR of `W[cols, :]` and an SVD of the small core give the result.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        let n = self.rows();
        if let Some(&bad) = cols.iter().find(|&&j| j >= self.cols()) {
            return arg_err(format!("column {bad} out of range for {} columns", self.cols()));
        }
        if cols.is_empty() || self.rank() == 0 {
            return Ok(Self::empty(n, cols.len()));
        }
        let w = self.v.select_rows(cols);
        let qr = w.qr();
        let (q, r) = (qr.q(), qr.r());
        // core = S Rᵀ, r0 × k
        let core = DMatrix::from_diagonal(&self.d) * r.transpose();
        let small = ThinSvd::from_dense(&core)?;
        Ok(Self {
            u: &self.u * small.u,
            d: small.d,
            v: q * small.v,
        })
    }
}

/// Which form of the ν update to use on the active set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NuBranch {
    /// Auxiliary-variable form when the active set exceeds n, direct otherwise.
    Auto,
    Auxiliary,
    Direct,
}

/// Draw ν_A from its conditional given `svd` = SVD of the active design G_A.
///
/// `y_nu` is the outcome residual without the confounder term. The result has
/// one entry per active column.
pub fn sample_nu_active<R: Rng + ?Sized>(
    y_nu: &DVector<f64>,
    svd: &ThinSvd,
    sigma_y2: f64,
    sigma_nu2: f64,
    branch: NuBranch,
    rng: &mut R,
) -> DVector<f64> {
    let m = svd.cols();
    let n = y_nu.len();
    let sd_nu = sigma_nu2.sqrt();
    if svd.rank() == 0 {
        return std_normal_vec(m, rng) * sd_nu;
    }
    let y_star = svd.u.tr_mul(y_nu);
    let use_aux = match branch {
        NuBranch::Auto => m > n,
        NuBranch::Auxiliary => true,
        NuBranch::Direct => false,
    };
    if use_aux {
        let tau2 = sigma_nu2 / sigma_y2;
        let a1 = std_normal_vec(m, rng) * sd_nu;
        let a2 = std_normal_vec(svd.rank(), rng) * sigma_y2.sqrt();
        let mut w = &y_star - svd.d.component_mul(&svd.v.tr_mul(&a1)) - a2;
        for k in 0..svd.rank() {
            let dk = svd.d[k];
            w[k] *= tau2 * dk / (1.0 + tau2 * dk * dk);
        }
        a1 + &svd.v * w
    } else {
        let r = svd.rank();
        let mut nu_star = DVector::zeros(r);
        for k in 0..r {
            let dk = svd.d[k];
            let v1 = 1.0 / (dk * dk / sigma_y2 + 1.0 / sigma_nu2);
            let e1 = v1 * dk * y_star[k] / sigma_y2;
            let z: f64 = StandardNormal.sample(rng);
            nu_star[k] = e1 + v1.sqrt() * z;
        }
        let mut out = &svd.v * nu_star;
        if r < m {
            // directions outside the row space of G_A keep their prior law
            let z = std_normal_vec(m, rng) * sd_nu;
            out += &z - &svd.v * svd.v.tr_mul(&z);
        }
        out
    }
}

/// Full ν update: active entries from the conditional, inactive from the prior.
pub fn update_nu_svd<R: Rng + ?Sized>(
    y_nu: &DVector<f64>,
    full_svd: &ThinSvd,
    delta: &[bool],
    sigma_y2: f64,
    sigma_nu2: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let p = full_svd.cols();
    if delta.len() != p {
        return arg_err(format!("delta has length {} but the design has {p} columns", delta.len()));
    }
    let active: Vec<usize> = (0..p).filter(|&j| delta[j]).collect();
    let svd_a = full_svd.select_columns(&active)?;
    let nu_a = sample_nu_active(y_nu, &svd_a, sigma_y2, sigma_nu2, NuBranch::Auto, rng);
    let sd = sigma_nu2.sqrt();
    let mut nu = DVector::zeros(p);
    let mut k = 0;
    for j in 0..p {
        if delta[j] {
            nu[j] = nu_a[k];
            k += 1;
        } else {
            let z: f64 = StandardNormal.sample(rng);
            nu[j] = sd * z;
        }
    }
    Ok(nu)
}

/// P(δ_j = 1 | rest) from the residual norms with the voxel on and off.
pub fn inclusion_probability(r1_sq: f64, r0_sq: f64, sigma_y2: f64, p_delta: f64) -> f64 {
    let log_odds = -(r1_sq - r0_sq) / (2.0 * sigma_y2) + (p_delta / (1.0 - p_delta)).ln();
    1.0 / (1.0 + (-log_odds).exp())
}

/// One sequential sweep over δ. `resid` must hold `Y_ν − G(ν∗δ)` on entry and
/// holds the residual for the updated δ on exit. Returns the inclusion
/// probability used at each voxel.
pub fn update_delta_seq<R: Rng + ?Sized>(
    resid: &mut DVector<f64>,
    g: &DMatrix<f64>,
    nu: &DVector<f64>,
    delta: &mut [bool],
    sigma_y2: f64,
    p_delta: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let p = g.ncols();
    let mut probs = Vec::with_capacity(p);
    for j in 0..p {
        let col = g.column(j);
        let nj = nu[j];
        // R0: residual with voxel j off; R1 = R0 − g_j ν_j
        if delta[j] {
            resid.axpy(nj, &col, 1.0);
        }
        let r0_sq = resid.norm_squared();
        let cross = col.dot(resid);
        let r1_sq = r0_sq - 2.0 * nj * cross + nj * nj * col.norm_squared();
        let prob = inclusion_probability(r1_sq, r0_sq, sigma_y2, p_delta);
        if !prob.is_finite() {
            return Err(BasmuError::Sampler {
                iteration: 0,
                message: format!("non-finite inclusion probability at voxel {j}"),
            });
        }
        let u: f64 = rng.random();
        delta[j] = u < prob;
        if delta[j] {
            resid.axpy(-nj, &col, 1.0);
        }
        probs.push(prob);
    }
    Ok(probs)
}

/// Data reduced for the outcome samplers.
#[derive(Debug, Clone)]
pub struct OutcomeStats {
    /// n × L projected mediator M̃.
    pub mt: DMatrix<f64>,
    pub mtm: DMatrix<f64>,
    pub x: DVector<f64>,
    pub c: DMatrix<f64>,
    pub y: DVector<f64>,
    pub lambda: DVector<f64>,
    /// Confounder design η̂ (n × p) and its SVD, BASMU only.
    pub g: Option<DMatrix<f64>>,
    pub g_svd: Option<ThinSvd>,
}

impl OutcomeStats {
    pub fn new(data: &Dataset, basis: &KernelBasis, etahat: Option<&DMatrix<f64>>) -> Result<Self> {
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
        let mt = basis.rows_to_coeffs(&data.m)?;
        Self::from_coeffs(mt, data.x.clone(), data.c.clone(), data.y.clone(), basis.eigenvalues().clone(), etahat, data.p())
    }

    pub fn from_coeffs(
        mt: DMatrix<f64>,
        x: DVector<f64>,
        c: DMatrix<f64>,
        y: DVector<f64>,
        lambda: DVector<f64>,
        etahat: Option<&DMatrix<f64>>,
        p: usize,
    ) -> Result<Self> {
        let n = mt.nrows();
        if x.len() != n || y.len() != n || c.nrows() != n || lambda.len() != mt.ncols() {
            return arg_err("outcome inputs have inconsistent dimensions");
        }
        let (g, g_svd) = match etahat {
            Some(e) => {
                if e.shape() != (n, p) {
                    return arg_err(format!(
                        "etahat is {}×{} but expected {n}×{p}",
                        e.nrows(),
                        e.ncols()
                    ));
                }
                if !e.iter().all(|v| v.is_finite()) {
                    return arg_err("etahat contains non-finite values");
                }
                let g = e.clone();
                let svd = ThinSvd::low_rank(&g, 1e-12)?;
                (Some(g), Some(svd))
            }
            None => (None, None),
        };
        Ok(Self {
            mtm: mt.tr_mul(&mt),
            mt,
            x,
            c,
            y,
            lambda,
            g,
            g_svd,
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

    pub fn p(&self) -> usize {
        self.g.as_ref().map_or(0, |g| g.ncols())
    }
}

/// Current values of every outcome-model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeState {
    pub theta_beta: DVector<f64>,
    pub gamma: f64,
    pub zeta: DVector<f64>,
    pub nu: DVector<f64>,
    pub delta: Vec<bool>,
    pub variances: OutcomeVariances,
}

impl OutcomeState {
    pub fn initial(stats: &OutcomeStats) -> Self {
        Self {
            theta_beta: DVector::zeros(stats.l()),
            gamma: 0.0,
            zeta: DVector::zeros(stats.q()),
            nu: DVector::zeros(stats.p()),
            delta: vec![true; stats.p()],
            variances: OutcomeVariances::default(),
        }
    }

    /// Û = G(ν∗δ), or zero when the model has no confounder term.
    pub fn confounder_term(&self, stats: &OutcomeStats) -> DVector<f64> {
        match &stats.g {
            Some(g) if !self.nu.is_empty() => {
                let active = DVector::from_fn(self.nu.len(), |j, _| {
                    if self.delta[j] {
                        self.nu[j]
                    } else {
                        0.0
                    }
                });
                g * active
            }
            _ => DVector::zeros(stats.n()),
        }
    }

    fn direct_term(&self, stats: &OutcomeStats) -> DVector<f64> {
        &stats.x * self.gamma + &stats.c * &self.zeta
    }
}

/// Conditional law of θ_β: returns (precision, rhs) so that mean = precision⁻¹ rhs.
pub fn theta_beta_conditional(
    stats: &OutcomeStats,
    state: &OutcomeState,
) -> (DMatrix<f64>, DVector<f64>) {
    let v = &state.variances;
    let mut prec = &stats.mtm / v.sigma_y2;
    for l in 0..stats.l() {
        prec[(l, l)] += 1.0 / (v.sigma_beta2 * stats.lambda[l]);
    }
    let r = &stats.y - state.direct_term(stats) - state.confounder_term(stats);
    let rhs = stats.mt.tr_mul(&r) / v.sigma_y2;
    (prec, rhs)
}

/// Gibbs draw of θ_β from N(Var·σ_Y⁻²M̃ᵀr, Var), Var = (D⁻¹/σ_β² + M̃ᵀM̃/σ_Y²)⁻¹.
pub fn update_theta_beta<R: Rng + ?Sized>(
    stats: &OutcomeStats,
    state: &OutcomeState,
    rng: &mut R,
    iteration: usize,
) -> Result<DVector<f64>> {
    let (prec, rhs) = theta_beta_conditional(stats, state);
    Ok(sample_gaussian_precision(&prec, &rhs, rng, iteration)?.0)
}

fn update_gamma_zeta<R: Rng + ?Sized>(
    stats: &OutcomeStats,
    state: &mut OutcomeState,
    rng: &mut R,
    iteration: usize,
) -> Result<()> {
    let q = stats.q();
    let v = state.variances;
    let mut design = DMatrix::zeros(stats.n(), 1 + q);
    design.set_column(0, &stats.x);
    design.columns_mut(1, q).copy_from(&stats.c);
    let mut prec = design.tr_mul(&design) / v.sigma_y2;
    prec[(0, 0)] += 1.0 / v.sigma_gamma2;
    for k in 0..q {
        prec[(k + 1, k + 1)] += 1.0 / v.sigma_zeta2;
    }
    let r = &stats.y - &stats.mt * &state.theta_beta - state.confounder_term(stats);
    let rhs = design.tr_mul(&r) / v.sigma_y2;
    let (draw, _) = sample_gaussian_precision(&prec, &rhs, rng, iteration)?;
    state.gamma = draw[0];
    state.zeta = draw.rows(1, q).into_owned();
    Ok(())
}

fn update_variances<R: Rng + ?Sized>(
    stats: &OutcomeStats,
    state: &mut OutcomeState,
    prior: &InvGammaPrior,
    model: OutcomeModel,
    rng: &mut R,
) {
    let (a, b) = (prior.shape, prior.scale);
    let resid = &stats.y
        - &stats.mt * &state.theta_beta
        - state.direct_term(stats)
        - state.confounder_term(stats);
    let v = &mut state.variances;
    v.sigma_y2 = sample_inv_gamma(a + 0.5 * stats.n() as f64, b + 0.5 * resid.norm_squared(), rng);
    let wsq: f64 = state
        .theta_beta
        .iter()
        .zip(stats.lambda.iter())
        .map(|(t, l)| t * t / l)
        .sum();
    v.sigma_beta2 = sample_inv_gamma(a + 0.5 * stats.l() as f64, b + 0.5 * wsq, rng);
    v.sigma_gamma2 = sample_inv_gamma(a + 0.5, b + 0.5 * state.gamma * state.gamma, rng);
    if stats.q() > 0 {
        v.sigma_zeta2 = sample_inv_gamma(
            a + 0.5 * stats.q() as f64,
            b + 0.5 * state.zeta.norm_squared(),
            rng,
        );
    }
    if model == OutcomeModel::Basmu {
        v.sigma_nu2 = sample_inv_gamma(
            a + 0.5 * stats.p() as f64,
            b + 0.5 * state.nu.norm_squared(),
            rng,
        );
    }
}

/// Retained outcome-model draws. BIMA chains leave the ν, δ and σ_ν² fields empty.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeChains {
    pub model: OutcomeModel,
    pub theta_beta: Vec<DVector<f64>>,
    pub gamma: Vec<f64>,
    pub zeta: Vec<DVector<f64>>,
    pub sigma_y2: Vec<f64>,
    pub sigma_beta2: Vec<f64>,
    pub sigma_gamma2: Vec<f64>,
    pub sigma_zeta2: Vec<f64>,
    /// Coefficients on η̂; multiply by p for the field ν(s_j).
    pub nu: Vec<DVector<f64>>,
    pub delta: Vec<Vec<bool>>,
    pub sigma_nu2: Vec<f64>,
    pub total_iters: usize,
    pub burn_in: usize,
    pub p_delta: f64,
    pub acceptance_rate: f64,
}

impl OutcomeChains {
    fn new(model: OutcomeModel, opts: &OutcomeOptions) -> Self {
        Self {
            model,
            theta_beta: Vec::new(),
            gamma: Vec::new(),
            zeta: Vec::new(),
            sigma_y2: Vec::new(),
            sigma_beta2: Vec::new(),
            sigma_gamma2: Vec::new(),
            sigma_zeta2: Vec::new(),
            nu: Vec::new(),
            delta: Vec::new(),
            sigma_nu2: Vec::new(),
            total_iters: opts.iters,
            burn_in: opts.burn_in,
            p_delta: opts.p_delta,
            acceptance_rate: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.theta_beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta_beta.is_empty()
    }

    pub fn mean_theta_beta(&self) -> Option<DVector<f64>> {
        crate::mediator::mean_of(&self.theta_beta)
    }

    pub fn mean_gamma(&self) -> Option<f64> {
        if self.gamma.is_empty() {
            None
        } else {
            Some(self.gamma.iter().sum::<f64>() / self.gamma.len() as f64)
        }
    }

    /// Posterior mean of the field ν(s_j) = p·ν_j; `None` for BIMA chains.
    pub fn mean_nu_field(&self) -> Option<DVector<f64>> {
        let mean = crate::mediator::mean_of(&self.nu)?;
        let p = mean.len() as f64;
        Some(mean * p)
    }

    fn push(&mut self, s: &OutcomeState) {
        self.theta_beta.push(s.theta_beta.clone());
        self.gamma.push(s.gamma);
        self.zeta.push(s.zeta.clone());
        let v = &s.variances;
        self.sigma_y2.push(v.sigma_y2);
        self.sigma_beta2.push(v.sigma_beta2);
        self.sigma_gamma2.push(v.sigma_gamma2);
        self.sigma_zeta2.push(v.sigma_zeta2);
        if self.model == OutcomeModel::Basmu {
            self.nu.push(s.nu.clone());
            self.delta.push(s.delta.clone());
            self.sigma_nu2.push(v.sigma_nu2);
        }
    }
}

fn check_options(opts: &OutcomeOptions, p: usize) -> Result<()> {
    if opts.burn_in >= opts.iters {
        return arg_err(format!(
            "burn-in {} must be smaller than the iteration count {}",
            opts.burn_in, opts.iters
        ));
    }
    if !(opts.p_delta > 0.0 && opts.p_delta < 1.0) {
        return arg_err(format!("p_delta must lie in (0, 1), got {}", opts.p_delta));
    }
    if let Some(d) = &opts.fixed_delta {
        if d.len() != p {
            return arg_err(format!("fixed delta has length {} but p = {p}", d.len()));
        }
    }
    Ok(())
}

fn state_is_finite(s: &OutcomeState) -> bool {
    let v = &s.variances;
    s.gamma.is_finite()
        && s.theta_beta.iter().chain(s.zeta.iter()).chain(s.nu.iter()).all(|x| x.is_finite())
        && [v.sigma_y2, v.sigma_beta2, v.sigma_gamma2, v.sigma_zeta2, v.sigma_nu2]
            .iter()
            .all(|x| x.is_finite() && *x > 0.0)
}

/// Run the outcome sampler on precomputed statistics.
pub fn fit_outcome_stats<R: Rng + ?Sized>(
    model: OutcomeModel,
    stats: &OutcomeStats,
    opts: &OutcomeOptions,
    rng: &mut R,
) -> Result<OutcomeChains> {
    if model == OutcomeModel::Basmu && stats.g.is_none() {
        return arg_err("BASMU requires the posterior-mean individual effects");
    }
    let model_p = if model == OutcomeModel::Basmu { stats.p() } else { 0 };
    check_options(opts, model_p)?;

    let mut state = OutcomeState::initial(stats);
    if model == OutcomeModel::Bima {
        state.nu = DVector::zeros(0);
        state.delta.clear();
    }
    if let Some(v) = opts.fixed_variances {
        state.variances = v;
    }
    if let Some(d) = &opts.fixed_delta {
        state.delta = d.clone();
    }
    let mut chains = OutcomeChains::new(model, opts);

    // MALA scale from the conditional precision at initialization
    let mut adapter = {
        let (prec, _) = theta_beta_conditional(stats, &state);
        let max_prec = (0..stats.l()).map(|l| prec[(l, l)]).fold(0.0, f64::max);
        StepAdapter::new(
            max_prec.sqrt().recip() * (stats.l() as f64).powf(-1.0 / 6.0),
            opts.target_acceptance,
        )
    };
    let mut accepted = 0usize;

    for it in 0..opts.iters {
        match opts.beta_update {
            CoefUpdate::Gibbs => state.theta_beta = update_theta_beta(stats, &state, rng, it)?,
            CoefUpdate::Mala => {
                let (prec, rhs) = theta_beta_conditional(stats, &state);
                let target = |t: &DVector<f64>| {
                    let pt = &prec * t;
                    (rhs.dot(t) - 0.5 * t.dot(&pt), &rhs - pt)
                };
                let s = mala_step(&target, &state.theta_beta, adapter.step(), rng);
                if !s.finite {
                    return Err(BasmuError::Sampler {
                        iteration: it,
                        message: "non-finite gradient in beta update".into(),
                    });
                }
                if it < opts.burn_in {
                    adapter.update(s.accept_prob);
                } else if s.accepted {
                    accepted += 1;
                }
                state.theta_beta = s.theta;
            }
        }

        if model == OutcomeModel::Basmu {
            let g = stats.g.as_ref().expect("checked above");
            let svd = stats.g_svd.as_ref().expect("checked above");
            let v = state.variances;
            let y_nu = &stats.y - state.direct_term(stats) - &stats.mt * &state.theta_beta;
            state.nu = update_nu_svd(&y_nu, svd, &state.delta, v.sigma_y2, v.sigma_nu2, rng)
                .map_err(|e| match e {
                    BasmuError::Numerical { message, .. } => BasmuError::Numerical {
                        iteration: it,
                        message,
                    },
                    other => other,
                })?;
            if opts.fixed_delta.is_none() {
                let mut resid = &y_nu - state.confounder_term(stats);
                update_delta_seq(&mut resid, g, &state.nu, &mut state.delta, v.sigma_y2, opts.p_delta, rng)
                    .map_err(|e| match e {
                        BasmuError::Sampler { message, .. } => BasmuError::Sampler {
                            iteration: it,
                            message,
                        },
                        other => other,
                    })?;
            }
        }

        update_gamma_zeta(stats, &mut state, rng, it)?;
        if opts.fixed_variances.is_none() {
            update_variances(stats, &mut state, &opts.hyperprior, model, rng);
        }
        if !state_is_finite(&state) {
            return Err(BasmuError::Sampler {
                iteration: it,
                message: "outcome state became non-finite".into(),
            });
        }
        if it >= opts.burn_in {
            chains.push(&state);
        }
    }
    if opts.beta_update == CoefUpdate::Mala {
        chains.acceptance_rate = accepted as f64 / (opts.iters - opts.burn_in) as f64;
    }
    Ok(chains)
}

/// Sample the BIMA outcome model (no confounder term).
pub fn fit_bima<R: Rng + ?Sized>(
    data: &Dataset,
    basis: &KernelBasis,
    opts: &OutcomeOptions,
    rng: &mut R,
) -> Result<OutcomeChains> {
    let stats = OutcomeStats::new(data, basis, None)?;
    fit_outcome_stats(OutcomeModel::Bima, &stats, opts, rng)
}

/// Sample the BASMU outcome model conditional on `etahat` (n × p).
pub fn fit_basmu<R: Rng + ?Sized>(
    data: &Dataset,
    basis: &KernelBasis,
    etahat: &DMatrix<f64>,
    opts: &OutcomeOptions,
    rng: &mut R,
) -> Result<OutcomeChains> {
    let stats = OutcomeStats::new(data, basis, Some(etahat))?;
    fit_outcome_stats(OutcomeModel::Basmu, &stats, opts, rng)
}

/// Exact posterior mean of (θ_β, γ, ζ) under BIMA with all variances fixed.
pub fn bima_posterior_mean(
    stats: &OutcomeStats,
    variances: &OutcomeVariances,
) -> Result<(DVector<f64>, f64, DVector<f64>)> {
    let (n, l, q) = (stats.n(), stats.l(), stats.q());
    let mut z = DMatrix::zeros(n, l + 1 + q);
    z.columns_mut(0, l).copy_from(&stats.mt);
    z.set_column(l, &stats.x);
    z.columns_mut(l + 1, q).copy_from(&stats.c);
    let mut prec = z.tr_mul(&z) / variances.sigma_y2;
    for k in 0..l {
        prec[(k, k)] += 1.0 / (variances.sigma_beta2 * stats.lambda[k]);
    }
    prec[(l, l)] += 1.0 / variances.sigma_gamma2;
    for k in 0..q {
        prec[(l + 1 + k, l + 1 + k)] += 1.0 / variances.sigma_zeta2;
    }
    let rhs = z.tr_mul(&stats.y) / variances.sigma_y2;
    let mean = prec
        .cholesky()
        .ok_or_else(|| BasmuError::Numerical {
            iteration: 0,
            message: "posterior precision is not positive definite".into(),
        })?
        .solve(&rhs);
    Ok((
        mean.rows(0, l).into_owned(),
        mean[l],
        mean.rows(l + 1, q).into_owned(),
    ))
}
