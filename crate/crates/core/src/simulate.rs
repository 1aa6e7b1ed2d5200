//! Ground-truth fields and synthetic datasets for the six-case simulation
//! design.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, BasmuError, Result};
use crate::kernel::{Grid2D, KernelBasis, MaternParams};
use crate::rng_from_seed;

/// Spatial pattern of the true confounder effect ν⁰.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NuPattern {
    Dense,
    Sparse,
    Zero,
}

impl std::str::FromStr for NuPattern {
    type Err = BasmuError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(NuPattern::Dense),
            "sparse" => Ok(NuPattern::Sparse),
            "zero" => Ok(NuPattern::Zero),
            other => arg_err(format!("unknown nu pattern '{other}'")),
        }
    }
}

/// Problem size preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// 20×20 grid, n = 150, L = 40.
    Desk,
    /// 40×40 grid, n = 300, L = 120.
    Full,
}

impl std::str::FromStr for Scale {
    type Err = BasmuError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            other => arg_err(format!("unknown scale '{other}'")),
        }
    }
}

/// Settings for one simulation case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseConfig {
    pub case_id: u8,
    pub grid: Grid2D,
    pub n: usize,
    pub q: usize,
    pub l: usize,
    pub sigma_eta: f64,
    pub sigma_m: f64,
    pub sigma_y: f64,
    pub nu_pattern: NuPattern,
    pub matern: MaternParams,
    pub seed: u64,
}

impl CaseConfig {
    /// Case 1–6 at the given scale. Defaults are σ_η = 0.5, σ_M = 2 and the
    /// scale's n; case 2/4 use the sparse pattern (4 doubles n), case 3 has
    /// ν⁰ = 0, case 5 raises σ_η to 1 and case 6 raises σ_M to 4.
    pub fn case(case_id: u8, scale: Scale) -> Result<Self> {
        let (side, n, l) = match scale {
            Scale::Desk => (20, 150, 40),
            Scale::Full => (40, 300, 120),
        };
        let mut cfg = CaseConfig {
            case_id,
            grid: Grid2D::square(side)?,
            n,
            q: 2,
            l,
            sigma_eta: 0.5,
            sigma_m: 2.0,
            sigma_y: 0.5,
            nu_pattern: NuPattern::Dense,
            matern: MaternParams::default(),
            seed: 0,
        };
        match case_id {
            1 => {}
            2 => cfg.nu_pattern = NuPattern::Sparse,
            3 => cfg.nu_pattern = NuPattern::Zero,
            4 => {
                cfg.nu_pattern = NuPattern::Sparse;
                cfg.n *= 2;
            }
            5 => cfg.sigma_eta = 1.0,
            6 => cfg.sigma_m = 4.0,
            other => return arg_err(format!("case id must be 1..=6, got {other}")),
        }
        Ok(cfg)
    }

    pub fn p(&self) -> usize {
        self.grid.p()
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.case_id) {
            return arg_err(format!("case id must be 1..=6, got {}", self.case_id));
        }
        if self.n < 2 {
            return arg_err("n must be at least 2");
        }
        if self.q != 2 {
            return arg_err("the simulation design uses q = 2 observed confounders");
        }
        if self.l == 0 || self.l > self.p() {
            return arg_err(format!("L = {} must lie in 1..={}", self.l, self.p()));
        }
        for (name, v) in [
            ("sigma_eta", self.sigma_eta),
            ("sigma_m", self.sigma_m),
            ("sigma_y", self.sigma_y),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return arg_err(format!("{name} must be positive, got {v}"));
            }
        }
        MaternParams::new(self.matern.smoothness, self.matern.length_scale)?;
        Ok(())
    }

    /// Apply a JSON object of overrides whose keys mirror the field names.
    pub fn with_overrides(&self, overrides: &serde_json::Value) -> Result<Self> {
        let obj = overrides
            .as_object()
            .ok_or_else(|| BasmuError::Argument("config overrides must be a JSON object".into()))?;
        let mut base = serde_json::to_value(self)?;
        let map = base.as_object_mut().expect("config serializes to an object");
        for (k, v) in obj {
            if !map.contains_key(k) {
                return arg_err(format!("unknown config key '{k}'"));
            }
            map.insert(k.clone(), v.clone());
        }
        let cfg: CaseConfig = serde_json::from_value(base)
            .map_err(|e| BasmuError::Argument(format!("bad config override: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Generative ground truth. Functional parameters are stored as values on
/// the grid; η⁰ is n × p.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    pub nu: DVector<f64>,
    /// q × p, one row per observed confounder.
    pub xi: DMatrix<f64>,
    pub eta: DMatrix<f64>,
    pub gamma: f64,
    pub zeta: DVector<f64>,
    pub sigma_m: f64,
    pub sigma_y: f64,
    pub sigma_eta: f64,
}

impl Truth {
    pub fn n(&self) -> usize {
        self.eta.nrows()
    }

    pub fn p(&self) -> usize {
        self.alpha.len()
    }

    /// Scalar NIE Σ_j α(s_j) β(s_j) λ(Δs_j).
    pub fn nie(&self) -> f64 {
        self.alpha.dot(&self.beta) / self.p() as f64
    }

    /// Confounder term U⁰_i = Σ_j ν(s_j) η_i(s_j) λ(Δs_j).
    pub fn confounder_term(&self) -> DVector<f64> {
        &self.eta * &self.nu / self.p() as f64
    }
}

/// Observed data for n subjects at p locations with q covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub m: DMatrix<f64>,
    pub x: DVector<f64>,
    pub c: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Dataset {
    pub fn new(m: DMatrix<f64>, x: DVector<f64>, c: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let n = m.nrows();
        if x.len() != n || c.nrows() != n || y.len() != n {
            return arg_err(format!(
                "inconsistent subject counts: M {} rows, X {}, C {} rows, Y {}",
                n,
                x.len(),
                c.nrows(),
                y.len()
            ));
        }
        let d = Self { m, x, c, y };
        if !(d.m.iter().chain(d.x.iter()).chain(d.c.iter()).chain(d.y.iter())).all(|v| v.is_finite()) {
            return arg_err("dataset contains non-finite values");
        }
        Ok(d)
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    pub fn p(&self) -> usize {
        self.m.ncols()
    }

    pub fn q(&self) -> usize {
        self.c.ncols()
    }
}

// Smooth-edged disc indicator.
fn disc(loc: [f64; 2], centre: [f64; 2], radius: f64) -> f64 {
    let r = ((loc[0] - centre[0]).powi(2) + (loc[1] - centre[1]).powi(2)).sqrt();
    1.0 / (1.0 + ((r - radius) / 0.03).exp())
}

/// Fixed α⁰ and β⁰ shapes on the grid before projection onto the basis.
pub fn signal_shapes(grid: &Grid2D) -> (DVector<f64>, DVector<f64>) {
    let locs = grid.locations();
    let alpha = DVector::from_iterator(
        locs.len(),
        locs.iter()
            .map(|&s| disc(s, [0.3, 0.3], 0.2) + 0.8 * disc(s, [0.7, 0.7], 0.15)),
    );
    let beta = DVector::from_iterator(
        locs.len(),
        locs.iter()
            .map(|&s| disc(s, [0.35, 0.3], 0.2) - 0.8 * disc(s, [0.7, 0.3], 0.12)),
    );
    (alpha, beta)
}

/// Coefficients of the dense ν⁰ pattern on the leading eigenfunctions.
pub const DENSE_NU_COEFFS: [f64; 6] = [1.0, -0.8, 0.6, 0.5, -0.4, 0.3];

/// Number of nonzero voxels in the sparse ν⁰ pattern.
pub const SPARSE_NU_COUNT: usize = 30;

fn nu_pattern(pattern: NuPattern, grid: &Grid2D, basis: &KernelBasis) -> Result<DVector<f64>> {
    let p = grid.p();
    match pattern {
        NuPattern::Zero => Ok(DVector::zeros(p)),
        NuPattern::Dense => {
            let mut coeffs = DVector::zeros(basis.len());
            for (l, &v) in DENSE_NU_COEFFS.iter().enumerate().take(basis.len()) {
                coeffs[l] = v;
            }
            basis.from_coeffs(&coeffs)
        }
        NuPattern::Sparse => {
            // 5 × 6 block; the last block row carries -1
            let (rows, cols) = (5usize, 6usize);
            if grid.n1 < rows || grid.n2 < cols {
                return arg_err("grid too small for the sparse nu block");
            }
            let r0 = ((grid.n1 as f64 * 0.35) as usize).min(grid.n1 - rows);
            let c0 = ((grid.n2 as f64 * 0.35) as usize).min(grid.n2 - cols);
            let mut nu = DVector::zeros(p);
            for r in 0..rows {
                for c in 0..cols {
                    nu[(r0 + r) * grid.n2 + c0 + c] = if r + 1 == rows { -1.0 } else { 1.0 };
                }
            }
            Ok(nu)
        }
    }
}

fn gp_coeffs<R: Rng + ?Sized>(sd: f64, basis: &KernelBasis, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(
        basis.len(),
        basis.eigenvalues().iter().map(|&lam| {
            let z: f64 = StandardNormal.sample(rng);
            z * sd * lam.sqrt()
        }),
    )
}

/// Draw the ground truth for `cfg`.
///
/// α⁰, β⁰ (fixed shapes) and ξ⁰ (GP draws from the case seed) are projected
/// onto the basis span; η_i⁰ has coefficients N(0, σ_η² λ_l) drawn from `rng`.
pub fn make_truth<R: Rng + ?Sized>(
    cfg: &CaseConfig,
    basis: &KernelBasis,
    rng: &mut R,
) -> Result<Truth> {
    cfg.validate()?;
    if basis.p() != cfg.p() {
        return arg_err(format!(
            "basis built for p = {} but config has p = {}",
            basis.p(),
            cfg.p()
        ));
    }
    let (alpha_shape, beta_shape) = signal_shapes(&cfg.grid);
    let alpha = basis.project(&alpha_shape)?;
    let beta = basis.project(&beta_shape)?;
    let nu = nu_pattern(cfg.nu_pattern, &cfg.grid, basis)?;

    let mut xi_rng = rng_from_seed(cfg.seed, 7);
    let mut xi = DMatrix::zeros(cfg.q, cfg.p());
    for k in 0..cfg.q {
        let f = basis.from_coeffs(&gp_coeffs(0.3, basis, &mut xi_rng))?;
        xi.set_row(k, &f.transpose());
    }

    let mut eta_coeffs = DMatrix::zeros(cfg.n, basis.len());
    for i in 0..cfg.n {
        eta_coeffs.set_row(i, &gp_coeffs(cfg.sigma_eta, basis, rng).transpose());
    }
    let eta = basis.rows_from_coeffs(&eta_coeffs)?;

    Ok(Truth {
        alpha,
        beta,
        nu,
        xi,
        eta,
        gamma: 0.5,
        zeta: DVector::from_vec(vec![0.3, -0.3]),
        sigma_m: cfg.sigma_m,
        sigma_y: cfg.sigma_y,
        sigma_eta: cfg.sigma_eta,
    })
}

/// Exposure and covariates: X ~ Bernoulli(1/2); C = [N(0,1), Bernoulli(1/2)].
pub fn draw_covariates<R: Rng + ?Sized>(n: usize, q: usize, rng: &mut R) -> (DVector<f64>, DMatrix<f64>) {
    let coin = Bernoulli::new(0.5).unwrap();
    let x = DVector::from_fn(n, |_, _| if coin.sample(rng) { 1.0 } else { 0.0 });
    let mut c = DMatrix::zeros(n, q);
    for i in 0..n {
        for k in 0..q {
            c[(i, k)] = if k % 2 == 0 {
                StandardNormal.sample(rng)
            } else if coin.sample(rng) {
                1.0
            } else {
                0.0
            };
        }
    }
    (x, c)
}

/// Mediator and outcome equations with explicit noise: `eps_m` is n × p
/// standard normal, `eps_y` an n-vector of standard normals.
pub fn generate_from_noise(
    truth: &Truth,
    x: &DVector<f64>,
    c: &DMatrix<f64>,
    eps_m: &DMatrix<f64>,
    eps_y: &DVector<f64>,
) -> Result<Dataset> {
    let (n, p) = (truth.n(), truth.p());
    if x.len() != n || c.nrows() != n || c.ncols() != truth.xi.nrows() {
        return arg_err("covariate dimensions do not match the truth");
    }
    if eps_m.shape() != (n, p) || eps_y.len() != n {
        return arg_err("noise dimensions do not match the truth");
    }
    // M_i(s_j) = α(s_j) X_i + Σ_k ξ_k(s_j) C_ik + η_i(s_j) + σ_M ε
    let m = x * truth.alpha.transpose() + c * &truth.xi + &truth.eta + eps_m * truth.sigma_m;
    let cell = 1.0 / p as f64;
    // Y_i = Σ_j β(s_j) M_i(s_j) λ + γ X_i + ζᵀ C_i + Σ_j ν(s_j) η_i(s_j) λ + ε
    let y = &m * &truth.beta * cell
        + x * truth.gamma
        + c * &truth.zeta
        + truth.confounder_term()
        + eps_y * truth.sigma_y;
    Dataset::new(m, x.clone(), c.clone(), y)
}

/// Simulate a dataset from `truth` using `rng` for covariates and noise.
pub fn simulate_dataset<R: Rng + ?Sized>(
    truth: &Truth,
    cfg: &CaseConfig,
    rng: &mut R,
) -> Result<Dataset> {
    if truth.n() != cfg.n || truth.p() != cfg.p() || truth.xi.nrows() != cfg.q {
        return arg_err("truth dimensions do not match the config");
    }
    let (x, c) = draw_covariates(cfg.n, cfg.q, rng);
    let eps_m = DMatrix::from_fn(cfg.n, cfg.p(), |_, _| StandardNormal.sample(rng));
    let eps_y = DVector::from_fn(cfg.n, |_, _| StandardNormal.sample(rng));
    generate_from_noise(truth, &x, &c, &eps_m, &eps_y)
}
