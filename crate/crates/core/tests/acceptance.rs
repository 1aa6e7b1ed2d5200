//! Acceptance suite. Each test writes one `ACCEPTANCE <k> PASS|FAIL` line
//! straight to stdout, so the lines appear in a plain `cargo test` run. A
//! FAIL line also fails the test when `BASMU_STRICT_ACCEPTANCE` is set. The
//! desk-scale sweep shared by criteria 1 and 2 takes several minutes.

use std::io::Write;
use std::sync::OnceLock;

use basmu::bench::{run_case, BenchReport, Budget, Metric};
use basmu::bias::{bias_limit_bima, empirical_bias_by_n, freq_bias_limit, shrinkage_factor, BiasInputs};
use basmu::effects::select_active;
use basmu::mediator::{alpha_log_posterior, MediatorState, MediatorStats};
use basmu::outcome::{
    bima_posterior_mean, fit_outcome_stats, update_delta_seq, update_theta_beta, NuBranch,
    OutcomeOptions, OutcomeState, OutcomeStats, OutcomeVariances, ThinSvd,
};
use basmu::{
    eigenbasis, make_truth, rng_from_seed, simulate_dataset, CaseConfig, Grid2D, OutcomeModel, Scale, SimRng,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn report(k: u8, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "ACCEPTANCE {k} {verdict} {name}: {detail}").unwrap();
    out.flush().unwrap();
    if std::env::var_os("BASMU_STRICT_ACCEPTANCE").is_some() {
        assert!(pass, "criterion {k} ({name}) failed: {detail}");
    }
}

fn normal(rng: &mut SimRng) -> f64 {
    StandardNormal.sample(rng)
}

fn normal_vec(n: usize, rng: &mut SimRng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| normal(rng))
}

fn normal_mat(r: usize, c: usize, rng: &mut SimRng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

/// Mean and batch-means standard error of a correlated series.
fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let batches = 50;
    let size = n / batches;
    let bm: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let var = bm.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}

const SWEEP_REPS: usize = 20;
const SWEEP_SEED: u64 = 1000;

fn desk_sweep() -> &'static Vec<BenchReport> {
    static SWEEP: OnceLock<Vec<BenchReport>> = OnceLock::new();
    SWEEP.get_or_init(|| {
        (1..=6)
            .map(|case| {
                let cfg = CaseConfig::case(case, Scale::Desk).unwrap();
                let (r, t) =
                    run_case(&cfg, Scale::Desk, SWEEP_REPS, SWEEP_SEED, Budget::for_scale(Scale::Desk), 4).unwrap();
                println!("  case {case}: {} of {} replications in {:.0}s", r.completed, r.reps, t.total_seconds);
                r
            })
            .collect()
    })
}

fn nie_mse(r: &BenchReport, m: OutcomeModel) -> f64 {
    r.method(m).unwrap().nie.mse
}

#[test]
fn criterion_1_method_orderings() {
    let sweep = desk_sweep();
    let mut ok = true;
    let mut parts = Vec::new();
    for r in sweep {
        let (b, s) = (nie_mse(r, OutcomeModel::Bima), nie_mse(r, OutcomeModel::Basmu));
        let want_basmu = r.case_id != 3;
        let holds = r.completed == SWEEP_REPS && if want_basmu { s < b } else { b < s };
        ok &= holds;
        parts.push(format!(
            "case {} bima {:.2e} basmu {:.2e} {}",
            r.case_id,
            b,
            s,
            if holds { "ok" } else { "wrong" }
        ));
    }
    report(1, "desk-scale NIE MSE orderings", ok, parts.join("; "));
}

#[test]
fn criterion_2_sigma_eta_trend() {
    let sweep = desk_sweep();
    let (c1, c5) = (&sweep[0], &sweep[4]);
    let fb = nie_mse(c5, OutcomeModel::Bima) / nie_mse(c1, OutcomeModel::Bima);
    let fs = nie_mse(c5, OutcomeModel::Basmu) / nie_mse(c1, OutcomeModel::Basmu);
    report(
        2,
        "sigma_eta 0.5 -> 1 MSE factors",
        fb >= 3.0 && fs <= 2.0,
        format!("bima x{fb:.2} (need >= 3), basmu x{fs:.2} (need <= 2)"),
    );
}

#[test]
fn criterion_3_null_bias_consistency() {
    let cfg = CaseConfig::case(3, Scale::Desk).unwrap();
    let opts = OutcomeOptions::with_iters(Budget::for_scale(Scale::Desk).outcome_iters);
    let rows = empirical_bias_by_n(&cfg, &[150, 600], 20, 3000, &opts).unwrap();
    let (e150, e600) = (rows[0].mean_error_norm, rows[1].mean_error_norm);
    report(
        3,
        "BIMA theta_beta error shrinks with n when nu = 0",
        e600 < e150,
        format!("mean error norm n=150 {e150:.4}, n=600 {e600:.4}"),
    );
}

#[test]
fn criterion_4_bias_limit() {
    let l = 4;
    let n = 5000;
    let reps = 50;
    let sigma2 = 0.5;
    let h = DMatrix::from_row_slice(
        l,
        l,
        &[1.0, 0.3, 0.0, 0.1, 0.3, 0.8, 0.2, 0.0, 0.0, 0.2, 0.5, 0.1, 0.1, 0.0, 0.1, 0.3],
    );
    let w = DVector::from_vec(vec![0.8, -0.5, 0.6, 0.4]);
    let h0 = &h * &w;
    let chol = h.clone().cholesky().unwrap().l();
    let theta_beta0 = DVector::from_vec(vec![0.5, -0.2, 0.3, 0.1]);
    let limit = bias_limit_bima(&BiasInputs::new(h.clone(), h0.clone(), DVector::zeros(l), sigma2).unwrap());

    let variances = OutcomeVariances {
        sigma_y2: 1.0,
        sigma_beta2: 1e8,
        sigma_gamma2: 1e8,
        sigma_zeta2: 1e8,
        sigma_nu2: 1.0,
    };
    let mut rng = rng_from_seed(4, 0);
    let mut acc = DVector::zeros(l);
    for _ in 0..reps {
        let e = normal_mat(n, l, &mut rng) * chol.transpose();
        let mt = &e + normal_mat(n, l, &mut rng) * sigma2.sqrt();
        let x = DVector::from_fn(n, |_, _| if rng.random::<bool>() { 1.0 } else { 0.0 });
        let c = normal_mat(n, 1, &mut rng);
        let y = &mt * &theta_beta0 + &x * 0.5 + &c * 0.3 + &e * &w + normal_vec(n, &mut rng) * 0.5;
        let stats = OutcomeStats::from_coeffs(mt, x, c, y, DVector::from_element(l, 1.0), None, l).unwrap();
        acc += bima_posterior_mean(&stats, &variances).unwrap().0 - &theta_beta0;
    }
    let mc = acc / reps as f64;
    let rel = (&mc - &limit).norm() / limit.norm();
    report(
        4,
        "BIMA bias matches (H + sigma^2 I)^-1 h0",
        rel < 0.10,
        format!("limit norm {:.4}, Monte Carlo norm {:.4}, relative error {:.3}", limit.norm(), mc.norm(), rel),
    );
}

/// Project out `z` from the columns of `a`.
fn residualize(a: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let coef = (z.tr_mul(z)).cholesky().unwrap().solve(&z.tr_mul(a));
    a - z * coef
}

fn ols_nie_bias(sigma_eta: f64, sigma_m: f64, reps: usize, rng: &mut SimRng) -> (f64, f64) {
    let (n, l) = (5000, 5);
    let theta_alpha = DVector::from_vec(vec![0.7, -0.4, 0.3, 0.5, -0.1]);
    let theta_nu = DVector::from_vec(vec![0.9, -0.6, 0.2, 0.4, 0.3]);
    let theta_beta = DVector::from_vec(vec![0.4, 0.3, -0.2, 0.1, 0.2]);
    let xi = DMatrix::from_row_slice(2, l, &[0.2, -0.1, 0.3, 0.0, 0.1, -0.3, 0.2, 0.0, 0.1, 0.2]);
    let zeta = DVector::from_vec(vec![0.3, -0.3]);
    let mut total = 0.0;
    for _ in 0..reps {
        let x = DVector::from_fn(n, |_, _| if rng.random::<bool>() { 1.0 } else { 0.0 });
        let c = DMatrix::from_fn(n, 2, |_, k| {
            if k == 0 {
                normal(rng)
            } else if rng.random::<bool>() {
                1.0
            } else {
                0.0
            }
        });
        let eta = normal_mat(n, l, rng) * sigma_eta;
        let mt = &x * theta_alpha.transpose() + &c * &xi + &eta + normal_mat(n, l, rng) * sigma_m;
        let y = &mt * &theta_beta + &x * 0.5 + &c * &zeta + &eta * &theta_nu + normal_vec(n, rng) * 0.1;

        let mut z = DMatrix::from_element(n, 4, 1.0);
        z.set_column(1, &x);
        z.columns_mut(2, 2).copy_from(&c);
        // Frisch–Waugh: residualize M̃ and Y on [1, X, C], then OLS
        let mr = residualize(&mt, &z);
        let yr = residualize(&DMatrix::from_column_slice(n, 1, y.as_slice()), &z).column(0).into_owned();
        let beta_hat = (mr.tr_mul(&mr)).cholesky().unwrap().solve(&mr.tr_mul(&yr));
        total += theta_alpha.dot(&(beta_hat - &theta_beta));
    }
    let predicted = freq_bias_limit(
        &theta_alpha,
        &theta_nu,
        &(DMatrix::identity(l, l) * sigma_eta.powi(2)),
        sigma_m.powi(2),
    )
    .unwrap();
    (total / reps as f64, predicted)
}

#[test]
fn criterion_5_frequentist_shrinkage() {
    let mut rng = rng_from_seed(5, 0);
    let mut ok = shrinkage_factor(1.0, 1.0) == 0.5;
    let mut parts = vec![format!("factor(1,1) = {}", shrinkage_factor(1.0, 1.0))];
    for (se, sm) in [(1.0, 1.0), (0.5, 2.0)] {
        let (mc, predicted) = ols_nie_bias(se, sm, 50, &mut rng);
        let direct = shrinkage_factor(se * se, sm * sm)
            * DVector::from_vec(vec![0.7, -0.4, 0.3, 0.5, -0.1]).dot(&DVector::from_vec(vec![0.9, -0.6, 0.2, 0.4, 0.3]));
        let rel = (mc - predicted).abs() / predicted.abs();
        ok &= rel < 0.05 && (predicted - direct).abs() < 1e-12;
        parts.push(format!("({se},{sm}) OLS {mc:.5} vs limit {predicted:.5}, rel {rel:.3}"));
    }
    report(5, "OLS NIE bias equals shrinkage limit", ok, parts.join("; "));
}

fn nu_oracle_check(branch: NuBranch, rng: &mut SimRng) -> (bool, String) {
    let g = DMatrix::from_row_slice(2, 3, &[1.0, -0.5, 0.3, 0.4, 0.8, -1.2]);
    let y = DVector::from_vec(vec![0.7, -0.3]);
    let (sy2, snu2) = (0.6, 1.5);
    let prec = g.tr_mul(&g) / sy2 + DMatrix::identity(3, 3) / snu2;
    let cov = prec.clone().try_inverse().unwrap();
    let mean = &cov * g.tr_mul(&y) / sy2;
    let svd = ThinSvd::from_dense(&g).unwrap();
    let draws = 200_000;
    let mut s1 = DVector::zeros(3);
    let mut s2 = DVector::zeros(3);
    for _ in 0..draws {
        let v = basmu::outcome::sample_nu_active(&y, &svd, sy2, snu2, branch, rng);
        s1 += &v;
        s2 += v.component_mul(&v);
    }
    let nd = draws as f64;
    let mut worst: f64 = 0.0;
    for j in 0..3 {
        let m = s1[j] / nd;
        let var = s2[j] / nd - m * m;
        let se_m = (cov[(j, j)] / nd).sqrt();
        // Gaussian sample variance has SE √(2/N)·σ²
        let se_v = (2.0 * cov[(j, j)].powi(2) / nd).sqrt();
        worst = worst.max((m - mean[j]).abs() / se_m).max((var - cov[(j, j)]).abs() / se_v);
    }
    (worst < 3.0, format!("{branch:?} worst z {worst:.2}"))
}

#[test]
fn criterion_6_sampler_oracles() {
    let mut rng = rng_from_seed(6, 0);
    let mut ok = true;
    let mut parts = Vec::new();

    // (a) ν update against the dense conjugate posterior, both branches
    for branch in [NuBranch::Auxiliary, NuBranch::Direct] {
        let (pass, msg) = nu_oracle_check(branch, &mut rng);
        ok &= pass;
        parts.push(format!("(a) {msg}"));
    }

    // (b) δ sweep against enumeration at p = 2
    {
        let g = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.4, 1.1, 0.6, 0.2]);
        let nu = DVector::from_vec(vec![0.8, -0.6]);
        let y = DVector::from_vec(vec![0.9, -0.5, 0.4]);
        let (sy2, pd): (f64, f64) = (0.5, 0.5);
        let weight = |d: [bool; 2]| {
            let active = DVector::from_fn(2, |j, _| if d[j] { nu[j] } else { 0.0 });
            let r: DVector<f64> = &y - &g * active;
            let k = d.iter().filter(|&&b| b).count() as i32;
            pd.powi(k) * (1.0 - pd).powi(2 - k) * (-r.norm_squared() / (2.0 * sy2)).exp()
        };
        let states = [[false, false], [true, false], [false, true], [true, true]];
        let total: f64 = states.iter().map(|&s| weight(s)).sum();
        let mut delta = vec![false, false];
        let mut resid = y.clone();
        let sweeps = 100_000;
        let mut hits: Vec<Vec<_>> = (0..4).map(|_| Vec::with_capacity(sweeps)).collect();
        for _ in 0..sweeps {
            update_delta_seq(&mut resid, &g, &nu, &mut delta, sy2, pd, &mut rng).unwrap();
            for (k, s) in states.iter().enumerate() {
                hits[k].push(if delta[0] == s[0] && delta[1] == s[1] { 1.0 } else { 0.0 });
            }
        }
        let mut worst: f64 = 0.0;
        for (k, s) in states.iter().enumerate() {
            let (m, se) = mean_and_se(&hits[k]);
            worst = worst.max((m - weight(*s) / total).abs() / se);
        }
        ok &= worst < 3.0;
        parts.push(format!("(b) delta worst z {worst:.2}"));
    }

    // (c) θ_β conditional draws and the full Gibbs chain against closed forms
    {
        let (n, l) = (12, 3);
        let mt = normal_mat(n, l, &mut rng);
        let x = DVector::from_fn(n, |i, _| (i % 2) as f64);
        let c = normal_mat(n, 1, &mut rng);
        let y = &mt * DVector::from_vec(vec![0.5, -0.3, 0.2]) + &x * 0.4 + normal_vec(n, &mut rng) * 0.5;
        let lambda = DVector::from_vec(vec![1.0, 0.5, 0.25]);
        let stats = OutcomeStats::from_coeffs(mt.clone(), x.clone(), c.clone(), y.clone(), lambda.clone(), None, l).unwrap();
        let variances = OutcomeVariances {
            sigma_y2: 0.4,
            sigma_beta2: 2.0,
            sigma_gamma2: 1.5,
            sigma_zeta2: 1.0,
            sigma_nu2: 1.0,
        };
        let mut state = OutcomeState::initial(&stats);
        state.gamma = 0.3;
        state.zeta = DVector::from_element(1, -0.2);
        state.variances = variances;

        // closed form, evaluated densely
        let mut prec = mt.tr_mul(&mt) / variances.sigma_y2;
        for k in 0..l {
            prec[(k, k)] += 1.0 / (variances.sigma_beta2 * lambda[k]);
        }
        let cov = prec.try_inverse().unwrap();
        let r = &y - &x * state.gamma - &c * &state.zeta;
        let mean = &cov * mt.tr_mul(&r) / variances.sigma_y2;
        let draws = 100_000;
        let mut s1 = DVector::zeros(l);
        for t in 0..draws {
            s1 += update_theta_beta(&stats, &state, &mut rng, t).unwrap();
        }
        let mut worst: f64 = 0.0;
        for k in 0..l {
            worst = worst.max((s1[k] / draws as f64 - mean[k]).abs() / (cov[(k, k)] / draws as f64).sqrt());
        }

        let mut opts = OutcomeOptions::with_iters(60_000);
        opts.burn_in = 1000;
        opts.fixed_variances = Some(variances);
        let chains = fit_outcome_stats(OutcomeModel::Bima, &stats, &opts, &mut rng).unwrap();
        let joint = bima_posterior_mean(&stats, &variances).unwrap().0;
        for k in 0..l {
            let series: Vec<f64> = chains.theta_beta.iter().map(|t| t[k]).collect();
            let (m, se) = mean_and_se(&series);
            worst = worst.max((m - joint[k]).abs() / se);
        }
        ok &= worst < 3.0;
        parts.push(format!("(c) theta_beta worst z {worst:.2}"));
    }

    // (d) MALA gradient against central finite differences
    {
        let mut cfg = CaseConfig::case(1, Scale::Desk).unwrap();
        cfg.grid = Grid2D::square(6).unwrap();
        cfg.n = 20;
        cfg.l = 8;
        let basis = eigenbasis(&cfg.grid, &cfg.matern, cfg.l).unwrap();
        let truth = make_truth(&cfg, &basis, &mut rng).unwrap();
        let data = simulate_dataset(&truth, &cfg, &mut rng).unwrap();
        let stats = MediatorStats::new(&data, &basis).unwrap();
        let mut state = MediatorState::initial(&stats);
        state.theta_eta = normal_mat(cfg.n, cfg.l, &mut rng) * 0.1;
        let mut worst: f64 = 0.0;
        for _ in 0..5 {
            let theta = normal_vec(cfg.l, &mut rng) * 0.5;
            let (_, grad) = alpha_log_posterior(&state, &stats, &theta);
            let h = 1e-5;
            let fd = DVector::from_fn(cfg.l, |k, _| {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[k] += h;
                tm[k] -= h;
                (alpha_log_posterior(&state, &stats, &tp).0 - alpha_log_posterior(&state, &stats, &tm).0) / (2.0 * h)
            });
            worst = worst.max((&fd - &grad).norm() / grad.norm());
        }
        ok &= worst < 1e-4;
        parts.push(format!("(d) gradient rel err {worst:.1e}"));
    }

    report(6, "sampler correctness oracles", ok, parts.join("; "));
}

#[test]
fn criterion_7_structural_invariants() {
    let mut rng = rng_from_seed(7, 0);
    let mut parts = Vec::new();
    let mut ok = true;

    let cfg = CaseConfig::case(1, Scale::Desk).unwrap();
    let basis = eigenbasis(&cfg.grid, &cfg.matern, cfg.l).unwrap();
    let orth = basis.orthonormality_error();
    ok &= orth <= 1e-8;
    parts.push(format!("orthonormality {orth:.1e}"));

    let coeffs = normal_vec(basis.len(), &mut rng);
    let back = basis.to_coeffs(&basis.from_coeffs(&coeffs).unwrap()).unwrap();
    let rt = (&back - &coeffs).amax();
    ok &= rt <= 1e-10;
    parts.push(format!("round trip {rt:.1e}"));

    let mut worst_mse: f64 = 0.0;
    for _ in 0..20 {
        let est: Vec<f64> = (0..17).map(|_| 3.0 * normal(&mut rng) + 1.0).collect();
        let m = Metric::from_estimates(&est, 0.4);
        let direct = est.iter().map(|e| (e - 0.4).powi(2)).sum::<f64>() / est.len() as f64;
        worst_mse = worst_mse.max((m.mse - direct).abs()).max((m.mse - m.bias.powi(2) - m.variance).abs());
    }
    ok &= worst_mse <= 1e-9;
    parts.push(format!("mse identity {worst_mse:.1e}"));

    let draws: Vec<DVector<f64>> = (0..400)
        .map(|_| DVector::from_fn(60, |j, _| 0.05 * j as f64 - 1.5 + normal(&mut rng)))
        .collect();
    let levels = [0.5, 0.8, 0.9, 0.95, 0.99];
    let sets: Vec<Vec<bool>> = levels.iter().map(|&lv| select_active(&draws, lv).unwrap().active).collect();
    let monotone = sets.windows(2).all(|w| w[1].iter().zip(&w[0]).all(|(&hi, &lo)| !hi || lo));
    ok &= monotone;
    parts.push(format!(
        "active counts {:?}",
        sets.iter().map(|s| s.iter().filter(|&&a| a).count()).collect::<Vec<_>>()
    ));

    let mut small = CaseConfig::case(2, Scale::Desk).unwrap();
    small.grid = Grid2D::square(8).unwrap();
    small.n = 30;
    small.l = 10;
    let budget = Budget {
        mediator_iters: 60,
        outcome_iters: 200,
    };
    let a = run_case(&small, Scale::Desk, 2, 11, budget, 2).unwrap().0;
    let b = run_case(&small, Scale::Desk, 2, 11, budget, 1).unwrap().0;
    let same = serde_json::to_string(&a).unwrap() == serde_json::to_string(&b).unwrap();
    ok &= same;
    parts.push(format!("deterministic report {same}"));

    report(7, "structural invariants", ok, parts.join("; "));
}
