use basmu::mediator::{CoefUpdate, MediatorVariances};
use basmu::outcome::{bima_posterior_mean, OutcomeStats, OutcomeVariances};
use basmu::{
    eigenbasis, fit_basmu, fit_bima, fit_mediator, make_truth, posterior_mean_eta, rng_from_seed, simulate_dataset,
    CaseConfig, Dataset, Grid2D, KernelBasis, MaternParams, MediatorOptions, OutcomeOptions, Scale,
};
use nalgebra::{DMatrix, DVector};

fn small_case(case_id: u8, n: usize, seed: u64) -> (CaseConfig, KernelBasis, Dataset) {
    let overrides = serde_json::json!({"grid": {"n1": 8, "n2": 8}, "n": n, "l": 10});
    let cfg = CaseConfig::case(case_id, Scale::Desk).unwrap().with_overrides(&overrides).unwrap();
    let basis = eigenbasis(&cfg.grid, &cfg.matern, cfg.l).unwrap();
    let mut rng = rng_from_seed(seed, 1);
    let truth = make_truth(&cfg, &basis, &mut rng).unwrap();
    let data = simulate_dataset(&truth, &cfg, &mut rng).unwrap();
    (cfg, basis, data)
}

fn column_mean_var(draws: &[DVector<f64>]) -> (DVector<f64>, DVector<f64>) {
    let r = draws.len() as f64;
    let mean = draws.iter().fold(DVector::zeros(draws[0].len()), |acc, d| acc + d) / r;
    let var = draws
        .iter()
        .fold(DVector::zeros(mean.len()), |acc, d| acc + (d - &mean).map(|v| v * v))
        / (r - 1.0);
    (mean, var)
}

#[test]
fn zero_exposure_leaves_alpha_at_its_prior() {
    let (_, basis, mut data) = small_case(1, 40, 11);
    data.x.fill(0.0);
    let fixed = MediatorVariances {
        sigma_alpha2: 0.7,
        ..MediatorVariances::default()
    };
    let opts = MediatorOptions {
        iters: 20_000,
        burn_in: 0,
        alpha_update: CoefUpdate::Gibbs,
        fixed_variances: Some(fixed),
        ..MediatorOptions::default()
    };
    let chains = fit_mediator(&data, &basis, &opts, &mut rng_from_seed(5, 2)).unwrap();
    let (mean, var) = column_mean_var(&chains.theta_alpha);
    for l in 0..basis.len() {
        let prior = 0.7 * basis.eigenvalues()[l];
        assert!(mean[l].abs() < 4.0 * (prior / 20_000.0).sqrt(), "l = {l}: mean {}", mean[l]);
        assert!((var[l] / prior - 1.0).abs() < 0.05, "l = {l}: var {} prior {prior}", var[l]);
    }
}

#[test]
fn mala_and_gibbs_agree_on_alpha() {
    let (_, basis, data) = small_case(1, 60, 12);
    let run = |update| {
        let opts = MediatorOptions {
            iters: 6000,
            burn_in: 1000,
            alpha_update: update,
            fixed_variances: Some(MediatorVariances {
                sigma_m2: 4.0,
                sigma_eta2: 0.25,
                ..MediatorVariances::default()
            }),
            ..MediatorOptions::default()
        };
        let chains = fit_mediator(&data, &basis, &opts, &mut rng_from_seed(6, 2)).unwrap();
        column_mean_var(&chains.theta_alpha)
    };
    let (gm, gv) = run(CoefUpdate::Gibbs);
    let (mm, _) = run(CoefUpdate::Mala);
    for l in 0..basis.len() {
        assert!((gm[l] - mm[l]).abs() < 0.25 * gv[l].sqrt() + 1e-6, "l = {l}: {} vs {}", gm[l], mm[l]);
    }
}

#[test]
fn mediator_recovers_alpha_with_plenty_of_data() {
    let (cfg, basis, data) = small_case(1, 1200, 13);
    let truth = {
        let mut rng = rng_from_seed(13, 1);
        make_truth(&cfg, &basis, &mut rng).unwrap()
    };
    let chains = fit_mediator(&data, &basis, &MediatorOptions::with_iters(1500), &mut rng_from_seed(1, 2)).unwrap();
    let (mean, _) = column_mean_var(&chains.theta_alpha);
    let fitted = basis.from_coeffs(&mean).unwrap();
    let target = basis.project(&truth.alpha).unwrap();
    let err = (&fitted - &target).norm() / target.norm();
    assert!(err < 0.2, "relative error {err}");
    let eta = posterior_mean_eta(&chains, &basis).unwrap();
    assert_eq!(eta.shape(), (1200, 64));
}

#[test]
fn basmu_with_zero_etahat_reduces_to_bima() {
    let (_, basis, data) = small_case(2, 80, 14);
    let variances = OutcomeVariances {
        sigma_y2: 0.25,
        ..OutcomeVariances::default()
    };
    let opts = OutcomeOptions {
        iters: 12_000,
        burn_in: 2000,
        fixed_variances: Some(variances),
        ..OutcomeOptions::default()
    };
    let zero = DMatrix::zeros(data.n(), data.p());
    let stats = OutcomeStats::new(&data, &basis, None).unwrap();
    let (oracle, gamma, _) = bima_posterior_mean(&stats, &variances).unwrap();

    let bima = fit_bima(&data, &basis, &opts, &mut rng_from_seed(7, 3)).unwrap();
    let basmu = fit_basmu(&data, &basis, &zero, &opts, &mut rng_from_seed(8, 3)).unwrap();
    for chains in [&bima, &basmu] {
        let (mean, var) = column_mean_var(&chains.theta_beta);
        for l in 0..basis.len() {
            let tol = 0.15 * var[l].sqrt() + 1e-9;
            assert!((mean[l] - oracle[l]).abs() < tol, "{:?} l = {l}: {} vs {}", chains.model, mean[l], oracle[l]);
        }
        let g = chains.gamma.iter().sum::<f64>() / chains.gamma.len() as f64;
        assert!((g - gamma).abs() < 0.05, "{:?}: γ {g} vs {gamma}", chains.model);
    }
}

#[test]
fn outcome_fits_are_reproducible_by_seed() {
    let (_, basis, data) = small_case(1, 30, 15);
    let opts = OutcomeOptions::with_iters(300);
    let a = fit_bima(&data, &basis, &opts, &mut rng_from_seed(3, 3)).unwrap();
    let b = fit_bima(&data, &basis, &opts, &mut rng_from_seed(3, 3)).unwrap();
    let c = fit_bima(&data, &basis, &opts, &mut rng_from_seed(4, 3)).unwrap();
    assert_eq!(a.theta_beta, b.theta_beta);
    assert_ne!(a.theta_beta, c.theta_beta);
}

#[test]
fn basis_file_round_trip_is_exact() {
    let grid = Grid2D::new(5, 6).unwrap();
    let basis = eigenbasis(&grid, &MaternParams::new(1.0, 0.25).unwrap(), 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.kbas");
    basis.save(&path).unwrap();
    let back = KernelBasis::load(&path).unwrap();
    assert_eq!(back.eigenvalues(), basis.eigenvalues());
    assert_eq!(back.psi(), basis.psi());
}
