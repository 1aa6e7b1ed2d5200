//! Replicated simulation study: bias, variance and MSE of the scalar NIE and
//! NDE for BIMA and BASMU on the six simulation cases.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effects::{nie_chain, Pairing};
use crate::error::{BasmuError, Result};
use crate::mediator::{fit_mediator_stats, posterior_mean_eta, MediatorOptions, MediatorStats};
use crate::outcome::{fit_outcome_stats, OutcomeModel, OutcomeOptions, OutcomeStats};
use crate::simulate::{make_truth, simulate_dataset, CaseConfig, Scale};
use crate::{eigenbasis, rng_from_seed, KernelBasis};

/// Iteration budget for one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub mediator_iters: usize,
    pub outcome_iters: usize,
}

impl Budget {
    /// Desk: 500 mediator and 4000 outcome iterations; full: 10³ and 2×10⁴.
    pub fn for_scale(scale: Scale) -> Self {
        match scale {
            Scale::Desk => Self {
                mediator_iters: 500,
                outcome_iters: 4000,
            },
            Scale::Full => Self {
                mediator_iters: 1000,
                outcome_iters: 20_000,
            },
        }
    }
}

/// Bias, variance and MSE of an estimator across replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub bias: f64,
    /// Population variance (divisor R) so that MSE = bias² + variance.
    pub variance: f64,
    pub mse: f64,
}

impl Metric {
    pub fn from_estimates(estimates: &[f64], truth: f64) -> Self {
        let r = estimates.len() as f64;
        if estimates.is_empty() {
            return Self {
                bias: f64::NAN,
                variance: f64::NAN,
                mse: f64::NAN,
            };
        }
        let mean = estimates.iter().sum::<f64>() / r;
        Self {
            bias: mean - truth,
            variance: estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / r,
            mse: estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: OutcomeModel,
    pub nie: Metric,
    pub nde: Metric,
    pub nie_estimates: Vec<f64>,
    pub nde_estimates: Vec<f64>,
    /// Per-voxel bias and MSE of the posterior-mean β(s).
    pub beta_bias: Vec<f64>,
    pub beta_mse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedReplication {
    pub seed: u64,
    pub error: String,
}

/// Aggregated results for one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub case_id: u8,
    pub scale: Scale,
    pub config: CaseConfig,
    pub budget: Budget,
    pub reps: usize,
    pub completed: usize,
    pub seeds: Vec<u64>,
    pub failed: Vec<FailedReplication>,
    pub true_nie: f64,
    pub true_nde: f64,
    pub methods: Vec<MethodSummary>,
}

impl BenchReport {
    pub fn method(&self, m: OutcomeModel) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }
}

/// Wall-clock seconds per stage for one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct StageTimes {
    pub seed: u64,
    pub simulate: f64,
    pub mediator: f64,
    pub bima: f64,
    pub basmu: f64,
}

/// Timings are kept apart from the report so the report is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTimings {
    pub case_id: u8,
    pub jobs: usize,
    pub total_seconds: f64,
    pub replications: Vec<StageTimes>,
}

struct RepResult {
    nie: [f64; 2],
    nde: [f64; 2],
    beta: [DVector<f64>; 2],
    times: StageTimes,
}

fn run_replication(
    cfg: &CaseConfig,
    basis: &KernelBasis,
    budget: Budget,
    seed: u64,
) -> Result<RepResult> {
    let mut times = StageTimes {
        seed,
        ..StageTimes::default()
    };
    let t = Instant::now();
    let mut sim_rng = rng_from_seed(seed, 1);
    let truth = make_truth(cfg, basis, &mut sim_rng)?;
    let data = simulate_dataset(&truth, cfg, &mut sim_rng)?;
    times.simulate = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let med_stats = MediatorStats::new(&data, basis)?;
    let med = fit_mediator_stats(
        &med_stats,
        &MediatorOptions::with_iters(budget.mediator_iters),
        &mut rng_from_seed(seed, 2),
    )?;
    let etahat = posterior_mean_eta(&med, basis)?;
    times.mediator = t.elapsed().as_secs_f64();

    let stats = OutcomeStats::from_coeffs(
        med_stats.mt.clone(),
        data.x.clone(),
        data.c.clone(),
        data.y.clone(),
        basis.eigenvalues().clone(),
        Some(&etahat),
        basis.p(),
    )?;
    let opts = OutcomeOptions::with_iters(budget.outcome_iters);
    let mut nie = [0.0; 2];
    let mut nde = [0.0; 2];
    let mut beta = [DVector::zeros(0), DVector::zeros(0)];
    for (k, model) in [OutcomeModel::Bima, OutcomeModel::Basmu].into_iter().enumerate() {
        let t = Instant::now();
        let out = fit_outcome_stats(model, &stats, &opts, &mut rng_from_seed(seed, 3 + k as u64))?;
        let chain = nie_chain(&med, &out, basis, Pairing::Cyclic)?;
        nie[k] = chain.scalar.iter().sum::<f64>() / chain.len() as f64;
        nde[k] = out.mean_gamma().expect("non-empty chain");
        beta[k] = basis.from_coeffs(&out.mean_theta_beta().expect("non-empty chain"))?;
        let secs = t.elapsed().as_secs_f64();
        if k == 0 {
            times.bima = secs;
        } else {
            times.basmu = secs;
        }
    }
    Ok(RepResult { nie, nde, beta, times })
}

/// Run `reps` replications of a case with seeds `base_seed, base_seed + 1, …`
/// on a pool of `jobs` threads.
pub fn run_case(
    cfg: &CaseConfig,
    scale: Scale,
    reps: usize,
    base_seed: u64,
    budget: Budget,
    jobs: usize,
) -> Result<(BenchReport, BenchTimings)> {
    cfg.validate()?;
    if reps == 0 {
        return Err(BasmuError::Argument("reps must be positive".into()));
    }
    if budget.mediator_iters < 10 || budget.outcome_iters < 10 {
        return Err(BasmuError::Argument("iteration budgets must be at least 10".into()));
    }
    let start = Instant::now();
    let basis = eigenbasis(&cfg.grid, &cfg.matern, cfg.l)?;
    let seeds: Vec<u64> = (0..reps as u64).map(|r| base_seed + r).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| BasmuError::Argument(format!("cannot build worker pool: {e}")))?;
    let results: Vec<Result<RepResult>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| run_replication(cfg, &basis, budget, s))
            .collect()
    });

    // truth fields shared by every replication
    let (alpha0, beta0) = {
        let (a, b) = crate::simulate::signal_shapes(&cfg.grid);
        (basis.project(&a)?, basis.project(&b)?)
    };
    let true_nie = alpha0.dot(&beta0) / cfg.p() as f64;
    let true_nde = 0.5;

    let mut failed = Vec::new();
    let mut ok = Vec::new();
    let mut timings = Vec::new();
    for (seed, r) in seeds.iter().zip(results) {
        match r {
            Ok(rep) => {
                timings.push(rep.times);
                ok.push(rep);
            }
            Err(e) => failed.push(FailedReplication {
                seed: *seed,
                error: e.to_string(),
            }),
        }
    }

    let methods = [OutcomeModel::Bima, OutcomeModel::Basmu]
        .into_iter()
        .enumerate()
        .map(|(k, method)| {
            let nie: Vec<f64> = ok.iter().map(|r| r.nie[k]).collect();
            let nde: Vec<f64> = ok.iter().map(|r| r.nde[k]).collect();
            let (beta_bias, beta_mse) = (0..cfg.p())
                .map(|j| {
                    let est: Vec<f64> = ok.iter().map(|r| r.beta[k][j]).collect();
                    let m = Metric::from_estimates(&est, beta0[j]);
                    (m.bias, m.mse)
                })
                .unzip();
            MethodSummary {
                method,
                nie: Metric::from_estimates(&nie, true_nie),
                nde: Metric::from_estimates(&nde, true_nde),
                nie_estimates: nie,
                nde_estimates: nde,
                beta_bias,
                beta_mse,
            }
        })
        .collect();

    let report = BenchReport {
        case_id: cfg.case_id,
        scale,
        config: cfg.clone(),
        budget,
        reps,
        completed: ok.len(),
        seeds,
        failed,
        true_nie,
        true_nde,
        methods,
    };
    let timings = BenchTimings {
        case_id: cfg.case_id,
        jobs: jobs.max(1),
        total_seconds: start.elapsed().as_secs_f64(),
        replications: timings,
    };
    Ok((report, timings))
}

/// Which effect a summary table covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Effect {
    Nie,
    Nde,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub case: u8,
    pub method: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| BasmuError::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| BasmuError::Format(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows = r.deserialize().collect::<std::result::Result<Vec<SummaryRow>, _>>()?;
        Ok(Self { rows })
    }

    /// Cases as rows; bias, variance, MSE for each method as columns.
    pub fn to_text(&self) -> String {
        let mut cells: BTreeMap<u8, BTreeMap<(String, String), f64>> = BTreeMap::new();
        for r in &self.rows {
            cells
                .entry(r.case)
                .or_default()
                .insert((r.method.clone(), r.metric.clone()), r.value);
        }
        let metrics = ["bias", "variance", "mse"];
        let methods = ["bima", "basmu"];
        let mut out = String::new();
        let _ = write!(out, "{:<6}", "case");
        for m in methods {
            for k in metrics {
                let _ = write!(out, " {:>14}", format!("{m}.{k}"));
            }
        }
        out.push('\n');
        for (case, row) in &cells {
            let _ = write!(out, "{case:<6}");
            for m in methods {
                for k in metrics {
                    match row.get(&(m.to_string(), k.to_string())) {
                        Some(v) => {
                            let _ = write!(out, " {v:>14.6e}");
                        }
                        None => {
                            let _ = write!(out, " {:>14}", "-");
                        }
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Merge case reports into one long-format table. Reports must share scale
/// and budget, and a case may appear only once.
pub fn summarize(reports: &[BenchReport], effect: Effect) -> Result<SummaryTable> {
    let first = reports
        .first()
        .ok_or_else(|| BasmuError::Argument("nothing to summarize".into()))?;
    let mut seen = BTreeMap::new();
    for r in reports {
        if r.scale != first.scale || r.budget != first.budget {
            return Err(BasmuError::Merge(format!(
                "case {} was run with a different scale or budget than case {}",
                r.case_id, first.case_id
            )));
        }
        if let Some(prev) = seen.insert(r.case_id, &r.config) {
            if prev != &r.config {
                return Err(BasmuError::Merge(format!(
                    "case {} appears with conflicting configurations",
                    r.case_id
                )));
            }
            return Err(BasmuError::Merge(format!("case {} appears twice", r.case_id)));
        }
    }
    let mut sorted: Vec<&BenchReport> = reports.iter().collect();
    sorted.sort_by_key(|r| r.case_id);
    let mut rows = Vec::new();
    for r in sorted {
        for m in &r.methods {
            let metric = match effect {
                Effect::Nie => m.nie,
                Effect::Nde => m.nde,
            };
            for (name, value) in [("bias", metric.bias), ("variance", metric.variance), ("mse", metric.mse)] {
                rows.push(SummaryRow {
                    case: r.case_id,
                    method: m.method.name().to_string(),
                    metric: name.to_string(),
                    value,
                });
            }
        }
    }
    Ok(SummaryTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_decomposition() {
        let est = [1.2, 0.7, 1.9, 1.1, 0.4];
        let m = Metric::from_estimates(&est, 1.0);
        assert!((m.mse - (m.bias * m.bias + m.variance)).abs() < 1e-12);
        let exact = est.iter().map(|e| (e - 1.0f64).powi(2)).sum::<f64>() / 5.0;
        assert!((m.mse - exact).abs() < 1e-15);
        assert!(Metric::from_estimates(&[], 0.0).mse.is_nan());
    }

    #[test]
    fn csv_round_trip() {
        let t = SummaryTable {
            rows: vec![
                SummaryRow { case: 1, method: "bima".into(), metric: "mse".into(), value: 1.0 / 3.0 },
                SummaryRow { case: 3, method: "basmu".into(), metric: "bias".into(), value: -2.5e-7 },
            ],
        };
        let text = t.to_csv().unwrap();
        assert!(text.starts_with("case,method,metric,value"));
        assert_eq!(SummaryTable::from_csv(&text).unwrap(), t);
        assert!(t.to_text().lines().count() == 3);
    }
}
