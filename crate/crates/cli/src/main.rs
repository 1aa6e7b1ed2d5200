//! `basmu` command-line front end.
//!
//! Exit codes: 0 on success, 2 for argument or input errors, 3 for numerical
//! or sampler failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use basmu::bench::{run_case, summarize, Budget, Effect};
use basmu::bias::{bias_report, empirical_bias_by_n};
use basmu::effects::{summarize_effects, Pairing};
use basmu::io;
use basmu::mediator::{CoefUpdate, MediatorOptions};
use basmu::outcome::OutcomeOptions;
use basmu::{
    eigenbasis, fit_basmu, fit_bima, fit_mediator, make_truth, posterior_mean_eta, rng_from_seed,
    simulate_dataset, BasmuError, CaseConfig, KernelBasis, OutcomeModel, Scale,
};
use clap::{Parser, Subcommand};
use nalgebra::DVector;

#[derive(Parser)]
#[command(name = "basmu", version, about = "Bayesian structured mediation with unobserved confounders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CaseArgs {
    /// Simulation case, 1–6.
    #[arg(long = "case", default_value_t = 1)]
    case_id: u8,
    #[arg(long, default_value = "desk")]
    scale: Scale,
    /// JSON object whose keys override case settings.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl CaseArgs {
    fn resolve(&self) -> anyhow::Result<CaseConfig> {
        let cfg = CaseConfig::case(self.case_id, self.scale)?;
        Ok(match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let value: serde_json::Value =
                    serde_json::from_str(&text).map_err(|e| BasmuError::Argument(format!("{}: {e}", path.display())))?;
                cfg.with_overrides(&value)?
            }
            None => cfg,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one dataset and write data, truth and basis to a directory.
    Simulate {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the kernel eigenbasis for a case and save it as a KBAS file.
    Basis {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample the mediator model; writes chains and the posterior mean η̂.
    FitMediator {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        basis: PathBuf,
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        /// Retained draws are the last 10% unless set.
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long, default_value = "mala")]
        alpha_update: CoefUpdate,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample the BIMA or BASMU outcome model.
    FitOutcome {
        #[arg(long)]
        model: OutcomeModel,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        basis: PathBuf,
        /// n × p η̂ written by fit-mediator; required for basmu.
        #[arg(long)]
        etahat: Option<PathBuf>,
        #[arg(long, default_value_t = 20000)]
        iters: usize,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long, default_value_t = 0.5)]
        p_delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize NIE and NDE from mediator and outcome chains.
    Effects {
        #[arg(long)]
        med: PathBuf,
        #[arg(long)]
        outcome: PathBuf,
        #[arg(long)]
        basis: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, default_value = "cyclic")]
        pairing: Pairing,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-form bias limits for a simulated truth.
    BiasLimit {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        basis: PathBuf,
        /// Dataset directory; defaults to the directory holding the truth file.
        #[arg(long)]
        data: Option<PathBuf>,
        /// η̂ and a BASMU outcome directory supplying ν̂ for the BASMU limit.
        #[arg(long, requires = "outcome")]
        etahat: Option<PathBuf>,
        #[arg(long, requires = "etahat")]
        outcome: Option<PathBuf>,
        /// Sample sizes for the Monte Carlo BIMA error trend.
        #[arg(long, value_delimiter = ',')]
        ns: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "bias_report.json")]
        out: PathBuf,
    },
    /// Run replications of one case with both outcome models.
    Bench {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value_t = 1000)]
        seed: u64,
        #[arg(long)]
        mediator_iters: Option<usize>,
        #[arg(long)]
        outcome_iters: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge bench reports into a CSV and a printed table.
    Summarize {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value = "nie")]
        effect: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn basis_for(path: &Path, p: usize) -> anyhow::Result<KernelBasis> {
    let basis = KernelBasis::load(path)?;
    if basis.p() != p {
        return Err(BasmuError::Argument(format!(
            "basis has p = {} but the data has p = {p}",
            basis.p()
        ))
        .into());
    }
    Ok(basis)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { case, seed, out } => {
            let mut cfg = case.resolve()?;
            cfg.seed = seed;
            let basis = eigenbasis(&cfg.grid, &cfg.matern, cfg.l)?;
            let mut rng = rng_from_seed(seed, 1);
            let truth = make_truth(&cfg, &basis, &mut rng)?;
            let data = simulate_dataset(&truth, &cfg, &mut rng)?;
            io::save_dataset(&out, &data)?;
            io::save_truth(out.join("truth.json"), &truth)?;
            basis.save(out.join("basis.kbas"))?;
            write_json(&out.join("config.json"), &cfg)?;
            println!("wrote n = {}, p = {} to {}", data.n(), data.p(), out.display());
        }
        Command::Basis { case, out } => {
            let cfg = case.resolve()?;
            let basis = eigenbasis(&cfg.grid, &cfg.matern, cfg.l)?;
            basis.save(&out)?;
            println!("p = {}, L = {}, orthonormality error {:.2e}", basis.p(), basis.len(), basis.orthonormality_error());
        }
        Command::FitMediator { data, basis, iters, burn_in, alpha_update, seed, out } => {
            let data = io::load_dataset(&data)?;
            let basis = basis_for(&basis, data.p())?;
            let mut opts = MediatorOptions::with_iters(iters);
            if let Some(b) = burn_in {
                opts.burn_in = b;
            }
            opts.alpha_update = alpha_update;
            let chains = fit_mediator(&data, &basis, &opts, &mut rng_from_seed(seed, 2))?;
            io::save_mediator_chains(&out, &chains, seed)?;
            io::write_matrix_csv(out.join("etahat.csv"), &posterior_mean_eta(&chains, &basis)?)?;
            println!("retained {} draws, acceptance {:.3}", chains.len(), chains.acceptance_rate);
        }
        Command::FitOutcome { model, data, basis, etahat, iters, burn_in, p_delta, seed, out } => {
            let data = io::load_dataset(&data)?;
            let basis = basis_for(&basis, data.p())?;
            let mut opts = OutcomeOptions::with_iters(iters);
            if let Some(b) = burn_in {
                opts.burn_in = b;
            }
            opts.p_delta = p_delta;
            let mut rng = rng_from_seed(seed, 3);
            let chains = match model {
                OutcomeModel::Bima => fit_bima(&data, &basis, &opts, &mut rng)?,
                OutcomeModel::Basmu => {
                    let Some(path) = etahat else {
                        return Err(BasmuError::Argument("--etahat is required for basmu".into()).into());
                    };
                    let etahat = io::read_matrix_csv(path)?;
                    fit_basmu(&data, &basis, &etahat, &opts, &mut rng)?
                }
            };
            io::save_outcome_chains(&out, &chains, seed)?;
            println!("{}: retained {} draws", model.name(), chains.len());
        }
        Command::Effects { med, outcome, basis, level, pairing, out } => {
            let med = io::load_mediator_chains(&med)?;
            let outc = io::load_outcome_chains(&outcome)?;
            let basis = KernelBasis::load(&basis)?;
            let summary = summarize_effects(&med, &outc, &basis, level, pairing)?;
            io::save_effects(&out, &summary)?;
            println!(
                "NIE {:.4} [{:.4}, {:.4}], NDE {:.4} [{:.4}, {:.4}]",
                summary.scalar_nie_mean,
                summary.scalar_nie_lower,
                summary.scalar_nie_upper,
                summary.nde_mean,
                summary.nde_lower,
                summary.nde_upper
            );
        }
        Command::BiasLimit { truth, basis, data, etahat, outcome, ns, reps, iters, case, seed, out } => {
            let truth_file = truth;
            let truth = io::load_truth(&truth_file)?;
            let basis = basis_for(&basis, truth.p())?;
            let data_dir = match data {
                Some(d) => d,
                None => truth_file.parent().map(Path::to_path_buf).unwrap_or_default(),
            };
            let data = io::load_dataset(&data_dir)?;
            let fitted = match (etahat, outcome) {
                (Some(e), Some(o)) => {
                    let etahat = io::read_matrix_csv(e)?;
                    let nu = io::load_outcome_chains(&o)?
                        .mean_nu_field()
                        .ok_or_else(|| BasmuError::Argument("outcome chains carry no ν draws".into()))?;
                    Some((etahat, nu))
                }
                _ => None,
            };
            let empirical = if ns.is_empty() {
                Vec::new()
            } else {
                let cfg = case.resolve()?;
                empirical_bias_by_n(&cfg, &ns, reps, seed, &OutcomeOptions::with_iters(iters))?
            };
            let report = bias_report(
                &truth,
                &data.x,
                &data.c,
                &basis,
                fitted.as_ref().map(|(e, n): &(_, DVector<f64>)| (e, n)),
                empirical,
            )?;
            write_json(&out, &report)?;
            println!(
                "‖limit‖ = {:.4e}, frequentist NIE bias {:.4e}, shrinkage {:.4}",
                report.limit_norm, report.freq_limit_scalar, report.shrinkage_factor
            );
        }
        Command::Bench { case, reps, jobs, seed, mediator_iters, outcome_iters, out } => {
            let cfg = case.resolve()?;
            let mut budget = Budget::for_scale(case.scale);
            if let Some(m) = mediator_iters {
                budget.mediator_iters = m;
            }
            if let Some(o) = outcome_iters {
                budget.outcome_iters = o;
            }
            let (report, timings) = run_case(&cfg, case.scale, reps, seed, budget, jobs)?;
            write_json(&out, &report)?;
            let mut sidecar = out.clone().into_os_string();
            sidecar.push(".timings.json");
            write_json(Path::new(&sidecar), &timings)?;
            for m in &report.methods {
                println!(
                    "case {} {}: NIE bias {:+.4} var {:.4} mse {:.4}",
                    report.case_id,
                    m.method.name(),
                    m.nie.bias,
                    m.nie.variance,
                    m.nie.mse
                );
            }
            if !report.failed.is_empty() {
                eprintln!("{} of {} replications failed", report.failed.len(), reps);
            }
        }
        Command::Summarize { reports, effect, out } => {
            let effect = match effect.as_str() {
                "nie" => Effect::Nie,
                "nde" => Effect::Nde,
                other => bail!(BasmuError::Argument(format!("effect must be nie or nde, got {other}"))),
            };
            let parsed = reports
                .iter()
                .map(|p| -> anyhow::Result<_> {
                    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    Ok(serde_json::from_str(&text).map_err(BasmuError::from)?)
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            let table = summarize(&parsed, effect)?;
            if let Some(path) = out {
                fs::write(path, table.to_csv()?)?;
            }
            print!("{}", table.to_text());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<BasmuError>() {
        Some(e) if !e.is_argument() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
