//! File formats: headerless numeric CSV for data matrices, named-column CSV
//! for chains, and JSON for truth, metadata and summaries.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::effects::EffectSummary;
use crate::error::{BasmuError, Result};
use crate::mediator::MediatorChains;
use crate::outcome::{OutcomeChains, OutcomeModel};
use crate::simulate::{Dataset, Truth};

fn format_err(path: &Path, msg: impl std::fmt::Display) -> BasmuError {
    BasmuError::Format(format!("{}: {msg}", path.display()))
}

/// Write a matrix as headerless CSV, one row per line.
pub fn write_matrix_csv(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path.as_ref())?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a headerless numeric CSV. An empty file yields a 0 × 0 matrix.
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        match cols {
            None => cols = Some(rec.len()),
            Some(c) if c != rec.len() => {
                return Err(format_err(path, format!("row {} has {} fields, expected {c}", rows + 1, rec.len())))
            }
            _ => {}
        }
        for field in rec.iter() {
            data.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| format_err(path, format!("row {}: {e}", rows + 1)))?,
            );
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols.unwrap_or(0), &data))
}

fn read_vector_csv(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix_csv(path)?;
    if m.ncols() != 1 {
        return Err(format_err(path, "expected a single column"));
    }
    Ok(m.column(0).into_owned())
}

/// Write m.csv, x.csv, c.csv and y.csv into `dir`.
pub fn save_dataset(dir: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_matrix_csv(dir.join("m.csv"), &data.m)?;
    write_matrix_csv(dir.join("x.csv"), &DMatrix::from_column_slice(data.n(), 1, data.x.as_slice()))?;
    write_matrix_csv(dir.join("c.csv"), &data.c)?;
    write_matrix_csv(dir.join("y.csv"), &DMatrix::from_column_slice(data.n(), 1, data.y.as_slice()))?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let m = read_matrix_csv(dir.join("m.csv"))?;
    let x = read_vector_csv(&dir.join("x.csv"))?;
    let mut c = read_matrix_csv(dir.join("c.csv"))?;
    if c.nrows() == 0 {
        c = DMatrix::zeros(m.nrows(), 0);
    }
    let y = read_vector_csv(&dir.join("y.csv"))?;
    Dataset::new(m, x, c, y)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TruthFile {
    n: usize,
    p: usize,
    q: usize,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    nu: Vec<f64>,
    /// Row-major q × p.
    xi: Vec<f64>,
    /// Row-major n × p.
    eta: Vec<f64>,
    gamma: f64,
    zeta: Vec<f64>,
    sigma_m: f64,
    sigma_y: f64,
    sigma_eta: f64,
    nie: f64,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().iter().cloned().collect()
}

pub fn save_truth(path: impl AsRef<Path>, truth: &Truth) -> Result<()> {
    let f = TruthFile {
        n: truth.n(),
        p: truth.p(),
        q: truth.xi.nrows(),
        alpha: truth.alpha.iter().cloned().collect(),
        beta: truth.beta.iter().cloned().collect(),
        nu: truth.nu.iter().cloned().collect(),
        xi: row_major(&truth.xi),
        eta: row_major(&truth.eta),
        gamma: truth.gamma,
        zeta: truth.zeta.iter().cloned().collect(),
        sigma_m: truth.sigma_m,
        sigma_y: truth.sigma_y,
        sigma_eta: truth.sigma_eta,
        nie: truth.nie(),
    };
    fs::write(path, serde_json::to_string_pretty(&f)?)?;
    Ok(())
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<Truth> {
    let path = path.as_ref();
    let f: TruthFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    let (n, p, q) = (f.n, f.p, f.q);
    if f.alpha.len() != p || f.beta.len() != p || f.nu.len() != p || f.xi.len() != q * p || f.eta.len() != n * p {
        return Err(format_err(path, "field lengths do not match n, p, q"));
    }
    Ok(Truth {
        alpha: DVector::from_vec(f.alpha),
        beta: DVector::from_vec(f.beta),
        nu: DVector::from_vec(f.nu),
        xi: DMatrix::from_row_slice(q, p, &f.xi),
        eta: DMatrix::from_row_slice(n, p, &f.eta),
        gamma: f.gamma,
        zeta: DVector::from_vec(f.zeta),
        sigma_m: f.sigma_m,
        sigma_y: f.sigma_y,
        sigma_eta: f.sigma_eta,
    })
}

/// Named columns with one row per retained iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ChainTable {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| format_err(path, e)))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    /// Columns whose names start with `prefix` followed by an index.
    pub fn block(&self, prefix: &str) -> Vec<usize> {
        self.header
            .iter()
            .enumerate()
            .filter(|(_, h)| {
                h.strip_prefix(prefix)
                    .is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit() || c == '_'))
            })
            .map(|(k, _)| k)
            .collect()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

fn names(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |k| format!("{prefix}{k}"))
}

/// Run metadata written next to each chain file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub model: String,
    pub iterations: usize,
    pub burn_in: usize,
    pub retained: usize,
    pub acceptance_rate: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub step_size: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p_delta: Option<f64>,
}

/// Mediator chains as chains.csv + meta.json. θ_η draws are summarized by
/// their mean (eta_coeffs_mean.csv) rather than stored per draw.
pub fn save_mediator_chains(dir: impl AsRef<Path>, chains: &MediatorChains, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let l = chains.theta_alpha.first().map_or(0, |t| t.len());
    let q = chains.theta_xi.first().map_or(0, |t| t.nrows());
    let mut header: Vec<String> = names("theta_alpha_", l).collect();
    for k in 1..=q {
        header.extend(names(&format!("theta_xi_{k}_"), l));
    }
    header.extend(["sigma_M2", "sigma_alpha2", "sigma_xi2", "sigma_eta2"].map(String::from));
    let rows = (0..chains.len())
        .map(|t| {
            let mut row: Vec<f64> = chains.theta_alpha[t].iter().cloned().collect();
            row.extend(row_major(&chains.theta_xi[t]));
            row.extend([chains.sigma_m2[t], chains.sigma_alpha2[t], chains.sigma_xi2[t], chains.sigma_eta2[t]]);
            row
        })
        .collect();
    ChainTable { header, rows }.write(dir.join("chains.csv"))?;
    if !chains.theta_eta.is_empty() {
        write_matrix_csv(
            dir.join("eta_coeffs_mean.csv"),
            &crate::mediator::posterior_mean_eta_coeffs(chains)?,
        )?;
    }
    let meta = ChainMeta {
        model: "mediator".into(),
        iterations: chains.total_iters,
        burn_in: chains.burn_in,
        retained: chains.len(),
        acceptance_rate: chains.acceptance_rate,
        seed,
        step_size: Some(chains.step_size),
        p_delta: None,
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Load mediator chains written by [`save_mediator_chains`]; θ_η draws are not
/// restored.
pub fn load_mediator_chains(dir: impl AsRef<Path>) -> Result<MediatorChains> {
    let dir = dir.as_ref();
    let table = ChainTable::read(dir.join("chains.csv"))?;
    let meta: ChainMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    let alpha_cols = table.block("theta_alpha_");
    let l = alpha_cols.len();
    let xi_cols = table.block("theta_xi_");
    if l == 0 || xi_cols.len() % l != 0 {
        return Err(format_err(&dir.join("chains.csv"), "malformed coefficient columns"));
    }
    let q = xi_cols.len() / l;
    let col = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| format_err(&dir.join("chains.csv"), format!("missing column {name}")))
    };
    Ok(MediatorChains {
        theta_alpha: table
            .rows
            .iter()
            .map(|r| DVector::from_iterator(l, alpha_cols.iter().map(|&k| r[k])))
            .collect(),
        theta_xi: table
            .rows
            .iter()
            .map(|r| DMatrix::from_row_iterator(q, l, xi_cols.iter().map(|&k| r[k])))
            .collect(),
        theta_eta: Vec::new(),
        sigma_m2: col("sigma_M2")?,
        sigma_alpha2: col("sigma_alpha2")?,
        sigma_xi2: col("sigma_xi2")?,
        sigma_eta2: col("sigma_eta2")?,
        total_iters: meta.iterations,
        burn_in: meta.burn_in,
        acceptance_rate: meta.acceptance_rate,
        step_size: meta.step_size.unwrap_or(f64::NAN),
    })
}

pub fn save_outcome_chains(dir: impl AsRef<Path>, chains: &OutcomeChains, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let l = chains.theta_beta.first().map_or(0, |t| t.len());
    let q = chains.zeta.first().map_or(0, |t| t.len());
    let p = chains.nu.first().map_or(0, |t| t.len());
    let basmu = chains.model == OutcomeModel::Basmu;
    let mut header: Vec<String> = names("theta_beta_", l).collect();
    header.push("gamma".into());
    header.extend(names("zeta_", q));
    header.extend(["sigma_Y2", "sigma_beta2", "sigma_gamma2", "sigma_zeta2"].map(String::from));
    if basmu {
        header.push("sigma_nu2".into());
        header.extend(names("nu_", p));
        header.extend(names("delta_", p));
    }
    let rows = (0..chains.len())
        .map(|t| {
            let mut row: Vec<f64> = chains.theta_beta[t].iter().cloned().collect();
            row.push(chains.gamma[t]);
            row.extend(chains.zeta[t].iter());
            row.extend([chains.sigma_y2[t], chains.sigma_beta2[t], chains.sigma_gamma2[t], chains.sigma_zeta2[t]]);
            if basmu {
                row.push(chains.sigma_nu2[t]);
                row.extend(chains.nu[t].iter());
                row.extend(chains.delta[t].iter().map(|&d| if d { 1.0 } else { 0.0 }));
            }
            row
        })
        .collect();
    ChainTable { header, rows }.write(dir.join("chains.csv"))?;
    let meta = ChainMeta {
        model: chains.model.name().into(),
        iterations: chains.total_iters,
        burn_in: chains.burn_in,
        retained: chains.len(),
        acceptance_rate: chains.acceptance_rate,
        seed,
        step_size: None,
        p_delta: basmu.then_some(chains.p_delta),
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_outcome_chains(dir: impl AsRef<Path>) -> Result<OutcomeChains> {
    let dir = dir.as_ref();
    let path = dir.join("chains.csv");
    let table = ChainTable::read(&path)?;
    let meta: ChainMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    let model: OutcomeModel = meta.model.parse()?;
    let missing = |name: &str| format_err(&path, format!("missing column {name}"));
    let col = |name: &str| table.column(name).ok_or_else(|| missing(name));
    let vecs = |cols: &[usize]| -> Vec<DVector<f64>> {
        table
            .rows
            .iter()
            .map(|r| DVector::from_iterator(cols.len(), cols.iter().map(|&k| r[k])))
            .collect()
    };
    let basmu = model == OutcomeModel::Basmu;
    let nu_cols = table.block("nu_");
    let delta_cols = table.block("delta_");
    Ok(OutcomeChains {
        model,
        theta_beta: vecs(&table.block("theta_beta_")),
        gamma: col("gamma")?,
        zeta: vecs(&table.block("zeta_")),
        sigma_y2: col("sigma_Y2")?,
        sigma_beta2: col("sigma_beta2")?,
        sigma_gamma2: col("sigma_gamma2")?,
        sigma_zeta2: col("sigma_zeta2")?,
        nu: if basmu { vecs(&nu_cols) } else { Vec::new() },
        delta: if basmu {
            table
                .rows
                .iter()
                .map(|r| delta_cols.iter().map(|&k| r[k] != 0.0).collect())
                .collect()
        } else {
            Vec::new()
        },
        sigma_nu2: if basmu { col("sigma_nu2")? } else { Vec::new() },
        total_iters: meta.iterations,
        burn_in: meta.burn_in,
        p_delta: meta.p_delta.unwrap_or(0.5),
        acceptance_rate: meta.acceptance_rate,
    })
}

#[derive(Serialize)]
struct EffectScalars<'a> {
    level: f64,
    pairing: &'a crate::effects::Pairing,
    draws: usize,
    scalar_nie_mean: f64,
    scalar_nie_lower: f64,
    scalar_nie_upper: f64,
    nde_mean: f64,
    nde_lower: f64,
    nde_upper: f64,
    n_active: usize,
    n_positive: usize,
    n_negative: usize,
    sum_positive: f64,
    sum_negative: f64,
}

/// effects.json (scalar fields) and effects.csv (per-voxel summary).
pub fn save_effects(dir: impl AsRef<Path>, s: &EffectSummary) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let sp = &s.spatial;
    let scalars = EffectScalars {
        level: s.level,
        pairing: &s.pairing,
        draws: s.draws,
        scalar_nie_mean: s.scalar_nie_mean,
        scalar_nie_lower: s.scalar_nie_lower,
        scalar_nie_upper: s.scalar_nie_upper,
        nde_mean: s.nde_mean,
        nde_lower: s.nde_lower,
        nde_upper: s.nde_upper,
        n_active: sp.active.iter().filter(|&&a| a).count(),
        n_positive: sp.n_positive,
        n_negative: sp.n_negative,
        sum_positive: sp.sum_positive,
        sum_negative: sp.sum_negative,
    };
    fs::write(dir.join("effects.json"), serde_json::to_string_pretty(&scalars)?)?;
    let mut w = csv::Writer::from_path(dir.join("effects.csv"))?;
    w.write_record(["voxel", "mean", "lower", "upper", "active"])?;
    for j in 0..sp.mean.len() {
        w.write_record([
            (j + 1).to_string(),
            format!("{:e}", sp.mean[j]),
            format!("{:e}", sp.lower[j]),
            format!("{:e}", sp.upper[j]),
            u8::from(sp.active[j]).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
