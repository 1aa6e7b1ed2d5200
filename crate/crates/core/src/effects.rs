//! Natural indirect and direct effect summaries from paired chains.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::kernel::KernelBasis;
use crate::mediator::{mean_of, MediatorChains};
use crate::outcome::OutcomeChains;

/// How mediator draws are matched with outcome draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Outcome draw t uses mediator draw t mod K.
    #[default]
    Cyclic,
    /// Every outcome draw uses the posterior-mean α.
    PosteriorMeanAlpha,
}

impl std::str::FromStr for Pairing {
    type Err = crate::BasmuError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cyclic" => Ok(Pairing::Cyclic),
            "posterior_mean_alpha" | "mean-alpha" => Ok(Pairing::PosteriorMeanAlpha),
            other => arg_err(format!("unknown pairing '{other}'")),
        }
    }
}

/// Per-draw NIE: spatial products α_t(s_j)β_t(s_j) and their weighted sum.
#[derive(Debug, Clone, PartialEq)]
pub struct NieChain {
    pub spatial: Vec<DVector<f64>>,
    pub scalar: Vec<f64>,
}

impl NieChain {
    /// Build from field values on the grid (one p-vector per draw).
    pub fn from_fields(alpha: &[DVector<f64>], beta: &[DVector<f64>]) -> Result<Self> {
        if alpha.is_empty() || beta.is_empty() {
            return arg_err("NIE needs at least one mediator and one outcome draw");
        }
        let p = beta[0].len();
        if alpha.iter().chain(beta).any(|f| f.len() != p) {
            return arg_err("α and β draws have inconsistent lengths");
        }
        let cell = 1.0 / p as f64;
        let mut spatial = Vec::with_capacity(beta.len());
        let mut scalar = Vec::with_capacity(beta.len());
        for (t, b) in beta.iter().enumerate() {
            let e = alpha[t % alpha.len()].component_mul(b);
            scalar.push(e.sum() * cell);
            spatial.push(e);
        }
        Ok(Self { spatial, scalar })
    }

    pub fn len(&self) -> usize {
        self.scalar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scalar.is_empty()
    }
}

/// Pair mediator and outcome chains and evaluate the NIE draw by draw.
pub fn nie_chain(
    med: &MediatorChains,
    out: &OutcomeChains,
    basis: &KernelBasis,
    pairing: Pairing,
) -> Result<NieChain> {
    if med.is_empty() || out.is_empty() {
        return arg_err("NIE needs non-empty mediator and outcome chains");
    }
    let alpha: Vec<DVector<f64>> = match pairing {
        Pairing::Cyclic => med
            .theta_alpha
            .iter()
            .take(out.len())
            .map(|t| basis.from_coeffs(t))
            .collect::<Result<_>>()?,
        Pairing::PosteriorMeanAlpha => {
            let mean = mean_of(&med.theta_alpha).expect("non-empty");
            vec![basis.from_coeffs(&mean)?]
        }
    };
    let beta: Vec<DVector<f64>> = out
        .theta_beta
        .iter()
        .map(|t| basis.from_coeffs(t))
        .collect::<Result<_>>()?;
    NieChain::from_fields(&alpha, &beta)
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-tailed credible interval at the given level.
pub fn credible_interval(draws: &[f64], level: f64) -> Result<(f64, f64)> {
    check_level(level)?;
    if draws.len() < 2 {
        return arg_err(format!("need at least 2 draws for an interval, got {}", draws.len()));
    }
    let mut s = draws.to_vec();
    s.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    Ok((quantile_sorted(&s, tail), quantile_sorted(&s, 1.0 - tail)))
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return arg_err(format!("credible level must lie in (0, 1), got {level}"));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Voxel-wise selection from a spatial effect chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSelection {
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub active: Vec<bool>,
    pub n_positive: usize,
    pub n_negative: usize,
    /// Summed posterior-mean effect over active voxels of each sign, weighted
    /// by the cell measure (their contribution to the scalar NIE).
    pub sum_positive: f64,
    pub sum_negative: f64,
}

/// A voxel is active when its equal-tailed interval excludes zero.
pub fn select_active(spatial: &[DVector<f64>], level: f64) -> Result<ActiveSelection> {
    check_level(level)?;
    if spatial.len() < 2 {
        return arg_err(format!("need at least 2 draws per voxel, got {}", spatial.len()));
    }
    let p = spatial[0].len();
    let cell = 1.0 / p as f64;
    let mut sel = ActiveSelection {
        mean: Vec::with_capacity(p),
        lower: Vec::with_capacity(p),
        upper: Vec::with_capacity(p),
        active: Vec::with_capacity(p),
        n_positive: 0,
        n_negative: 0,
        sum_positive: 0.0,
        sum_negative: 0.0,
    };
    let mut column = vec![0.0; spatial.len()];
    for j in 0..p {
        for (slot, draw) in column.iter_mut().zip(spatial) {
            *slot = draw[j];
        }
        let m = mean(&column);
        let (lo, hi) = credible_interval(&column, level)?;
        let active = lo > 0.0 || hi < 0.0;
        if active {
            if m > 0.0 {
                sel.n_positive += 1;
                sel.sum_positive += m * cell;
            } else {
                sel.n_negative += 1;
                sel.sum_negative += m * cell;
            }
        }
        sel.mean.push(m);
        sel.lower.push(lo);
        sel.upper.push(hi);
        sel.active.push(active);
    }
    Ok(sel)
}

/// Posterior summary of the mediation effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub level: f64,
    pub pairing: Pairing,
    pub draws: usize,
    pub scalar_nie_mean: f64,
    pub scalar_nie_lower: f64,
    pub scalar_nie_upper: f64,
    pub nde_mean: f64,
    pub nde_lower: f64,
    pub nde_upper: f64,
    pub spatial: ActiveSelection,
}

pub fn summarize_effects(
    med: &MediatorChains,
    out: &OutcomeChains,
    basis: &KernelBasis,
    level: f64,
    pairing: Pairing,
) -> Result<EffectSummary> {
    check_level(level)?;
    let nie = nie_chain(med, out, basis, pairing)?;
    let spatial = select_active(&nie.spatial, level)?;
    let (sl, su) = credible_interval(&nie.scalar, level)?;
    let (gl, gu) = credible_interval(&out.gamma, level)?;
    Ok(EffectSummary {
        level,
        pairing,
        draws: nie.len(),
        scalar_nie_mean: mean(&nie.scalar),
        scalar_nie_lower: sl,
        scalar_nie_upper: su,
        nde_mean: mean(&out.gamma),
        nde_lower: gl,
        nde_upper: gu,
        spatial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn unit_fields_give_unit_nie() {
        for p in [1, 3, 10] {
            let ones = vec![DVector::from_element(p, 1.0)];
            let chain = NieChain::from_fields(&ones, &ones).unwrap();
            assert!((chain.scalar[0] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_beta_gives_zero_field() {
        let a = vec![v(&[1.0, -2.0, 3.0])];
        let b = vec![DVector::zeros(3); 4];
        let chain = NieChain::from_fields(&a, &b).unwrap();
        assert!(chain.spatial.iter().all(|e| e.amax() == 0.0));
    }

    #[test]
    fn three_voxel_hand_value() {
        let a = vec![v(&[0.5, -1.0, 2.0])];
        let b = vec![v(&[2.0, 3.0, 0.25])];
        // (1.0 - 3.0 + 0.5) / 3
        let chain = NieChain::from_fields(&a, &b).unwrap();
        assert!((chain.scalar[0] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn cyclic_pairing_recycles_mediator_draws() {
        let a = vec![v(&[1.0]), v(&[2.0])];
        let b = vec![v(&[1.0]); 5];
        let chain = NieChain::from_fields(&a, &b).unwrap();
        assert_eq!(chain.scalar, vec![1.0, 2.0, 1.0, 2.0, 1.0]);
        assert!(NieChain::from_fields(&[], &b).is_err());
    }

    #[test]
    fn constant_and_symmetric_chains() {
        let constant = vec![v(&[2.0]); 10];
        let s = select_active(&constant, 0.95).unwrap();
        assert!(s.active[0]);
        assert_eq!((s.n_positive, s.n_negative), (1, 0));

        let sym: Vec<_> = (-5..=5).map(|k| v(&[k as f64])).collect();
        let s = select_active(&sym, 0.95).unwrap();
        assert!(!s.active[0]);
        assert!(select_active(&sym, 1.0).is_err());
        assert!(select_active(&sym[..1], 0.5).is_err());
    }

    #[test]
    fn quantiles_match_sort_oracle() {
        // 100 draws: -20..79 shifted by 0.5, so 2.5% and 97.5% straddle zero
        let draws: Vec<f64> = (0..100).map(|k| (k as f64 - 20.0) + 0.5).collect();
        let (lo, hi) = credible_interval(&draws, 0.95).unwrap();
        let mut s = draws.clone();
        s.sort_by(f64::total_cmp);
        // type 7: h = 99·0.025 = 2.475
        let lo_oracle = s[2] + 0.475 * (s[3] - s[2]);
        let hi_oracle = s[96] + 0.525 * (s[97] - s[96]);
        assert!((lo - lo_oracle).abs() < 1e-12);
        assert!((hi - hi_oracle).abs() < 1e-12);
        assert!(lo < 0.0 && hi > 0.0);
        let chain: Vec<_> = draws.iter().map(|&d| v(&[d])).collect();
        assert!(!select_active(&chain, 0.95).unwrap().active[0]);
    }
}
