//! Metropolis-adjusted Langevin kernel shared by the α and β updates.

use nalgebra::DVector;
use rand::Rng;

use crate::linalg::std_normal_vec;

/// Log density and its gradient at a point.
pub trait LangevinTarget {
    fn log_density_and_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>);
}

impl<F> LangevinTarget for F
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    fn log_density_and_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        self(theta)
    }
}

/// Outcome of one MALA transition.
#[derive(Debug, Clone)]
pub struct MalaStep {
    pub theta: DVector<f64>,
    pub accepted: bool,
    /// min(1, MH ratio), used for step-size adaptation.
    pub accept_prob: f64,
    /// False when the proposal or current point produced non-finite values.
    pub finite: bool,
}

fn log_q(to: &DVector<f64>, from: &DVector<f64>, grad_from: &DVector<f64>, step: f64) -> f64 {
    let h2 = step * step;
    let mean = from + grad_from * (0.5 * h2);
    -(to - mean).norm_squared() / (2.0 * h2)
}

/// One MALA transition: θ' = θ + (h²/2)∇log π(θ) + h z, accepted with the
/// Metropolis–Hastings correction for the asymmetric proposal.
pub fn mala_step<T: LangevinTarget + ?Sized, R: Rng + ?Sized>(
    target: &T,
    theta: &DVector<f64>,
    step: f64,
    rng: &mut R,
) -> MalaStep {
    let (lp, grad) = target.log_density_and_grad(theta);
    let z = std_normal_vec(theta.len(), rng);
    let proposal = theta + &grad * (0.5 * step * step) + z * step;
    let (lp_new, grad_new) = target.log_density_and_grad(&proposal);

    let finite = lp.is_finite()
        && grad.iter().all(|g| g.is_finite())
        && proposal.iter().all(|v| v.is_finite());
    if !finite {
        return MalaStep {
            theta: theta.clone(),
            accepted: false,
            accept_prob: 0.0,
            finite: false,
        };
    }
    let log_ratio = if lp_new.is_finite() && grad_new.iter().all(|g| g.is_finite()) {
        lp_new - lp + log_q(theta, &proposal, &grad_new, step) - log_q(&proposal, theta, &grad, step)
    } else {
        f64::NEG_INFINITY
    };
    let accept_prob = log_ratio.min(0.0).exp();
    let u: f64 = rng.random();
    if u < accept_prob {
        MalaStep {
            theta: proposal,
            accepted: true,
            accept_prob,
            finite: true,
        }
    } else {
        MalaStep {
            theta: theta.clone(),
            accepted: false,
            accept_prob,
            finite: true,
        }
    }
}

/// Robbins–Monro step-size adaptation toward a target acceptance rate.
#[derive(Debug, Clone)]
pub struct StepAdapter {
    log_step: f64,
    target: f64,
    count: usize,
}

impl StepAdapter {
    pub fn new(step: f64, target: f64) -> Self {
        Self {
            log_step: step.ln(),
            target,
            count: 0,
        }
    }

    pub fn step(&self) -> f64 {
        self.log_step.exp()
    }

    pub fn update(&mut self, accept_prob: f64) {
        self.count += 1;
        let rate = 1.0 / (self.count as f64).powf(0.6);
        self.log_step += rate * (accept_prob - self.target);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use nalgebra::{DMatrix, Matrix2};

    #[test]
    fn tiny_step_at_mode_always_accepts() {
        let target = |t: &DVector<f64>| (-0.5 * t.norm_squared(), -t);
        let mut rng = rng_from_seed(1, 0);
        let theta = DVector::zeros(3);
        let mut acc = 0.0;
        for _ in 0..200 {
            acc += mala_step(&target, &theta, 1e-6, &mut rng).accept_prob;
        }
        assert!(acc / 200.0 > 0.999_999);
    }

    #[test]
    fn correlated_gaussian_moments() {
        // N(μ, Σ) with Σ = [[1, 0.6], [0.6, 2]]
        let mu = DVector::from_vec(vec![1.0, -2.0]);
        let sigma = Matrix2::new(1.0, 0.6, 0.6, 2.0);
        let prec = sigma.try_inverse().unwrap();
        let prec = DMatrix::from_iterator(2, 2, prec.iter().copied());
        let target = |t: &DVector<f64>| {
            let d = t - &mu;
            let g = -(&prec * &d);
            (0.5 * d.dot(&g), g)
        };
        let mut rng = rng_from_seed(2, 0);
        let mut theta = DVector::zeros(2);
        let mut adapter = StepAdapter::new(0.5, 0.574);
        for _ in 0..2000 {
            let s = mala_step(&target, &theta, adapter.step(), &mut rng);
            adapter.update(s.accept_prob);
            theta = s.theta;
        }
        // batch means over f(θ) = (θ₀, θ₁, d₀², d₀d₁, d₁²), d = θ − μ
        let expected = [mu[0], mu[1], sigma[(0, 0)], sigma[(0, 1)], sigma[(1, 1)]];
        let stats = |t: &DVector<f64>| {
            let d = t - &mu;
            [t[0], t[1], d[0] * d[0], d[0] * d[1], d[1] * d[1]]
        };
        let (batches, per) = (200usize, 500usize);
        let mut means = vec![[0.0; 5]; batches];
        for bm in means.iter_mut() {
            for _ in 0..per {
                theta = mala_step(&target, &theta, adapter.step(), &mut rng).theta;
                for (acc, v) in bm.iter_mut().zip(stats(&theta)) {
                    *acc += v / per as f64;
                }
            }
        }
        for k in 0..5 {
            let m = means.iter().map(|b| b[k]).sum::<f64>() / batches as f64;
            let var = means.iter().map(|b| (b[k] - m).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
            let se = (var / batches as f64).sqrt();
            assert!((m - expected[k]).abs() < 3.0 * se, "stat {k}: {m} vs {} (se {se})", expected[k]);
        }
    }
}
