//! Bayesian structured mediation analysis with unobserved confounders.
//!
//! The pipeline: build a Matérn eigenbasis on a 2D grid ([`kernel`]), simulate
//! or load data ([`simulate`]), sample the mediator model ([`mediator`]), take
//! the posterior mean of the individual effects, sample either outcome model
//! conditional on it ([`outcome`]), and summarize natural indirect/direct
//! effects ([`effects`]). [`bias`] evaluates the closed-form asymptotic bias
//! limits and [`bench`] runs the six-case simulation study.

pub mod bench;
pub mod bias;
pub mod effects;
pub mod error;
pub mod io;
pub mod kernel;
mod linalg;
pub mod mala;
pub mod mediator;
pub mod outcome;
pub mod simulate;

pub use error::{BasmuError, Result};
pub use kernel::{eigenbasis, matern_cov, Grid2D, KernelBasis, MaternParams};
pub use mediator::{fit_mediator, posterior_mean_eta, MediatorChains, MediatorOptions};
pub use outcome::{fit_basmu, fit_bima, OutcomeChains, OutcomeModel, OutcomeOptions};
pub use simulate::{make_truth, simulate_dataset, CaseConfig, Dataset, NuPattern, Scale, Truth};

/// Generator used throughout; seeded explicitly for reproducibility.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// Seeded generator on a given stream.
pub fn rng_from_seed(seed: u64, stream: u64) -> SimRng {
    use rand::SeedableRng;
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
