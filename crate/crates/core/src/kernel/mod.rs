//! Spatial grid, Matérn covariance and the truncated Mercer eigenbasis that
//! every functional parameter is expressed in.

mod basis;
mod grid;
mod matern;

pub use basis::{eigenbasis, kernel_matrix, KernelBasis};
pub use grid::Grid2D;
pub use matern::{bessel_k, matern_cov, MaternParams};
