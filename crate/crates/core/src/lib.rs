//! Numerical toolkit for the forced flow `u_t = sum_i arctan(lambda_i(D^2 u)) + f`
//! on `R^n x (-inf, 0]`: quadratic targets, generalized-symmetric barriers,
//! an explicit monotone solver, heat-kernel identities and decay-rate fits.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision, clippy::needless_range_loop)]

pub mod barriers;
pub mod kernels;
pub mod problem;
pub mod quadrature;
pub mod solver;
pub mod spectral;
pub mod verify;

pub use spectral::{eigh, lag_operator, lag_operator_derivative, EigenDecomposition, SymMatrix};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("outside admissible domain: {0}")]
    Domain(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("internal consistency failure: {0}")]
    Consistency(String),
    #[error("barrier ODE step underflow at s = {s}, w = {w}: {detail}")]
    Singularity { s: f64, w: f64, detail: String },
    #[error("solution diverged at node {node:?} (x = {x:?}) at t = {t}")]
    Divergence { node: Vec<usize>, x: Vec<f64>, t: f64 },
    #[error("time step dt = {dt} violates the CFL bound dt <= h^2/(2n) = {bound}")]
    Cfl { dt: f64, bound: f64 },
}
