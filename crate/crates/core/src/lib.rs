//! Quadratic Wasserstein distances between gridded signals, computed by
//! solving the Monge-Ampère equation with a monotone finite-difference
//! scheme, plus the seismic preprocessing, synthetic panels and misfit
//! experiments built on top.

pub mod config;
pub mod error;
pub mod grid;
pub mod inversion;
pub mod linalg;
pub mod preprocess;
pub mod seismic;
pub mod solver;
pub mod transport1d;
pub mod transport2d;

pub use error::{Error, Result};
