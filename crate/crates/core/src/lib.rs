//! Acoustic-liner impedance optimization on a 2D duct: finite-element
//! Helmholtz solver, POD reduced-order modeling, and smoothed-CVaR
//! stochastic optimization with adjoint gradients and BFGS.

pub mod assembly;
pub mod bfgs;
pub mod commands;
pub mod config;
pub mod cvar;
pub mod deterministic;
pub mod error;
pub mod fom;
pub mod io;
pub mod mesh;
pub mod pod;
pub mod rom;
pub mod sparse;

pub use error::{Error, Result};
