//! Penalized Langevin and Hamiltonian Monte Carlo for targets supported on
//! convex bodies.
//!
//! The constrained target `π ∝ e^{-f}` on a convex body `C` is replaced by
//! the penalized target `π_δ ∝ exp(-f - S/δ)` on all of `R^d`, where the
//! penalty `S` vanishes exactly on `C`. The crate provides
//!
//! * [`geometry`]: bodies, projections and penalties with exact gradients,
//! * [`potentials`]: target potentials and mini-batch gradient oracles,
//! * [`samplers`]: overdamped (PLD / PSGLD) and underdamped (PHMC / PSGHMC) chains,
//! * [`theory`]: constants, step-size schedules and distance bounds,
//! * [`diagnostics`]: empirical Wasserstein / TV distances and constraint statistics,
//! * [`data`]: regression datasets, CSV ingestion and reference samplers,
//! * [`experiment`]: the JSON-configured experiment runner behind the CLI.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod linalg;
pub mod potentials;
pub mod quadrature;
pub mod rng;
pub mod samplers;
pub mod theory;

pub use error::{Error, Result};
