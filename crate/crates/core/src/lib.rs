//! Simulation and analysis of disordered quantum trajectories.
//!
//! A disordered Kraus measurement is a Kraus set `{V_{a;ω}}` that depends on
//! a point `ω` of an ergodic, invertible dynamical system `(Ω, θ)`; the
//! `n`-th measurement of a trajectory uses the set at `θⁿ(ω)`. This crate
//! provides:
//!
//! - [`matrix`], [`state`], [`random`]: the dense complex kernel, states and
//!   Kraus sets, Haar sampling.
//! - [`disorder`]: seeded, index-addressable shift dynamics.
//! - [`ensemble`]: disordered ensembles, word operators, coarse-graining and
//!   the built-in examples.
//! - [`trajectory`]: Born-rule sampling, exact outcome-tree enumeration and
//!   the moment-submartingale diagnostics.
//! - [`darkness`]: the darkness defect of a projection and the search for
//!   gray/dark projections on the Stiefel manifold.

pub mod darkness;
pub mod disorder;
pub mod ensemble;
pub mod error;
pub mod matrix;
pub mod random;
pub mod state;
pub mod stats;
pub mod trajectory;

pub use disorder::{DisorderModel, DisorderPoint};
pub use ensemble::{DisorderedEnsemble, OutcomeWord};
pub use error::{Error, Result};
pub use matrix::{ComplexMatrix, C64};
pub use state::{
    apply_measurement, purity_moment, trace_distance, validate_kraus, DensityMatrix, KrausSet, Projection,
};
