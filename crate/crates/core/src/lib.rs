//! Co-adapted couplings of Brownian motion together with its Lévy
//! stochastic areas.
//!
//! The crate has two simulation engines. [`sde`] evolves the full coupled
//! pair in `n` dimensions; [`reduced`] evolves the planar log-scale
//! diffusion `(K, H)` in intrinsic time and accumulates the coupling-time
//! functional. [`dufresne`] and [`stats`] hold the limiting laws and the
//! tests used to compare simulations against them, [`kolmogorov`] couples a
//! Brownian motion with its time integral, and [`harness`] runs seeded
//! replica experiments and persists their records.

// `!(x > 0.0)` is used on purpose so that NaN fails every range check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controls;
pub mod dufresne;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod kolmogorov;
pub mod reduced;
pub mod rng;
pub mod sde;
pub mod stats;

pub use error::{CouplingError, Result};
