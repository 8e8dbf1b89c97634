//! Multivariate majorization and multidimensional ironing on product type grids.
//!
//! The crate is organized bottom-up:
//!
//! - [`grid`]: type spaces, grid functions, discrete differences, lower sets;
//! - [`majorize`]: majorization tests, minimality ranges, T-transform decompositions;
//! - [`iron`]: the ironing solver, its partition, and the optimal decision;
//! - [`access`]: coordinate-wise ironing with access rights;
//! - [`mech`]: goods and contracting mechanisms with transfers and IC/IR checks;
//! - [`continuum`]: dyadic discretization of continuous problems;
//! - [`sosd`]: multivariate stochastic dominance.

pub mod access;
pub mod continuum;
pub mod error;
pub mod grid;
pub mod iron;
mod lp;
pub mod majorize;
pub mod mech;
mod pava;
pub mod sosd;

pub use error::{Error, Result};
pub use grid::{GridFunction, LowerSet, Side, TypeGrid};
pub use iron::{iron, CostModel, IronOptions, IroningResult, Partition, Phi, TransferField};
pub use majorize::{majorizes, MajorizationCertificate, Method};

