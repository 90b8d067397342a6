//! Neural closure models for coarsely discretised 1-D periodic PDEs.
//!
//! The crate covers the finite-volume Burgers and Kuramoto-Sivashinsky
//! discretisations, a pseudospectral Kuramoto-Sivashinsky model, two fixed
//! convolutional closure networks, explicit and exponential time integrators
//! with reverse-mode derivatives, three training procedures (derivative fitting,
//! differentiation through the solver, and the continuous adjoint), evaluation
//! metrics, and reference-data generation.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the common choices. Files on disk always hold binary64.

// `!(x > 0.0)` rejects NaN along with the out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod datagen;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod rhs;
pub mod scalar;
pub mod solvers;
pub mod spectral;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Grid64 = grid::PeriodicGrid<f64>;
pub type Grid32 = grid::PeriodicGrid<f32>;
pub type Trajectory64 = grid::Trajectory<f64>;
pub type Trajectory32 = grid::Trajectory<f32>;
pub type Dataset64 = grid::Dataset<f64>;
pub type Dataset32 = grid::Dataset<f32>;
pub type Params64 = nn::CnnParams<f64>;
pub type Params32 = nn::CnnParams<f32>;
