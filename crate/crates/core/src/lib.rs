//! Stability-preserving reduced-order models with artificial latent variables.
//!
//! The model couples a latent state `z ∈ R^p` to observed variables
//! `x ∈ R^l` through a force `f(x)`; see [`model`] for the continuous form,
//! [`cell`] for the discrete recurrent cell, and [`bptt`] / [`training`] for
//! fitting it to time series.

pub mod bptt;
pub mod cell;
pub mod data;
pub mod datagen;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod forces;
pub mod io;
pub mod linalg;
pub mod model;
pub mod training;

pub use error::{Error, Result};
