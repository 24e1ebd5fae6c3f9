//! Spectral simulation of discretized stochastic Burgers-type systems and of
//! their Itô-corrected continuum limits.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod correction;
pub mod error;
pub mod estimators;
pub mod integrator;
pub mod noise;
pub mod nonlin;
pub mod quadrature;
pub mod schemes;
pub mod spectral;

pub use error::{Error, Result};
