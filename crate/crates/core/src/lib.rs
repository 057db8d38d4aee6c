//! Pathwise numerics for Volterra integral equations driven by fractional
//! Brownian motion with Hurst parameter `H > 1/2`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cli;
pub mod coefficients;
pub mod error;
pub mod fbm;
pub mod frac_calc;
pub mod grid;
pub mod malliavin;
pub mod quadrature;
mod singular;
pub mod volterra;

pub use coefficients::{CoefficientSet, Family, HypothesisConstants, VolterraCoefficients};
pub use error::{Error, Result};
pub use fbm::{FracParams, GaussianSampler};
pub use grid::{SampledPath, TimeGrid};
