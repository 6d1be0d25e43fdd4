//! Yield-curve forecasting with dynamic Nelson–Siegel factors and
//! SPDE-based Gaussian-field residuals.

pub mod dataio;
pub mod diagnostics;
pub mod error;
pub mod fem;
pub mod forecast;
pub mod gmrf;
pub mod inference;
pub mod nsbasis;
pub mod portfolio;
pub mod scoring;
pub mod simulate;
pub mod spdefields;
pub mod stats;

pub use error::{Error, Result};
