//! Generalized skew-symmetric density deconvolution.

pub mod bandwidth;
pub mod cli;
pub mod distributions;
pub mod error;
pub mod estimator;
pub mod gmm;
pub mod gss;
pub mod harness;
pub mod ingestion;
pub mod optimize;
pub mod quadrature;
pub mod selection;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
