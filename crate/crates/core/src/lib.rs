//! Quasi-copula models for correlated non-Gaussian grouped data.
//!
//! The joint law of a unit multiplies independent GLM base densities by a
//! quadratic form in the standardized residuals. The crate provides the
//! density and its moments, marginal and conditional laws, a sequential
//! sampler, maximum-likelihood fitting and a small simulation harness.

pub mod covariance;
pub mod error;
pub mod estimator;
pub mod glm_base;
pub mod oracle;
pub mod qc_model;
pub mod sampler;
pub mod simharness;

pub use covariance::{cs_rho_bounds, CovKind, CovarianceSpec, OmegaTemplate, VcBasis};
pub use error::{QcError, Result};
pub use estimator::{fit, lrt, FitConfig, FitResult};
pub use glm_base::{Family, Law, Link};
pub use qc_model::{block_diagonal_design, QcDensity, QuasiCopulaModel, SamplingUnit};
