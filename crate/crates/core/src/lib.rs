//! Weighted Gehan-type rank estimation for clustered, right-censored
//! accelerated failure time models.
//!
//! The pieces, bottom up: [`stats`] (Φ, χ², ranks, samplers, RNG
//! streams), [`data`] (validated clustered datasets and CSV I/O),
//! [`weights`] (cluster and GR covariate weights), [`estimator`] (the
//! estimating functions and solvers), [`variance`] (sandwich covariance
//! and the Γ iteration), [`pipeline`] (the two-stage fits) and
//! [`simulation`] (the Monte Carlo harness).

pub mod cli;
pub mod data;
pub mod error;
pub mod estimator;
pub mod optim;
pub mod pipeline;
pub mod simulation;
pub mod stats;
pub mod variance;
pub mod verify;
pub mod weights;

pub use data::{ClusteredDataset, CsvSchema, Observation, Parameters, RawDataset, Residuals};
pub use error::{AftError, Result};
pub use estimator::{EstimatorConfig, FitResult, Variant};
pub use pipeline::{fit_all, fit_variant, AllFits, VariantFit};
pub use variance::{iterate_fit, SandwichResult, XiForm};
pub use weights::{WeightScheme, WeightSet};
