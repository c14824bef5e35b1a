//! Bayesian estimation of bundle-choice demand with factor-augmented errors.
//!
//! The model: individuals repeatedly choose a bundle of goods (any subset,
//! including none) and utility is additive in good-level terms, pairwise
//! bundle effects, and a correlated error with a latent factor structure.
//! Endogenous regressors (prices) get first-stage equations whose errors
//! load on the same factors, which is what identifies the price effect.
//!
//! Layout:
//! - [`model`]: choice sets, panel data, parameter sharing and utilities
//! - [`kernels`]: low-level sampling kernels (truncated normal, GIG, ...)
//! - [`spec`]: model variants, factor counts, priors, sampler settings
//! - [`vectorize`]: stacked design operators and error covariances
//! - [`dgp`]: synthetic data generation and ground-truth elasticities
//! - [`mcmc`]: the Gibbs sampler
//! - [`predict`]: posterior choice shares and price elasticities
//! - [`io`] / [`config`]: file formats and run configuration

pub mod config;
pub mod dgp;
pub mod error;
pub mod io;
pub mod kernels;
pub mod mcmc;
pub mod model;
pub mod predict;
pub mod spec;
pub mod vectorize;

pub use error::{Error, Result};
