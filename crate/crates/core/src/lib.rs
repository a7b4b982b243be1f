//! Reaction-time modeling along the bridge between Generalized Linear Mixed
//! Models and one-barrier diffusion processes.
//!
//! Fit conditional IG or Gamma GLMMs to per-response reaction times, map the
//! fitted marginal moments back to a diffusion (start point and drift),
//! simulate first-hitting times from it, and check the round trip with
//! goodness-of-fit diagnostics and response-weighted mixtures.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diffusion;
pub mod distributions;
pub mod error;
pub mod glmm;
pub mod gof;
pub mod ingest;
pub mod optim;
pub mod reconstruction;
pub mod responses;
pub mod rng;

pub use distributions::{DistributionSpec, Family, GammaParams, IgParams};
pub use error::{Error, Result};
