//! Estimation of population weights in three-coordinate nonparametric mixtures
//! through histogram projections of the emission densities.
//!
//! The pipeline: draw or load observations in `[0,1]^3` ([`scenario`]), bin
//! them on a [`Partition`], maximize the binned likelihood with EM ([`em`]),
//! compute exact efficient information ([`fisher`]) and pick the partition by
//! block cross-validation ([`modelsel`]). [`risklab`] drives Monte Carlo
//! experiments on top of these pieces.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dist;
pub mod em;
pub mod error;
pub mod fisher;
pub mod io;
pub mod model;
pub mod modelsel;
pub mod partition;
pub mod risklab;
pub mod rng;
pub mod scenario;

pub use dist::EmissionDistribution;
pub use em::{em_fit, em_from_init, limiting_mle, saturated_maximizer, EmConfig, EmResult};
pub use error::{Error, Result};
pub use model::{bin_sample, tk_distance, BinnedSample, Cell, Metric, MixtureParams};
pub use partition::Partition;
pub use scenario::{Observation, TrueModel};
