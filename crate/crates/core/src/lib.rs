//! Reliability modelling for train journeys with transfers.
//!
//! The crate learns two models from historical stop events and composes them:
//!
//! - [`gbt`]: gradient-boosted trees predicting the probability of missing a
//!   transfer, NA-aware and monotone in planned transfer time.
//! - [`delay`]: a Bayesian regression with a two-component lognormal mixture
//!   likelihood for arrival delays, fitted by MCMC.
//! - [`journey`]: a Monte Carlo sampler that walks a planned journey,
//!   draws transfer outcomes, re-plans after misses and finally draws the
//!   arrival delay of the last train used.
//!
//! [`metrics`] turns model outputs and journey samples into AUROC,
//! calibration tables, reliability ratings and buffer times, and [`synth`]
//! generates ground-truth corpora for validation.

pub mod config;
pub mod data;
pub mod delay;
pub mod error;
pub mod gbt;
pub mod gtfs;
pub mod journey;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod time;
pub mod transfers;

pub use error::{Error, Result};
