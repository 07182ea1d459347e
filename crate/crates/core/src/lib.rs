//! Interval prediction of time series from generated scenarios.
//!
//! The crate is organised along the prediction pipeline:
//!
//! * [`data`] ingests, clips, normalizes and windowizes raw series;
//! * [`nn`] is a small deterministic neural-network engine (dense, GRU, Adam);
//! * [`ctsgan`] is the conditional time-series GAN with staged training and
//!   pattern-diverse scenario generation;
//! * [`intervals`] turns scenario sets into prediction intervals and
//!   multi-band unions;
//! * [`metrics`] evaluates coverage, width and their confidence levels;
//! * [`harness`] runs full experiments and writes reports.

pub mod ctsgan;
pub mod data;
pub mod error;
pub mod harness;
pub mod intervals;
pub mod metrics;
pub mod nn;
pub mod seed;

pub use error::{Error, Result};
