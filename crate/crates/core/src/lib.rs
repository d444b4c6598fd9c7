//! Dynamic equivalents of active distribution networks.
//!
//! The crate simulates a low-voltage feeder behind a synchronous-machine
//! transmission equivalent, runs Monte Carlo campaigns over uncertain device
//! parameters, and trains point and quantile forecasters of the interface
//! currents from voltage and frequency measurements.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod devices;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod learners;
pub mod netmodel;
pub mod pipeline;
pub mod scenario;
pub mod simulator;

pub use error::{Error, Result};
