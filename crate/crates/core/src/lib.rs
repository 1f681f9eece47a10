//! Fluctuation laboratory for transport in Kraichnan-type environments.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod correlation;
pub mod covariance;
pub mod error;
pub mod fluctuation;
pub mod grid;
pub mod harness;
pub mod io;
pub mod lagrangian;
pub mod limit_she;
pub mod noise;
pub mod parallel;
pub mod rng;
pub mod spde;
pub mod stats;

pub use error::{Error, Result};
