//! Heavy-tail diagnostics for neural network weight spectra.
//!
//! The pipeline takes a weight matrix to its empirical spectral density
//! ([`spectra`]), fits a power law to the upper tail
//! ([`powerlaw`]), and turns the fitted KS distance into a heavy-tail
//! indicator using a Monte Carlo calibrated threshold ([`calibration`],
//! [`criterion`]). Supporting modules read and write data ([`ingest`],
//! [`report`]), generate synthetic inputs ([`synth`]) and check the
//! optimization-theory claims numerically ([`theory`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod criterion;
pub mod error;
pub mod ingest;
pub mod powerlaw;
pub mod report;
pub mod rng;
pub mod spectra;
pub mod synth;
pub mod theory;

pub use error::{Error, ErrorKind, Result};

/// Schema tag carried by every JSON document the toolkit emits.
pub const SCHEMA: &str = "ht-sentinel/v1";
