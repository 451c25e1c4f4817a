//! Failure-aware mixture-of-experts log anomaly detection.
//!
//! The offline setup stage parses a labeled corpus into templates, draws an
//! at-most-K-per-template labeled sample, certifies a failure-domain
//! partition, trains a gate/selector router plus per-domain experts and
//! calibrates their thresholds. The result is a [`inference::ModelBundle`],
//! the only input of the online stage, which labels every line with a binary
//! decision and, when routed to a failure domain, the domain's name.
//!
//! With the default `parallel` feature the data-parallel loops (featurization,
//! expert training, stream inference, sweeps) run on rayon; disabling it gives
//! a sequential build with byte-identical outputs.

pub mod backbone;
pub mod calibration;
pub mod corpus;
pub mod dataset;
pub mod drain;
pub mod error;
pub mod eval;
pub mod experts;
pub mod inference;
pub mod kshot;
pub mod par;
pub mod partition;
pub mod pipeline;
pub mod router;
pub mod seed;
pub mod synthetic;
pub mod tfidf;

pub use error::{Error, Result};
