//! Multi-metric re-ranking of candidate summaries with a mixture-of-experts
//! model.
//!
//! The pipeline: load candidate pools ([`candidates`]), score them
//! ([`metrics`]), turn each candidate into a feature vector ([`features`]),
//! train the re-ranker ([`moe`], [`training`]) and evaluate the selections
//! ([`evaluation`]).

pub mod candidates;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod metrics;
pub mod moe;
pub mod report;
pub mod synthetic;
pub mod textproc;
pub mod training;

pub use error::{Error, ErrorClass, Result};
