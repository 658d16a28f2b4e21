//! Workbench for codebook-based detection of intellectual humility (IH) and
//! intellectual arrogance (IA) in discussion threads.
//!
//! The crate covers corpus sampling, the label codebook, agreement and scoring
//! metrics, prompt rendering, a record/replay LLM gateway, prompt boosters,
//! a classical TF-IDF/BoW logistic-regression baseline, experiment running and
//! reporting, and the HTTP annotation service.

pub mod boosters;
pub mod classical;
pub mod codebook;
pub mod corpus;
pub mod error;
pub mod gateway;
pub mod metrics;
pub mod prompts;
pub mod rng;
pub mod runner;
pub mod service;

pub use codebook::{Codebook, CodebookLabel, Coarse, CoarseClass, Polarity};
pub use error::{Error, Result};
