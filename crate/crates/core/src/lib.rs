//! Bayesian item response models for forensic examiner proficiency studies.

pub mod data;
pub mod engine;
pub mod error;
pub mod math;
pub mod models;
pub mod answer_key;
pub mod evaluation;
pub mod simulate;
pub mod fit;
pub mod cli;

pub use error::{Error, Result};
