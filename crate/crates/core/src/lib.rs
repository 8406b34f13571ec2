//! UNICON-style consumer segmentation at desk scale.
//!
//! The pipeline learns consumer representations from interaction sequences
//! with a causal-attention encoder, clusters them into data-driven style
//! segments, expands a rule-defined core segment into a lookalike audience
//! with an F2-tuned classifier threshold, and blends segment items into
//! recommendations.

pub mod datagen;
pub mod dataprep;
pub mod domain;
pub mod encoder;
pub mod error;
pub mod io;
pub mod lookalike;
pub mod metrics;
pub mod recsys;
pub mod seed;
pub mod segmentation;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
