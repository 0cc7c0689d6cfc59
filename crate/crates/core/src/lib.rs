//! Two-stage local citation recommendation.
//!
//! A non-learnable profiler retrieves candidates from citation-enriched
//! document vectors; a small gated network reranks them using rank-derived
//! priors.

pub mod corpus;
pub mod davinci;
pub mod nn;
pub mod embedding;
pub mod error;
pub mod fixture;
pub mod metrics;
pub mod pipeline;
pub mod prior;
pub mod profiler;
pub mod split;

pub use error::{Error, Result};
