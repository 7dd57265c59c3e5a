//! Unsupervised discovery of acoustic patterns on a grid of temporal and
//! phonetic granularities, with context-consistency relabeling and
//! query-by-example retrieval over the discovered pattern sets.

pub mod corpus;
pub mod eval;
pub mod discovery;
pub mod error;
pub mod grid;
pub mod hmm;
pub mod relabel;
pub mod retrieval;
pub mod similarity;
pub mod synth;

pub use error::{Error, Result};
