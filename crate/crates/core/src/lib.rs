//! Review helpfulness prediction and evaluation.
//!
//! The pipeline: [`corpus`] ingests and labels reviews, [`splitter`] makes
//! product-wise splits, [`features`] and [`forest`] form the lexicon baseline,
//! [`embed_io`] and [`head`] train regressor heads on precomputed text
//! embeddings, [`metrics`] and [`stats`] score and compare models, and
//! [`runner`] drives whole experiments.

pub mod corpus;
pub mod embed_io;
pub mod features;
pub mod forest;
pub mod head;
pub mod metrics;
pub mod rng;
pub mod runner;
pub mod splitter;
pub mod stats;
