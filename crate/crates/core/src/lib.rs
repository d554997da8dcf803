//! Compressed and multiplexed categorical embeddings.
//!
//! The crate bundles the embedding representations in [`tables`] (including
//! Unified Embedding and the multiplexed variants of every baseline), the
//! signed feature-hashing estimator in [`sketch`], a small trainable click
//! model with hand-written backpropagation in [`nn`], the gradient
//! decomposition probes in [`analysis`], and the ingestion, metric and
//! hashing plumbing they share.

pub mod analysis;
pub mod data;
pub mod hashing;
pub mod kv;
pub mod metrics;
pub mod nn;
pub mod sketch;
pub mod tables;
