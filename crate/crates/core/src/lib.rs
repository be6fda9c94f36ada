//! Implicit sample extension (ISE) training laboratory.
//!
//! This crate implements clustering-based pseudo-label contrastive learning
//! over a learnable embedding table, extended with interpolated *support
//! samples*: synthetic embeddings generated between a sample's own cluster
//! centroid and a neighbouring one. Support samples participate in the
//! contrastive objective and in the momentum memory updates, which lets
//! nearby clusters exchange context and repairs the two classic pseudo-label
//! failure modes — one identity split into several clusters, and several
//! identities mixed into one.
//!
//! The crate is organized around the training pipeline:
//!
//! - [`embedding`]: fixed-dimension vectors, the embedding table, cosine kernels
//! - [`cluster`]: DBSCAN pseudo-label generation over cosine distance
//! - [`memory`]: cluster-centroid memory bank with momentum updates
//! - [`pli`]: progressive linear interpolation (support-sample generation)
//! - [`loss`]: contrastive losses with analytic gradients
//! - [`metrics`]: clustering-quality scores and retrieval evaluation (mAP/CMC)
//! - [`synth`]: identity-structured synthetic datasets and the text dump format
//! - [`trainer`]: the epoch loop tying everything together
//! - [`config`]: flat-namespaced run configuration with `--set` style overrides
//!
//! Everything is deterministic: a run is a pure function of its configuration
//! and seed, down to the serialized CSV bytes.

pub mod cluster;
pub mod config;
pub mod embedding;
pub mod error;
pub mod loss;
pub mod memory;
pub mod metrics;
pub mod pli;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
