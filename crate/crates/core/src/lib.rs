//! Shared decodable concept discovery.
//!
//! Per-participant linear decoders map voxel responses into an embedding
//! space; the rows of their weight matrices are pooled across participants
//! and clustered with a cross-participant DBSCAN variant; each cluster is
//! then interpreted through the held-out items nearest to its centroid.

pub mod datamodel;
pub mod decoder;
pub mod clustering;
pub mod concepts;
pub mod error;
pub mod evaluation;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
