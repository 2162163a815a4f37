//! Knowledge-graph-to-text generation with multi-graph convolutional
//! encoders.
//!
//! The pipeline: a [`kg::KnowledgeGraph`] yields an entity-centric triple set,
//! [`graph::to_multigraph`] turns it into six labeled graphs, the
//! [`encoder`] stacks per-graph convolutions with an aggregation layer, and
//! the attention [`decoder`] produces text. [`training`] ties these together
//! with a tape-based autodiff engine from [`numerics`].

pub mod decoder;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod kg;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod preprocess;
pub mod training;

pub use error::{Error, Result};
