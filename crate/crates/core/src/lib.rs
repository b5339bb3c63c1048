//! Quantized reverse probing.
//!
//! A frozen representation is vector-quantized with K-means; a linear probe is
//! then trained to predict the cluster of each sample from its binary concept
//! annotations. The cluster entropy minus the probe's held-out cross-entropy is
//! a lower bound on the mutual information between clusters and concepts, and
//! serves as an interpretability score for the representation.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod probe;
pub mod quantize;
pub mod seed;
pub mod synth;

pub use data::{ConceptGroup, ConceptMatrix, FeatureMatrix, SplitIndices, StandardizationStats};
pub use error::{Error, Result};
pub use metrics::{InfoEstimate, NmiNormalizer, ProbeReport};
pub use probe::{ProbeConfig, ReverseProbe};
pub use quantize::{ClusterAssignment, KmeansConfig, Quantizer};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
