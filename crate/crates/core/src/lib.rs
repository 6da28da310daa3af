//! Scalable node classification via precomputed hop sequences.
//!
//! The pipeline decouples graph structure from training: a one-time
//! precompute turns every node's hierarchical neighborhood into an ordered
//! sequence of walk-count-weighted feature sums (one vector per hop), after
//! which nodes are independent samples and convolutional or attention
//! sequence heads train with plain mini-batches, at a per-epoch cost
//! independent of the edge count.
//!
//! Modules:
//! - [`graph`]: CSR graphs, edge-list ingestion, self-loops.
//! - [`data`]: features, labels, splits and their binary formats.
//! - [`precompute`]: the hop-sequence transform, chunked persistence, and
//!   the exact walk-count oracle used for verification.
//! - [`tensor`] / [`ops`]: minimal dense f64 tensors with hand-written
//!   forward/backward passes for exactly the operations the heads need.
//! - [`model`]: the Conv and Attn sequence heads over a shared
//!   per-position linear + normalization trunk.
//! - [`train`]: mini-batch training loop, metrics, early stopping.
//! - [`synth`]: synthetic graph/task generators for verification.
//! - [`timing`]: wall-clock scaling measurements (precompute vs epoch cost).

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod ops;
pub mod precompute;
pub mod synth;
pub mod tensor;
pub mod timing;
pub mod train;
pub mod util;

pub use data::{FeatureMatrix, LabelKind, LabelSet, NodeSplit};
pub use error::{Error, Result};
pub use graph::Graph;
pub use model::{HeadKind, Model, ModelConfig, TaskKind};
pub use precompute::{SequenceTensor, WalkCountMatrix};
pub use tensor::{AdamState, Parameter, Tensor};
pub use train::{Metrics, TrainConfig};
