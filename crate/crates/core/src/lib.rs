//! Semantic FPN toolkit: a small differentiable runtime for the FPN semantic
//! branch, the joint instance/semantic loss, panoptic fusion, panoptic and
//! semantic metrics, an analytic cost profiler for backbone variants, and the
//! panoptic annotation file formats.

pub mod error;
pub mod fusion;
pub mod graph;
pub mod kvconfig;
pub mod losses;
pub mod metrics;
pub mod ops;
pub mod panoptic;
pub mod panoptic_io;
pub mod profiler;
pub mod oracle;
pub mod params;
pub mod rle;
pub mod rng;
pub mod selfcheck;
pub mod semantic_branch;
pub mod tensor;
pub mod train_demo;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use panoptic::{CategoryMeta, CategoryTable, PanopticMap, Segment};
pub use rng::Rng;
pub use semantic_branch::{Aggregation, BranchConfig, Fpn, PyramidLevels, SemanticBranch};
pub use tensor::{Shape, Tensor};
