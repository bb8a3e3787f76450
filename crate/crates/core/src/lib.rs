//! The contact process on finite graphs through its graphical construction:
//! graph builders for desert-oasis augmentations, a seeded Poisson field,
//! a coupled event-driven simulator with a time dual, an exact Markov-chain
//! oracle for small graphs, Monte Carlo estimators, and the level-by-level
//! graph constructor built on them.

pub mod error;
pub mod field;
pub mod graph;
pub mod oracle;
pub mod simulator;
pub mod stats;
pub mod estimators;
pub mod constructor;

pub use error::{Error, Result};
pub use field::{EventSource, GraphicalField, LazyField};
pub use graph::{AugmentationSpec, AugmentedLayout, RootedGraph, VertexTag};
pub use simulator::{Configuration, RunOptions, Trajectory};
