//! Evidential multi-hop graph learning.
//!
//! Node features are propagated over a normalised adjacency for several
//! hops, a shared evidence head turns every hop into Dirichlet evidence, and
//! the hops are combined by cumulative belief fusion into one subjective
//! opinion per node whose uncertainty mass is reported with each prediction.

pub mod analysis;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod graph;
pub mod model;
pub mod rng;
pub mod special;
pub mod subjective_logic;
pub mod train;

pub use error::{Error, Result};
