//! Fusion of nested-proximity multiplex network time series into one weighted
//! graph per time step, and detection of node pairs that stay in the same
//! community for longer than chance.

pub mod community;
pub mod error;
pub mod fusion;
pub mod graph;
pub mod ingest;
pub mod io;
pub mod pipeline;
pub mod simstats;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use graph::{
    active_nodes, coexist_restrict, cosine_similarity_matrix, fuse, normalized_degrees,
    FusionWeights, MultiplexSeries, MultiplexSnapshot, NodeRegistry, TimeLabel, WeightedGraph,
};
