pub mod config;
pub mod corpus;
pub mod schema_graph;
pub mod context_rep;
pub mod decay;
pub mod decoder;
pub mod encoder;
pub mod evaluator;
pub mod model;
pub mod pipeline;
pub mod reranker;
pub mod synth;

/// Bound of the uniform distribution every parameter is drawn from.
pub const INIT_BOUND: f64 = 0.1;
