//! Momentum-contrast embeddings of binary functions.
//!
//! Functions arrive as attributed control-flow graphs. Instructions are
//! normalized and embedded, blocks are encoded by a strand CNN, and a graph
//! encoder produces a unit-norm 256-dimensional function embedding. Training
//! uses a query encoder, a momentum-updated key encoder and a queue of key
//! embeddings as negatives.

pub mod block_encoder;
pub mod cli;
pub mod container;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph_encoder;
pub mod index;
pub mod model;
pub mod nn;
pub mod normalizer;
pub mod params;
pub mod token_embed;
pub mod trainer;

pub use error::{Error, Result};
