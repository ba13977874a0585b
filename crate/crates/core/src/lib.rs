//! Corridor travel-time distribution pipeline: simulation, graph
//! construction, the attention models, training and evaluation.

pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod pipeline;
pub mod sim;
pub mod train;

pub use error::{Error, ErrorKind, Result};
