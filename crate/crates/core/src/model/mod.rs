//! Attention networks for imputation and travel-time moments.

mod batch;
mod gat;
mod init;
mod layers;
mod network;
mod normalize;
mod predict;

pub use batch::GraphBatch;
pub use gat::{with_self_loops, GatLayer, GatOutput, ATTENTION_SLOPE};
pub use layers::{EdgeMlp, Linear};
pub use network::{
    fuse, Fdgnn, ImputationNet, ModelConfig, Module, Prediction, RegressionNet, CHECKPOINT_SCHEMA_VERSION,
    REFERENCE_PARAMETERS,
};
pub use normalize::{Normalizer, Standardizer};
pub use predict::{ConstantPredictor, OraclePredictor, Predictor};

#[cfg(test)]
mod tests;
