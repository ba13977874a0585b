//! Graph representations, travel-time targets and datasets.

mod build;
mod dataset;
mod matrix;
mod target;

pub use build::{
    adjacency, apply_mask, build_dynamic_graph, build_static_graph, corridor_edges, edge_features,
    mask_matrix, masked_columns, DrvSelection, DynamicGraph, Edge, GraphConfig, InfSource,
    StaticGraph, DYNAMIC_COUNT_OFFSET, DYNAMIC_NODE_DIM, MASKED_PHASES, STATIC_NODE_DIM,
};
pub use dataset::{build_record, Covariates, Dataset, DatasetHeader, DatasetRecord, DATASET_SCHEMA_VERSION};
pub use matrix::Matrix;
pub use target::{
    bin_center, discretize_pdf, fit_normal_pdf, normal_density, DirectionTarget, NormalFit,
    TravelTimeTarget, BIN_WIDTH, PDF_BINS, SIGMA_FLOOR,
};
