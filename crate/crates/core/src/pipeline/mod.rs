//! Run directories, configuration and the end-to-end commands.

mod config;
mod manifest;
mod stages;

pub use config::{resolve, Overrides, PipelineConfig};
pub use manifest::{sha256_file, sha256_hex, Manifest, MANIFEST_FILE};
pub use stages::{
    predict_record, prediction_tsv, render_plots, scenario_id, BuildSummary, PredictorChoice, Run,
    SimulateSummary, CONFIG_FILE, DATASET_FILE, MODEL_FILE, REPORT_FILE, STATE_FILE,
};
