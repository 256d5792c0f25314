//! End-to-end runs: configuration, artifacts and parameter sweeps.

mod config;
mod run;
mod sweep;

pub use config::{IoConfig, RunConfig};
pub use run::{
    build_graph_stage, dataset_stage, predict_stage, run_pipeline, run_stages, write_artifacts,
    write_loss_trace, Method, PipelineOutput, ARTIFACTS,
};
pub use sweep::{derive_seed, run_sweep, write_sweep_csv, SweepRow, SweepSpec, ABLATIONS};

use crate::data::DataError;
use crate::eval::EvalError;
use crate::graph::GraphError;
use crate::model::ModelError;

/// Failure of one pipeline stage; the message starts with the stage name.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("generate: {0}")]
    Generate(#[source] DataError),
    #[error("build-graph: {0}")]
    BuildGraph(#[source] GraphError),
    #[error("train: {0}")]
    Train(#[source] ModelError),
    #[error("predict: {0}")]
    Predict(#[source] EvalError),
    #[error("evaluate: {0}")]
    Evaluate(#[source] EvalError),
    #[error("{stage}: {path}: {source}")]
    Io {
        stage: &'static str,
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub fn stage(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Generate(_) => "generate",
            Self::BuildGraph(_) => "build-graph",
            Self::Train(_) => "train",
            Self::Predict(_) => "predict",
            Self::Evaluate(_) => "evaluate",
            Self::Io { stage, .. } => stage,
        }
    }
}
