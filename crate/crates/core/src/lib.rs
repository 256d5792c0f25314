//! Group-level partial label learning with a dual bipartite graph
//! autoencoder.
//!
//! A dataset is a list of groups, each holding unlabeled instances and a
//! candidate label set. [`graph`] turns it into a within-group graph plus
//! cross-group links between similar instances, [`model`] refines every
//! link weight with an attention graph autoencoder built on the small
//! reverse-mode engine in [`numerics`], and [`eval`] pools refined weights
//! into one class (or null) per instance and scores the result.
//! [`pipeline`] chains the stages from a single configuration.

pub mod data;
pub mod eval;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod pipeline;

pub use data::{Class, DataError, GeneratorConfig, GpllDataset, Group, Instance, LabelOccurrence};
pub use eval::{EvalError, EvalReport, EvaluationConfig, InferenceConfig, Prediction};
pub use graph::{DualBipartiteGraph, GraphBuildConfig, GraphError};
pub use model::{ModelConfig, ModelError, ModelParams, RatingMatrix, TrainOutput};
pub use numerics::{NumericsError, Tensor};
pub use pipeline::{Method, PipelineError, PipelineOutput, RunConfig};
