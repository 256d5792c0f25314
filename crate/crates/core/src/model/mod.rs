//! Graph autoencoder over the dual bipartite graph.
//!
//! The encoder runs one attention-weighted graph convolution per head over
//! the within-group and cross-group paths, averages heads, and mixes the two
//! path summaries with a dense feature transform. The decoder classifies each
//! edge into a discrete likelihood level with one bilinear form per level.

mod encoder;
mod params;
mod ratings;
mod train;

use serde::{Deserialize, Serialize};

use crate::numerics::NumericsError;

pub use encoder::{decode, encode, trace, EncoderOutput, EncoderTrace, Path, PreparedGraph};
pub use params::{load_params, save_params, ModelDims, ModelParams, ParamsMeta};
pub use ratings::{
    load_ratings, quantize, read_ratings, reconstruction_loss, save_ratings, write_ratings,
    EdgeKind, RatingMatrix, ScoredEdge,
};
pub use train::{check_gradients, train, train_with, NormalizationAudit, TrainOutput};

#[cfg(test)]
mod tests;

/// Slope of the attention LeakyReLU.
pub const ATTENTION_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub gcn_hidden: usize,
    /// Width of the instance and label embeddings.
    pub dense_hidden: usize,
    /// Width of the attention projection.
    pub attention_hidden: usize,
    pub num_heads: usize,
    pub rating_levels: Vec<f64>,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub use_cross_links: bool,
    pub use_attention: bool,
    pub use_dual_paths: bool,
    /// Separate propagation matrices for the within and cross paths.
    pub per_path_weights: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            gcn_hidden: 1000,
            dense_hidden: 100,
            attention_hidden: 64,
            num_heads: 4,
            rating_levels: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            epochs: 1000,
            lr: 1e-3,
            seed: 0,
            use_cross_links: true,
            use_attention: true,
            use_dual_paths: true,
            per_path_weights: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |field: &'static str, reason: &str| {
            Err(ModelError::Config {
                field,
                reason: reason.to_string(),
            })
        };
        if self.gcn_hidden == 0 {
            return bad("gcn_hidden", "must be at least 1");
        }
        if self.dense_hidden == 0 {
            return bad("dense_hidden", "must be at least 1");
        }
        if self.attention_hidden == 0 {
            return bad("attention_hidden", "must be at least 1");
        }
        if self.num_heads == 0 {
            return bad("num_heads", "must be at least 1");
        }
        let r = &self.rating_levels;
        if r.len() < 2 {
            return bad("rating_levels", "need at least two levels");
        }
        if r.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return bad("rating_levels", "levels must lie in [0, 1]");
        }
        if r.windows(2).any(|w| w[0] >= w[1]) {
            return bad("rating_levels", "levels must be strictly increasing");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("graph has no observed within-group edges to train on")]
    NoObservedEdges,
    #[error("non-finite loss at epoch {epoch} (last finite loss: {})", last_finite.map_or("none".to_string(), |l| l.to_string()))]
    NonFiniteLoss {
        epoch: usize,
        last_finite: Option<f64>,
    },
    #[error("parameters do not fit this graph: {0}")]
    Mismatch(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
