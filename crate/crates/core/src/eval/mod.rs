//! Label pooling, clustering baselines and evaluation.

mod baselines;
mod metrics;
mod pool;

pub use baselines::{cluster_voting, pair_clustering};
pub use metrics::{
    evaluate, macro_f1, render_report, reports_to_json, write_curves, BinMetrics, ClassMetrics,
    EvalReport, EvaluationConfig,
};
pub use pool::{
    argmax_class, cosine, load_predictions, pool_labels, read_predictions, save_predictions,
    write_predictions, InferenceConfig, Prediction, Similarity,
};

use crate::data::DataError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("inputs do not match: {0}")]
    Mismatch(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
