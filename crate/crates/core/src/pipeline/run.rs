use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{PipelineError, RunConfig};
use crate::data::{dataset_stats, generate_synthetic, load_dataset, save_dataset, GpllDataset};
use crate::eval::{
    cluster_voting, evaluate, pair_clustering, pool_labels, render_report, reports_to_json,
    save_predictions, write_curves, EvalReport, InferenceConfig, Prediction, Similarity,
};
use crate::graph::{build_dual_graph, save_graph, DualBipartiteGraph, GraphBuildConfig};
use crate::model::{
    encode, save_params, save_ratings, train, ModelConfig, ModelParams, PreparedGraph,
    RatingMatrix, TrainOutput,
};

/// File names written into the output directory.
pub const ARTIFACTS: [&str; 12] = [
    "config.toml",
    "dataset.jsonl",
    "graph.jsonl",
    "params.json",
    "ratings.jsonl",
    "loss_trace.csv",
    "predictions.jsonl",
    "predictions_cluster_voting.jsonl",
    "predictions_pair_clustering.jsonl",
    "report.txt",
    "report.json",
    "curves.csv",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    DbGae,
    ClusterVoting,
    PairClustering,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::DbGae, Method::ClusterVoting, Method::PairClustering];

    pub fn name(self) -> &'static str {
        match self {
            Method::DbGae => "db_gae",
            Method::ClusterVoting => "cluster_voting",
            Method::PairClustering => "pair_clustering",
        }
    }

    fn predictions_file(self) -> &'static str {
        match self {
            Method::DbGae => "predictions.jsonl",
            Method::ClusterVoting => "predictions_cluster_voting.jsonl",
            Method::PairClustering => "predictions_pair_clustering.jsonl",
        }
    }
}

pub struct PipelineOutput {
    /// The resolved configuration the run used.
    pub config: RunConfig,
    pub dataset: GpllDataset,
    pub graph: DualBipartiteGraph,
    pub train: TrainOutput,
    pub predictions: Vec<(Method, Vec<Prediction>)>,
    /// One report per method, in [`Method::ALL`] order.
    pub reports: Vec<EvalReport>,
    pub report_text: String,
}

impl PipelineOutput {
    pub fn report(&self, method: Method) -> &EvalReport {
        &self.reports[Method::ALL
            .iter()
            .position(|&m| m == method)
            .expect("known method")]
    }
}

/// Loads the configured dataset or generates one.
pub fn dataset_stage(config: &RunConfig) -> Result<GpllDataset, PipelineError> {
    match &config.io.dataset {
        Some(path) => load_dataset(path).map_err(PipelineError::Generate),
        None => generate_synthetic(&config.generator).map_err(PipelineError::Generate),
    }
}

pub fn build_graph_stage(
    ds: &GpllDataset,
    config: &GraphBuildConfig,
) -> Result<DualBipartiteGraph, PipelineError> {
    config.validate().map_err(PipelineError::BuildGraph)?;
    Ok(build_dual_graph(ds, config))
}

/// Pools trained ratings into predictions. Embedding similarity needs the
/// trained parameters.
pub fn predict_stage(
    ratings: &RatingMatrix,
    graph: &DualBipartiteGraph,
    inference: &InferenceConfig,
    trained: Option<(&ModelParams, &ModelConfig)>,
) -> Result<Vec<Prediction>, PipelineError> {
    let embeddings = match inference.similarity {
        Similarity::Features => None,
        Similarity::Embeddings => {
            let (params, model) = trained.ok_or_else(|| {
                PipelineError::Config("embedding similarity needs trained parameters".into())
            })?;
            let g = PreparedGraph::new(graph, model).map_err(PipelineError::Train)?;
            let out = encode(params, &g).map_err(PipelineError::Train)?;
            Some(
                (0..out.u.rows())
                    .map(|i| out.u.row(i).to_vec())
                    .collect::<Vec<_>>(),
            )
        }
    };
    pool_labels(ratings, graph, inference.threshold, embeddings.as_deref())
        .map_err(PipelineError::Predict)
}

/// Runs every stage in memory.
pub fn run_stages(config: &RunConfig) -> Result<PipelineOutput, PipelineError> {
    let config = config.resolved();
    config.validate()?;
    let dataset = dataset_stage(&config)?;
    let graph = build_graph_stage(&dataset, &config.graph)?;
    let trained = train(&graph, &config.model).map_err(PipelineError::Train)?;
    let ours = predict_stage(
        &trained.ratings,
        &graph,
        &config.inference,
        Some((&trained.params, &config.model)),
    )?;
    let (eps, min_pts) = (config.graph.eps, config.graph.min_pts);
    let predictions = vec![
        (Method::DbGae, ours),
        (
            Method::ClusterVoting,
            cluster_voting(&dataset, eps, min_pts),
        ),
        (
            Method::PairClustering,
            pair_clustering(&dataset, eps, min_pts),
        ),
    ];
    let reports = predictions
        .iter()
        .map(|(m, p)| evaluate(m.name(), p, &dataset, &config.evaluation))
        .collect::<Result<Vec<_>, _>>()
        .map_err(PipelineError::Evaluate)?;
    let report_text = report_text(&dataset, &reports);
    Ok(PipelineOutput {
        config,
        dataset,
        graph,
        train: trained,
        predictions,
        reports,
        report_text,
    })
}

fn report_text(ds: &GpllDataset, reports: &[EvalReport]) -> String {
    let s = dataset_stats(ds);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "dataset: {} groups, {} instances, {} label occurrences, {} classes",
        s.num_groups, s.num_instances, s.num_labels, s.num_classes
    );
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let _ = writeln!(
        out,
        "null fraction {}, cross fraction {}, mean ambiguity ratio {}\n",
        fmt(s.null_fraction),
        fmt(s.cross_fraction),
        fmt(s.mean_ambiguity)
    );
    out.push_str(&render_report(reports));
    out
}

/// Runs every stage and writes all artifacts into `config.io.out_dir`.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutput, PipelineError> {
    let out = run_stages(config)?;
    write_artifacts(&out, &out.config.io.out_dir)?;
    Ok(out)
}

fn io_err(stage: &'static str, path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.display().to_string();
    move |source| PipelineError::Io {
        stage,
        path,
        source,
    }
}

fn create(stage: &'static str, path: &Path) -> Result<BufWriter<File>, PipelineError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(io_err(stage, path))
}

pub fn write_loss_trace<W: Write>(trace: &[f64], mut w: W) -> std::io::Result<()> {
    writeln!(w, "epoch,loss")?;
    for (e, l) in trace.iter().enumerate() {
        writeln!(w, "{e},{l}")?;
    }
    w.flush()
}

pub fn write_artifacts(out: &PipelineOutput, dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(io_err("config", dir))?;
    let path = |name: &str| dir.join(name);

    let p = path("config.toml");
    fs::write(&p, out.config.to_toml()).map_err(io_err("config", &p))?;
    save_dataset(&out.dataset, &path("dataset.jsonl")).map_err(PipelineError::Generate)?;
    save_graph(&out.graph, &path("graph.jsonl")).map_err(PipelineError::BuildGraph)?;
    save_params(&path("params.json"), &out.train.params, &out.config.model)
        .map_err(PipelineError::Train)?;
    save_ratings(&out.train.ratings, &path("ratings.jsonl")).map_err(PipelineError::Train)?;
    let p = path("loss_trace.csv");
    write_loss_trace(&out.train.loss_trace, create("train", &p)?).map_err(io_err("train", &p))?;
    for (m, preds) in &out.predictions {
        save_predictions(preds, &path(m.predictions_file())).map_err(PipelineError::Predict)?;
    }

    let p = path("report.txt");
    fs::write(&p, &out.report_text).map_err(io_err("evaluate", &p))?;
    let p = path("report.json");
    let json = reports_to_json(&out.reports).map_err(|e| PipelineError::Io {
        stage: "evaluate",
        path: p.display().to_string(),
        source: e.into(),
    })?;
    fs::write(&p, json).map_err(io_err("evaluate", &p))?;
    let p = path("curves.csv");
    write_curves(&out.reports, create("evaluate", &p)?).map_err(|e| PipelineError::Io {
        stage: "evaluate",
        path: p.display().to_string(),
        source: e.into(),
    })?;
    Ok(())
}
