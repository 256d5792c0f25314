use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gpll_core::data::{load_dataset, save_dataset, GpllDataset};
use gpll_core::eval::{
    cluster_voting, evaluate, load_predictions, pair_clustering, render_report, reports_to_json,
    save_predictions, write_curves, Prediction, Similarity,
};
use gpll_core::graph::{load_graph, save_graph};
use gpll_core::model::{
    load_params, load_ratings, save_params, save_ratings, train_with, ModelDims, ModelParams,
    PreparedGraph,
};
use gpll_core::pipeline::{
    build_graph_stage, dataset_stage, predict_stage, run_pipeline, run_sweep, write_loss_trace,
    write_sweep_csv, PipelineError, RunConfig, SweepSpec,
};

#[derive(Parser)]
#[command(
    name = "gpll",
    version,
    about = "Group-level partial label learning with a dual bipartite graph autoencoder"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set model.epochs=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts without an explicit path.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Generate {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the within- and cross-group graphs of a dataset.
    BuildGraph {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        min_pts: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Train the autoencoder on a graph.
    Train {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out_params: Option<PathBuf>,
        #[arg(long)]
        out_ratings: Option<PathBuf>,
        #[arg(long)]
        loss_trace: Option<PathBuf>,
        /// Continue from a saved checkpoint instead of a fresh initialisation.
        #[arg(long)]
        init_params: Option<PathBuf>,
    },
    /// Predict one class (or null) per instance.
    Predict {
        #[arg(long, value_enum, default_value_t = PredictMethod::DbGae)]
        method: PredictMethod,
        #[arg(long)]
        ratings: Option<PathBuf>,
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Needed by the clustering baselines.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Needed for embedding similarity.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions against the dataset's ground truth.
    Evaluate {
        /// Prediction file, optionally as NAME=PATH. Repeatable.
        #[arg(long = "pred", required = true)]
        pred: Vec<String>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_report: Option<PathBuf>,
        #[arg(long)]
        out_curves: Option<PathBuf>,
        /// Machine-readable report.
        #[arg(long)]
        out_json: Option<PathBuf>,
    },
    /// Run every stage and write all artifacts.
    Pipeline,
    /// Repeat the pipeline over values of one parameter.
    Sweep {
        /// Dotted config key, or `ablation`.
        #[arg(long, required_unless_present = "spec")]
        param: Option<String>,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        /// TOML file with `parameter`, `values` and `replicates`.
        #[arg(long, conflicts_with = "param")]
        spec: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictMethod {
    DbGae,
    ClusterVoting,
    PairClustering,
}

/// Error message of a failed command, prefixed with the stage name.
#[derive(Debug)]
struct Failure(String);

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self(e.to_string())
    }
}

fn fail(stage: &'static str, e: impl std::fmt::Display) -> Failure {
    Failure(format!("{stage}: {e}"))
}

fn resolve(common: &Common) -> Result<RunConfig, Failure> {
    let base = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut c = base.with_overrides(&common.set)?;
    if let Some(s) = common.seed {
        c.seed = s;
    }
    if let Some(d) = &common.out_dir {
        c.io.out_dir = d.clone();
    }
    let c = c.resolved();
    c.validate()?;
    Ok(c)
}

fn or_default(path: &Option<PathBuf>, c: &RunConfig, name: &str) -> PathBuf {
    path.clone().unwrap_or_else(|| c.io.out_dir.join(name))
}

fn ensure_parent(stage: &'static str, path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            fs::create_dir_all(p).map_err(|e| fail(stage, format!("{}: {e}", p.display())))
        }
        _ => Ok(()),
    }
}

fn read_dataset(stage: &'static str, path: &Path) -> Result<GpllDataset, Failure> {
    load_dataset(path).map_err(|e| fail(stage, e))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let c = resolve(&cli.common)?;
    match cli.command {
        Command::Generate { out } => {
            let ds = dataset_stage(&c)?;
            let out = or_default(&out, &c, "dataset.jsonl");
            ensure_parent("generate", &out)?;
            save_dataset(&ds, &out).map_err(|e| fail("generate", e))?;
            eprintln!(
                "wrote {} instances in {} groups to {}",
                ds.num_instances(),
                ds.groups.len(),
                out.display()
            );
        }
        Command::BuildGraph {
            input,
            out,
            eps,
            min_pts,
            threshold,
        } => {
            let ds = read_dataset("build-graph", &input)?;
            let mut gc = c.graph;
            gc.eps = eps.unwrap_or(gc.eps);
            gc.min_pts = min_pts.unwrap_or(gc.min_pts);
            gc.threshold = threshold.unwrap_or(gc.threshold);
            let g = build_graph_stage(&ds, &gc)?;
            let out = or_default(&out, &c, "graph.jsonl");
            ensure_parent("build-graph", &out)?;
            save_graph(&g, &out).map_err(|e| fail("build-graph", e))?;
            eprintln!(
                "{} within and {} cross edges written to {}",
                g.within.edges.len(),
                g.cross.edges.len(),
                out.display()
            );
        }
        Command::Train {
            graph,
            out_params,
            out_ratings,
            loss_trace,
            init_params,
        } => {
            let g = load_graph(&graph).map_err(|e| fail("train", e))?;
            let prepared = PreparedGraph::new(&g, &c.model).map_err(|e| fail("train", e))?;
            let params = match &init_params {
                Some(p) => load_params(p).map_err(|e| fail("train", e))?.0,
                None => ModelParams::init(
                    ModelDims::new(&c.model, g.feature_dim, g.num_classes),
                    c.model.seed,
                ),
            };
            let epochs = c.model.epochs;
            let out = train_with(&prepared, params, &c.model, |e, loss| {
                if (e + 1) % 100 == 0 || e + 1 == epochs {
                    eprintln!("epoch {:>5}  loss {loss:.6}", e + 1);
                }
            })
            .map_err(|e| fail("train", e))?;
            let p = or_default(&out_params, &c, "params.json");
            let r = or_default(&out_ratings, &c, "ratings.jsonl");
            let t = or_default(&loss_trace, &c, "loss_trace.csv");
            for path in [&p, &r, &t] {
                ensure_parent("train", path)?;
            }
            save_params(&p, &out.params, &c.model).map_err(|e| fail("train", e))?;
            save_ratings(&out.ratings, &r).map_err(|e| fail("train", e))?;
            let f = File::create(&t).map_err(|e| fail("train", format!("{}: {e}", t.display())))?;
            write_loss_trace(&out.loss_trace, BufWriter::new(f))
                .map_err(|e| fail("train", format!("{}: {e}", t.display())))?;
        }
        Command::Predict {
            method,
            ratings,
            graph,
            dataset,
            params,
            out,
        } => {
            let need = |p: &Option<PathBuf>, flag: &str| {
                p.clone()
                    .ok_or_else(|| fail("predict", format!("--{flag} is required for this method")))
            };
            let preds: Vec<Prediction> = match method {
                PredictMethod::DbGae => {
                    let r = load_ratings(&need(&ratings, "ratings")?)
                        .map_err(|e| fail("predict", e))?;
                    let g = load_graph(&need(&graph, "graph")?).map_err(|e| fail("predict", e))?;
                    let trained = match (c.inference.similarity, &params) {
                        (Similarity::Embeddings, Some(p)) => {
                            Some(load_params(p).map_err(|e| fail("predict", e))?)
                        }
                        (Similarity::Embeddings, None) => {
                            return Err(fail(
                                "predict",
                                "--params is required for embedding similarity",
                            ))
                        }
                        _ => None,
                    };
                    predict_stage(&r, &g, &c.inference, trained.as_ref().map(|(p, m)| (p, m)))?
                }
                PredictMethod::ClusterVoting => {
                    let ds = read_dataset("predict", &need(&dataset, "dataset")?)?;
                    cluster_voting(&ds, c.graph.eps, c.graph.min_pts)
                }
                PredictMethod::PairClustering => {
                    let ds = read_dataset("predict", &need(&dataset, "dataset")?)?;
                    pair_clustering(&ds, c.graph.eps, c.graph.min_pts)
                }
            };
            let out = or_default(&out, &c, "predictions.jsonl");
            ensure_parent("predict", &out)?;
            save_predictions(&preds, &out).map_err(|e| fail("predict", e))?;
        }
        Command::Evaluate {
            pred,
            dataset,
            out_report,
            out_curves,
            out_json,
        } => {
            let ds = read_dataset("evaluate", &dataset)?;
            let mut reports = Vec::new();
            for spec in &pred {
                let (name, path) = match spec.split_once('=') {
                    Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                    None => {
                        let p = PathBuf::from(spec);
                        let stem = p
                            .file_stem()
                            .map_or("predictions".into(), |s| s.to_string_lossy().into_owned());
                        (stem, p)
                    }
                };
                let preds = load_predictions(&path).map_err(|e| fail("evaluate", e))?;
                reports.push(
                    evaluate(&name, &preds, &ds, &c.evaluation).map_err(|e| fail("evaluate", e))?,
                );
            }
            let text = render_report(&reports);
            match &out_report {
                Some(p) => {
                    ensure_parent("evaluate", p)?;
                    fs::write(p, &text)
                        .map_err(|e| fail("evaluate", format!("{}: {e}", p.display())))?;
                }
                None => print!("{text}"),
            }
            if let Some(p) = &out_curves {
                ensure_parent("evaluate", p)?;
                let f = File::create(p)
                    .map_err(|e| fail("evaluate", format!("{}: {e}", p.display())))?;
                write_curves(&reports, f).map_err(|e| fail("evaluate", e))?;
            }
            if let Some(p) = &out_json {
                ensure_parent("evaluate", p)?;
                let json = reports_to_json(&reports).map_err(|e| fail("evaluate", e))?;
                fs::write(p, json)
                    .map_err(|e| fail("evaluate", format!("{}: {e}", p.display())))?;
            }
        }
        Command::Pipeline => {
            let out = run_pipeline(&c)?;
            print!("{}", out.report_text);
            eprintln!("artifacts in {}", c.io.out_dir.display());
        }
        Command::Sweep {
            param,
            values,
            replicates,
            spec,
        } => {
            let spec = match (&spec, param) {
                (Some(p), _) => {
                    let text = fs::read_to_string(p)
                        .map_err(|e| fail("config", format!("{}: {e}", p.display())))?;
                    SweepSpec::from_toml(&text)?
                }
                (None, Some(param)) => SweepSpec::from_raw(&param, &values, replicates),
                (None, None) => return Err(fail("config", "--param or --spec is required")),
            };
            let rows = run_sweep(&spec, &c, |row| {
                eprintln!(
                    "value {} replicate {} {}: {}",
                    row.value,
                    row.replicate,
                    row.method,
                    row.accuracy
                        .map_or(row.status.clone(), |a| format!("accuracy {a:.4}"))
                );
            })?;
            fs::create_dir_all(&c.io.out_dir)
                .map_err(|e| fail("sweep", format!("{}: {e}", c.io.out_dir.display())))?;
            let path = c.io.out_dir.join("sweep.csv");
            let f = File::create(&path)
                .map_err(|e| fail("sweep", format!("{}: {e}", path.display())))?;
            write_sweep_csv(&rows, f).map_err(|e| fail("sweep", e))?;
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.0);
            ExitCode::FAILURE
        }
    }
}
