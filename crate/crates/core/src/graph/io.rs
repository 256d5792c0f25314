//! JSON Lines graph files.
//!
//! Line 1 is a header; node lines follow, then edge lines. Node ids are
//! global: instances take `0..n_instances`, labels the ids after them.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    CrossEdge, CrossGraph, DualBipartiteGraph, GraphBuildConfig, InstanceNode, LabelNode,
    WithinEdge, WithinGraph,
};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "section", rename_all = "snake_case")]
enum Line {
    Header {
        num_classes: usize,
        feature_dim: usize,
        num_instances: usize,
        num_labels: usize,
        eps: f64,
        min_pts: usize,
        threshold: f64,
    },
    Node {
        id: usize,
        #[serde(flatten)]
        node: NodeKind,
    },
    Edge {
        src: usize,
        dst: usize,
        w: f64,
        #[serde(flatten)]
        edge: EdgeKind,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum NodeKind {
    Instance {
        instance_id: u64,
        group: usize,
        features: Vec<f64>,
    },
    Label {
        class_id: u32,
        group: usize,
        slot: usize,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum EdgeKind {
    Within { c: usize },
    Cross { via: usize },
}

pub fn write_graph<W: Write>(g: &DualBipartiteGraph, mut w: W) -> std::io::Result<()> {
    let ni = g.instances.len();
    let mut emit = |line: &Line| -> std::io::Result<()> {
        serde_json::to_writer(&mut w, line)?;
        w.write_all(b"\n")
    };
    emit(&Line::Header {
        num_classes: g.num_classes,
        feature_dim: g.feature_dim,
        num_instances: ni,
        num_labels: g.labels.len(),
        eps: g.build.eps,
        min_pts: g.build.min_pts,
        threshold: g.build.threshold,
    })?;
    for (id, n) in g.instances.iter().enumerate() {
        emit(&Line::Node {
            id,
            node: NodeKind::Instance {
                instance_id: n.instance_id,
                group: n.group_id,
                features: n.features.clone(),
            },
        })?;
    }
    for (k, l) in g.labels.iter().enumerate() {
        emit(&Line::Node {
            id: ni + k,
            node: NodeKind::Label {
                class_id: l.class_id,
                group: l.group_id,
                slot: l.slot,
            },
        })?;
    }
    for e in &g.within.edges {
        emit(&Line::Edge {
            src: e.instance,
            dst: ni + e.label,
            w: e.weight,
            edge: EdgeKind::Within { c: e.count },
        })?;
    }
    for e in &g.cross.edges {
        emit(&Line::Edge {
            src: e.instance,
            dst: ni + e.label,
            w: e.weight,
            edge: EdgeKind::Cross { via: e.via },
        })?;
    }
    w.flush()
}

pub fn save_graph(g: &DualBipartiteGraph, path: &Path) -> Result<(), GraphError> {
    let io = |source| GraphError::Io {
        path: path.display().to_string(),
        source,
    };
    let f = File::create(path).map_err(io)?;
    write_graph(g, BufWriter::new(f)).map_err(io)
}

pub fn read_graph<R: Read>(r: R) -> Result<DualBipartiteGraph, GraphError> {
    let mut graph: Option<DualBipartiteGraph> = None;
    let mut ni = 0;
    for (idx, line) in BufReader::new(r).lines().enumerate() {
        let lineno = idx + 1;
        let perr = |message: String| GraphError::Parse {
            line: lineno,
            message,
        };
        let line = line.map_err(|e| perr(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| perr(e.to_string()))?;
        match (parsed, graph.as_mut()) {
            (
                Line::Header {
                    num_classes,
                    feature_dim,
                    num_instances,
                    num_labels,
                    eps,
                    min_pts,
                    threshold,
                },
                None,
            ) => {
                ni = num_instances;
                graph = Some(DualBipartiteGraph {
                    num_classes,
                    feature_dim,
                    build: GraphBuildConfig {
                        eps,
                        min_pts,
                        threshold,
                    },
                    instances: Vec::with_capacity(num_instances),
                    labels: Vec::with_capacity(num_labels),
                    within: WithinGraph::default(),
                    cross: CrossGraph::default(),
                });
            }
            (Line::Header { .. }, Some(_)) => return Err(perr("duplicate header".into())),
            (_, None) => return Err(perr("graph header must come first".into())),
            (Line::Node { id, node }, Some(g)) => match node {
                NodeKind::Instance {
                    instance_id,
                    group,
                    features,
                } => {
                    if id != g.instances.len() || id >= ni {
                        return Err(perr(format!("unexpected instance node id {id}")));
                    }
                    if features.len() != g.feature_dim {
                        return Err(perr(format!(
                            "instance node {id} has {} features, expected {}",
                            features.len(),
                            g.feature_dim
                        )));
                    }
                    g.instances.push(InstanceNode {
                        instance_id,
                        group_id: group,
                        features,
                    });
                }
                NodeKind::Label {
                    class_id,
                    group,
                    slot,
                } => {
                    if id != ni + g.labels.len() {
                        return Err(perr(format!("unexpected label node id {id}")));
                    }
                    g.labels.push(LabelNode {
                        class_id,
                        group_id: group,
                        slot,
                    });
                }
            },
            (Line::Edge { src, dst, w, edge }, Some(g)) => {
                if src >= ni || dst < ni {
                    return Err(perr(format!(
                        "edge {src}->{dst} must run instance -> label"
                    )));
                }
                let label = dst - ni;
                match edge {
                    EdgeKind::Within { c } => g.within.edges.push(WithinEdge {
                        instance: src,
                        label,
                        weight: w,
                        count: c,
                    }),
                    EdgeKind::Cross { via } => g.cross.edges.push(CrossEdge {
                        instance: src,
                        label,
                        weight: w,
                        via,
                    }),
                }
            }
        }
    }
    let g = graph.ok_or(GraphError::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    if g.instances.len() != ni {
        return Err(GraphError::Invalid(format!(
            "header declares {ni} instances, file has {}",
            g.instances.len()
        )));
    }
    g.validate().map_err(GraphError::Invalid)?;
    Ok(g)
}

pub fn load_graph(path: &Path) -> Result<DualBipartiteGraph, GraphError> {
    let f = File::open(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_graph(f)
}
