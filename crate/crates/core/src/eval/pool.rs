use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::data::Class;
use crate::graph::DualBipartiteGraph;
use crate::model::{EdgeKind, RatingMatrix};

/// Which vectors the cross-edge cosine compares.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    /// Raw instance features.
    #[default]
    Features,
    /// Learned instance embeddings.
    Embeddings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Refined weights at or below this contribute nothing.
    pub threshold: f64,
    pub similarity: Similarity,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            similarity: Similarity::Features,
        }
    }
}

/// Predicted class of one instance with its per-class pooled scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub instance_id: u64,
    pub group_id: usize,
    pub class: Class,
    /// Score per named class id.
    pub scores: Vec<f64>,
}

/// Class with the highest positive score, lowest id on ties; null when no
/// score is positive.
pub fn argmax_class(scores: &[f64]) -> Class {
    let mut best: Option<(usize, f64)> = None;
    for (k, &s) in scores.iter().enumerate() {
        if s > 0.0 && best.is_none_or(|(_, b)| s > b) {
            best = Some((k, s));
        }
    }
    best.map_or(Class::Null, |(k, _)| Class::Named(k as u32))
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

/// Pools refined link weights into one class per instance.
///
/// A within edge adds `max(0, m - threshold)` to its label's class; a cross
/// edge first scales `m` by the cosine similarity between the instance and
/// the neighbour it was borrowed from. `vectors` are compared by that
/// cosine and default to the raw instance features.
pub fn pool_labels(
    ratings: &RatingMatrix,
    graph: &DualBipartiteGraph,
    threshold: f64,
    vectors: Option<&[Vec<f64>]>,
) -> Result<Vec<Prediction>, EvalError> {
    let ni = graph.num_instances();
    if ratings.num_instances != ni {
        return Err(EvalError::Mismatch(format!(
            "ratings cover {} instances, graph has {ni}",
            ratings.num_instances
        )));
    }
    let vector = |i: usize| -> &[f64] {
        match vectors {
            Some(v) => &v[i],
            None => &graph.instances[i].features,
        }
    };
    let mut scores = vec![vec![0.0; graph.num_classes]; ni];
    for (e, &m) in ratings.edges.iter().zip(&ratings.expected) {
        if e.instance >= ni || e.label >= graph.num_labels() {
            return Err(EvalError::Mismatch(format!(
                "rated edge {}->{} is not in the graph",
                e.instance, e.label
            )));
        }
        let z = match (e.kind, e.via) {
            (EdgeKind::Within, _) => m,
            (EdgeKind::Cross, Some(via)) if via < ni => m * cosine(vector(e.instance), vector(via)),
            (EdgeKind::Cross, _) => {
                return Err(EvalError::Mismatch(format!(
                    "cross edge {}->{} lacks a valid neighbour",
                    e.instance, e.label
                )))
            }
        };
        let class = graph.labels[e.label].class_id as usize;
        scores[e.instance][class] += (z - threshold).max(0.0);
    }
    Ok(graph
        .instances
        .iter()
        .zip(scores)
        .map(|(node, scores)| Prediction {
            instance_id: node.instance_id,
            group_id: node.group_id,
            class: argmax_class(&scores),
            scores,
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    instance_id: u64,
    group_id: usize,
    predicted: Option<u32>,
    scores: Vec<f64>,
}

/// One JSON object per instance; `predicted` is null for the null class.
pub fn write_predictions<W: Write>(preds: &[Prediction], mut w: W) -> std::io::Result<()> {
    for p in preds {
        serde_json::to_writer(
            &mut w,
            &Record {
                instance_id: p.instance_id,
                group_id: p.group_id,
                predicted: p.class.named(),
                scores: p.scores.clone(),
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_predictions<R: Read>(r: R) -> Result<Vec<Prediction>, EvalError> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(r).lines().enumerate() {
        let perr = |message: String| EvalError::Parse {
            line: idx + 1,
            message,
        };
        let line = line.map_err(|e| perr(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| perr(e.to_string()))?;
        out.push(Prediction {
            instance_id: rec.instance_id,
            group_id: rec.group_id,
            class: rec.predicted.map_or(Class::Null, Class::Named),
            scores: rec.scores,
        });
    }
    Ok(out)
}

pub fn save_predictions(preds: &[Prediction], path: &Path) -> Result<(), EvalError> {
    let io = |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    };
    let f = File::create(path).map_err(io)?;
    write_predictions(preds, BufWriter::new(f)).map_err(io)
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>, EvalError> {
    let f = File::open(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_predictions(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{
        CrossEdge, CrossGraph, GraphBuildConfig, InstanceNode, LabelNode, WithinGraph,
    };
    use crate::model::ScoredEdge;
    use crate::numerics::Tensor;

    fn graph(features: Vec<Vec<f64>>, label_groups: &[(u32, usize)]) -> DualBipartiteGraph {
        DualBipartiteGraph {
            num_classes: 3,
            feature_dim: features[0].len(),
            build: GraphBuildConfig::default(),
            instances: features
                .into_iter()
                .enumerate()
                .map(|(i, f)| InstanceNode {
                    instance_id: i as u64,
                    group_id: i,
                    features: f,
                })
                .collect(),
            labels: label_groups
                .iter()
                .map(|&(class_id, group_id)| LabelNode {
                    class_id,
                    group_id,
                    slot: 0,
                })
                .collect(),
            within: WithinGraph::default(),
            cross: CrossGraph::default(),
        }
    }

    fn rated(ni: usize, edges: Vec<ScoredEdge>, m: Vec<f64>) -> RatingMatrix {
        let n = edges.len();
        RatingMatrix {
            levels: vec![0.0, 1.0],
            num_instances: ni,
            edges,
            probs: Tensor::from_vec(n, 2, m.iter().flat_map(|&x| [1.0 - x, x]).collect()).unwrap(),
            expected: m,
        }
    }

    #[test]
    fn instance_without_edges_is_null() {
        let g = graph(vec![vec![1.0]], &[]);
        let p = pool_labels(&rated(1, vec![], vec![]), &g, 0.5, None).unwrap();
        assert_eq!(p[0].class, Class::Null);
    }

    #[test]
    fn strong_within_edge_wins() {
        let g = graph(vec![vec![1.0]], &[(0, 0)]);
        let e = ScoredEdge {
            instance: 0,
            label: 0,
            kind: EdgeKind::Within,
            via: None,
        };
        let p = pool_labels(&rated(1, vec![e], vec![0.9]), &g, 0.5, None).unwrap();
        assert_eq!(p[0].class, Class::Named(0));
        assert!((p[0].scores[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn weak_cross_edge_leaves_null() {
        // cos(60 degrees) = 0.5, so 0.8 * 0.5 - 0.5 < 0.
        let g = graph(
            vec![vec![1.0, 0.0], vec![0.5, 3f64.sqrt() / 2.0]],
            &[(1, 1)],
        );
        let mut g = g;
        g.cross.edges.push(CrossEdge {
            instance: 0,
            label: 0,
            weight: 0.8,
            via: 1,
        });
        let e = ScoredEdge {
            instance: 0,
            label: 0,
            kind: EdgeKind::Cross,
            via: Some(1),
        };
        let p = pool_labels(&rated(2, vec![e], vec![0.8]), &g, 0.5, None).unwrap();
        assert_eq!(p[0].class, Class::Null);
        assert_eq!(p[0].scores[1], 0.0);
    }

    #[test]
    fn zero_vectors_have_zero_cosine() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
        assert!((cosine(&[1.0, 1.0], &[2.0, 2.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn argmax_breaks_ties_towards_lower_ids() {
        assert_eq!(argmax_class(&[0.0, 0.3, 0.3]), Class::Named(1));
        assert_eq!(argmax_class(&[0.0, 0.0]), Class::Null);
    }

    #[test]
    fn predictions_round_trip() {
        let preds = vec![
            Prediction {
                instance_id: 4,
                group_id: 1,
                class: Class::Named(2),
                scores: vec![0.0, 0.1, 0.7],
            },
            Prediction {
                instance_id: 5,
                group_id: 1,
                class: Class::Null,
                scores: vec![0.0; 3],
            },
        ];
        let mut buf = Vec::new();
        write_predictions(&preds, &mut buf).unwrap();
        assert_eq!(read_predictions(&buf[..]).unwrap(), preds);
    }
}
