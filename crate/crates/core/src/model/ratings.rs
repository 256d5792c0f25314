use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::numerics::{softmax, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Within,
    Cross,
}

/// A decoded instance-label edge. `via` is the borrowed neighbour of a
/// cross edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScoredEdge {
    pub instance: usize,
    pub label: usize,
    pub kind: EdgeKind,
    pub via: Option<usize>,
}

/// Per-edge distributions over rating levels and their expectations.
#[derive(Clone, Debug, PartialEq)]
pub struct RatingMatrix {
    pub levels: Vec<f64>,
    pub num_instances: usize,
    pub edges: Vec<ScoredEdge>,
    /// `edges.len() x levels.len()`, rows sum to one.
    pub probs: Tensor,
    pub expected: Vec<f64>,
}

impl RatingMatrix {
    /// Row softmax of decoder logits.
    pub fn from_logits(
        levels: Vec<f64>,
        num_instances: usize,
        edges: Vec<ScoredEdge>,
        logits: &Tensor,
    ) -> Self {
        assert_eq!(logits.shape(), (edges.len(), levels.len()));
        let mut probs = Tensor::zeros(edges.len(), levels.len());
        let mut expected = Vec::with_capacity(edges.len());
        let lo = levels.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for e in 0..edges.len() {
            let p = softmax(logits.row(e));
            // A convex combination cannot leave the level range; clamp away
            // the rounding that would.
            let m: f64 = p.iter().zip(&levels).map(|(p, r)| p * r).sum();
            expected.push(m.clamp(lo, hi));
            probs.row_mut(e).copy_from_slice(&p);
        }
        Self {
            levels,
            num_instances,
            edges,
            probs,
            expected,
        }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Largest deviation of a row sum from one.
    pub fn max_sum_error(&self) -> f64 {
        (0..self.probs.rows())
            .map(|r| (self.probs.row(r).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn expected_range(&self) -> Option<(f64, f64)> {
        let lo = self.expected.iter().copied().reduce(f64::min)?;
        let hi = self.expected.iter().copied().reduce(f64::max)?;
        Some((lo, hi))
    }
}

/// Index of the level nearest to `w`; an exact midpoint goes to the higher
/// level.
pub fn quantize(w: f64, levels: &[f64]) -> usize {
    let mut best = 0;
    for (k, r) in levels.iter().enumerate() {
        if (w - r).abs() <= (w - levels[best]).abs() {
            best = k;
        }
    }
    best
}

/// Mean negative log-probability of each within edge's quantised target
/// level. `targets` pairs a row of `ratings` with its level index.
pub fn reconstruction_loss(
    ratings: &RatingMatrix,
    targets: &[(usize, usize)],
) -> Result<f64, ModelError> {
    if targets.is_empty() {
        return Err(ModelError::NoObservedEdges);
    }
    let total: f64 = targets
        .iter()
        .map(|&(row, level)| -ratings.probs.get(row, level).ln())
        .sum();
    Ok(total / targets.len() as f64)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    levels: Vec<f64>,
    num_instances: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    src: usize,
    dst: usize,
    kind: EdgeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    via: Option<usize>,
    m_hat: f64,
    p: Vec<f64>,
}

/// JSON Lines: a header with the levels, then one record per edge with
/// graph-file node ids (labels offset by the instance count).
pub fn write_ratings<W: Write>(r: &RatingMatrix, mut w: W) -> std::io::Result<()> {
    serde_json::to_writer(
        &mut w,
        &Header {
            levels: r.levels.clone(),
            num_instances: r.num_instances,
        },
    )?;
    w.write_all(b"\n")?;
    for (k, e) in r.edges.iter().enumerate() {
        serde_json::to_writer(
            &mut w,
            &Record {
                src: e.instance,
                dst: r.num_instances + e.label,
                kind: e.kind,
                via: e.via,
                m_hat: r.expected[k],
                p: r.probs.row(k).to_vec(),
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_ratings<R: Read>(r: R) -> Result<RatingMatrix, ModelError> {
    let mut header: Option<Header> = None;
    let mut edges = Vec::new();
    let mut probs = Vec::new();
    let mut expected = Vec::new();
    for (idx, line) in BufReader::new(r).lines().enumerate() {
        let perr = |message: String| ModelError::Parse {
            line: idx + 1,
            message,
        };
        let line = line.map_err(|e| perr(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let Some(h) = &header else {
            header = Some(serde_json::from_str(&line).map_err(|e| perr(e.to_string()))?);
            continue;
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| perr(e.to_string()))?;
        if rec.p.len() != h.levels.len() {
            return Err(perr(format!(
                "{} probabilities for {} levels",
                rec.p.len(),
                h.levels.len()
            )));
        }
        if rec.src >= h.num_instances || rec.dst < h.num_instances {
            return Err(perr(format!(
                "edge {}->{} must run instance -> label",
                rec.src, rec.dst
            )));
        }
        if (rec.kind == EdgeKind::Cross) != rec.via.is_some() {
            return Err(perr("`via` is required on cross edges only".into()));
        }
        edges.push(ScoredEdge {
            instance: rec.src,
            label: rec.dst - h.num_instances,
            kind: rec.kind,
            via: rec.via,
        });
        probs.extend(rec.p);
        expected.push(rec.m_hat);
    }
    let h = header.ok_or(ModelError::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    let probs = Tensor::from_vec(edges.len(), h.levels.len(), probs)?;
    Ok(RatingMatrix {
        levels: h.levels,
        num_instances: h.num_instances,
        edges,
        probs,
        expected,
    })
}

pub fn save_ratings(r: &RatingMatrix, path: &Path) -> Result<(), ModelError> {
    let io = |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    };
    let f = File::create(path).map_err(io)?;
    write_ratings(r, BufWriter::new(f)).map_err(io)
}

pub fn load_ratings(path: &Path) -> Result<RatingMatrix, ModelError> {
    let f = File::open(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_ratings(f)
}
