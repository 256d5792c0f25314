use std::rc::Rc;

use super::ratings::{quantize, EdgeKind, RatingMatrix, ScoredEdge};
use super::{ModelConfig, ModelDims, ModelError, ModelParams, ATTENTION_SLOPE};
use crate::graph::DualBipartiteGraph;
use crate::numerics::{EdgeIndex, NumericsError, Tape, Tensor, Var};

/// Propagation path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Path {
    Within = 0,
    Cross = 1,
}

/// Directed message edges of one path over global node ids (instances
/// first, then labels). Every graph edge appears in both directions: the
/// first half of the edges point at instances, the second half at labels.
#[derive(Clone, Debug)]
pub(crate) struct PathEdges {
    pub(crate) edges: Rc<EdgeIndex>,
    pub(crate) weights: Tensor,
    pub(crate) segments: Rc<[usize]>,
    /// Edges into instances, destinations as instance indices.
    to_instances: Rc<EdgeIndex>,
    /// Edges into labels, destinations as label indices.
    to_labels: Rc<EdgeIndex>,
    first_half: Rc<[usize]>,
    second_half: Rc<[usize]>,
}

impl PathEdges {
    /// `pairs` holds (instance, label index, weight).
    fn new(pairs: Vec<(usize, usize, f64)>, num_instances: usize) -> Option<Self> {
        if pairs.is_empty() {
            return None;
        }
        let m = pairs.len();
        let inst: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let label: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let label_node: Vec<usize> = label.iter().map(|j| num_instances + j).collect();
        let src: Vec<usize> = label_node.iter().chain(&inst).copied().collect();
        let dst: Vec<usize> = inst.iter().chain(&label_node).copied().collect();
        let w: Vec<f64> = pairs.iter().chain(&pairs).map(|p| p.2).collect();
        let segments: Rc<[usize]> = dst.clone().into();
        Some(Self {
            edges: Rc::new(EdgeIndex::new(src, dst)),
            weights: Tensor::column(w),
            segments,
            to_instances: Rc::new(EdgeIndex::new(label_node, inst.clone())),
            to_labels: Rc::new(EdgeIndex::new(inst, label)),
            first_half: (0..m).collect(),
            second_half: (m..2 * m).collect(),
        })
    }
}

/// Model-ready view of a graph under one ablation setting.
#[derive(Clone, Debug)]
pub struct PreparedGraph {
    pub(crate) num_instances: usize,
    pub(crate) num_labels: usize,
    pub(crate) inputs: Tensor,
    /// Instance rows and label rows of `inputs`.
    split_inputs: [Tensor; 2],
    pub(crate) paths: [Option<PathEdges>; 2],
    pub(crate) use_attention: bool,
    pub(crate) levels: Vec<f64>,
    pub(crate) scored: Vec<ScoredEdge>,
    pub(crate) decode_edges: Rc<EdgeIndex>,
    /// Target level of each within edge; within edges lead `scored`.
    pub(crate) targets: Rc<[usize]>,
}

impl PreparedGraph {
    pub fn new(graph: &DualBipartiteGraph, config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        graph.validate().map_err(ModelError::Mismatch)?;
        let (ni, nl) = (graph.num_instances(), graph.num_labels());
        let (d, c) = (graph.feature_dim, graph.num_classes);
        let mut inputs = Tensor::zeros(ni + nl, d + c);
        for (i, node) in graph.instances.iter().enumerate() {
            if node.features.len() != d {
                return Err(ModelError::Mismatch(format!(
                    "instance {i} has {} features, expected {d}",
                    node.features.len()
                )));
            }
            inputs.row_mut(i)[..d].copy_from_slice(&node.features);
        }
        for (j, l) in graph.labels.iter().enumerate() {
            inputs.set(ni + j, d + l.class_id as usize, 1.0);
        }

        let within: Vec<(usize, usize, f64)> = graph
            .within
            .edges
            .iter()
            .map(|e| (e.instance, e.label, e.weight))
            .collect();
        let cross: Vec<(usize, usize, f64)> = if config.use_cross_links {
            graph
                .cross
                .edges
                .iter()
                .map(|e| (e.instance, e.label, e.weight))
                .collect()
        } else {
            Vec::new()
        };
        let paths = if config.use_dual_paths {
            [PathEdges::new(within, ni), PathEdges::new(cross, ni)]
        } else {
            // One merged path whose messages are averaged over each node's
            // neighbourhood instead of weighted by link likelihood.
            let merged: Vec<_> = within.into_iter().chain(cross).collect();
            let mut merged = PathEdges::new(merged, ni);
            if let Some(p) = merged.as_mut() {
                let mut degree = vec![0usize; ni + nl];
                p.edges.dst.iter().for_each(|&v| degree[v] += 1);
                p.weights = Tensor::column(
                    p.edges
                        .dst
                        .iter()
                        .map(|&v| 1.0 / degree[v] as f64)
                        .collect(),
                );
            }
            [merged, None]
        };

        let mut scored: Vec<ScoredEdge> = graph
            .within
            .edges
            .iter()
            .map(|e| ScoredEdge {
                instance: e.instance,
                label: e.label,
                kind: EdgeKind::Within,
                via: None,
            })
            .collect();
        if config.use_cross_links {
            scored.extend(graph.cross.edges.iter().map(|e| ScoredEdge {
                instance: e.instance,
                label: e.label,
                kind: EdgeKind::Cross,
                via: Some(e.via),
            }));
        }
        let decode_edges = Rc::new(EdgeIndex::new(
            scored.iter().map(|e| e.instance).collect(),
            scored.iter().map(|e| e.label).collect(),
        ));
        let targets = graph
            .within
            .edges
            .iter()
            .map(|e| quantize(e.weight, &config.rating_levels))
            .collect();
        let slice = |rows: std::ops::Range<usize>| {
            let cols = inputs.cols();
            Tensor::from_vec(
                rows.len(),
                cols,
                inputs.data()[rows.start * cols..rows.end * cols].to_vec(),
            )
            .expect("row range")
        };
        let split_inputs = [slice(0..ni), slice(ni..ni + nl)];
        Ok(Self {
            num_instances: ni,
            num_labels: nl,
            split_inputs,
            inputs,
            paths,
            use_attention: config.use_attention,
            levels: config.rating_levels.clone(),
            scored,
            decode_edges,
            targets,
        })
    }

    pub fn num_instances(&self) -> usize {
        self.num_instances
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn scored_edges(&self) -> &[ScoredEdge] {
        &self.scored
    }

    pub fn num_observed(&self) -> usize {
        self.targets.len()
    }

    /// Target level index of each within edge.
    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    /// Directed message edges (source, destination node ids) and their
    /// weights for one path, if the path has any.
    pub fn path_edges(&self, path: Path) -> Option<(&EdgeIndex, &[f64])> {
        self.paths[path as usize]
            .as_ref()
            .map(|p| (p.edges.as_ref(), p.weights.data()))
    }

    pub(crate) fn check(&self, dims: &ModelDims) -> Result<(), ModelError> {
        if dims.input_dim() != self.inputs.cols() {
            return Err(ModelError::Mismatch(format!(
                "parameters expect {} input columns, graph has {}",
                dims.input_dim(),
                self.inputs.cols()
            )));
        }
        if dims.levels != self.levels.len() {
            return Err(ModelError::Mismatch(format!(
                "parameters decode {} levels, config has {}",
                dims.levels,
                self.levels.len()
            )));
        }
        Ok(())
    }
}

pub(crate) struct Built {
    pub(crate) logits: Var,
    pub(crate) loss: Option<Var>,
    /// Per path: [instance rows, label rows] after head averaging and ReLU.
    h: [[Var; 2]; 2],
    u: Var,
    v: Var,
    /// Per head and path: aggregated inputs into [instances, labels].
    aggregated: Vec<[Option<[Var; 2]>; 2]>,
    alphas: Vec<[Option<Var>; 2]>,
}

/// Records the full forward pass on `tape`. `vars` are the parameter
/// handles in layout order.
///
/// A message is the projected input of a neighbour scaled by its edge
/// coefficient, so each head's summed messages equal the coefficient-weighted
/// sum of neighbour inputs times that head's projection. Heads are stacked
/// side by side so the head average is a single product.
pub(crate) fn build(
    tape: &mut Tape,
    vars: &[Var],
    dims: &ModelDims,
    g: &PreparedGraph,
    with_loss: bool,
) -> Result<Built, NumericsError> {
    let sizes = [g.num_instances, g.num_labels];
    let x = tape.constant(g.inputs.clone());
    let xs = [
        tape.constant(g.split_inputs[0].clone()),
        tape.constant(g.split_inputs[1].clone()),
    ];
    let mut aggregated = vec![[None, None]; dims.num_heads];
    let mut alphas = vec![[None, None]; dims.num_heads];
    let mut scores = Vec::new();
    if g.use_attention {
        for head in 0..dims.num_heads {
            let z = tape.matmul(x, vars[dims.attn_proj(head)])?;
            let to_dst = tape.matmul(z, vars[dims.attn_dst(head)])?;
            let from_src = tape.matmul(z, vars[dims.attn_src(head)])?;
            scores.push((to_dst, from_src));
        }
    }
    let inv_heads = 1.0 / dims.num_heads as f64;
    let mut h = [[x; 2]; 2];
    for (p, path) in g.paths.iter().enumerate() {
        let Some(path) = path else {
            for side in 0..2 {
                h[p][side] = tape.constant(Tensor::zeros(sizes[side], dims.gcn_hidden));
            }
            continue;
        };
        let w = tape.constant(path.weights.clone());
        let mut shared = None;
        for head in 0..dims.num_heads {
            let coef = match scores.get(head) {
                Some(&(to_dst, from_src)) => {
                    let a = tape.gather_rows(to_dst, path.edges.dst.clone().into())?;
                    let b = tape.gather_rows(from_src, path.edges.src.clone().into())?;
                    let e = tape.add(a, b)?;
                    let e = tape.leaky_relu(e, ATTENTION_SLOPE);
                    let alpha = tape.segment_softmax(e, path.segments.clone())?;
                    alphas[head][p] = Some(alpha);
                    tape.mul(alpha, w)?
                }
                None => w,
            };
            let agg = match shared {
                Some(agg) => agg,
                None => {
                    let ci = tape.gather_rows(coef, path.first_half.clone())?;
                    let cl = tape.gather_rows(coef, path.second_half.clone())?;
                    let ai = tape.edge_weighted_sum(ci, x, path.to_instances.clone(), sizes[0])?;
                    let al = tape.edge_weighted_sum(cl, x, path.to_labels.clone(), sizes[1])?;
                    [ai, al]
                }
            };
            if !g.use_attention {
                shared = Some(agg);
            }
            aggregated[head][p] = Some(agg);
        }
        let weights: Vec<Var> = (0..dims.num_heads)
            .map(|head| vars[dims.propagate(head, p == Path::Cross as usize)])
            .collect();
        let stacked = tape.concat_rows(&weights)?;
        for side in 0..2 {
            let parts: Vec<Var> = aggregated
                .iter()
                .map(|a| a[p].expect("path present")[side])
                .collect();
            let cat = tape.concat_cols(&parts)?;
            let cat = tape.scale(cat, inv_heads);
            let m = tape.matmul(cat, stacked)?;
            h[p][side] = tape.relu(m);
        }
    }
    let out_params = [dims.instance_out(), dims.label_out()];
    let mut emb = [x; 2];
    for side in 0..2 {
        let f = tape.matmul(xs[side], vars[dims.feature()])?;
        let f = tape.add_row(f, vars[dims.feature_bias()])?;
        let f = tape.relu(f);
        let cat = tape.concat_cols(&[h[0][side], h[1][side], f])?;
        let e = tape.matmul(cat, vars[out_params[side]])?;
        emb[side] = tape.relu(e);
    }
    let [u, v] = emb;
    let uq = tape.matmul(u, vars[dims.decoder()])?;
    let logits = tape.bilinear_edge_scores(uq, v, g.decode_edges.clone(), dims.levels)?;
    let loss = if with_loss {
        let observed = if g.targets.len() == g.scored.len() {
            logits
        } else {
            tape.gather_rows(logits, (0..g.targets.len()).collect())?
        };
        Some(tape.cross_entropy(observed, g.targets.clone())?)
    } else {
        None
    };
    Ok(Built {
        logits,
        loss,
        h,
        u,
        v,
        aggregated,
        alphas,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    /// One row per instance.
    pub u: Tensor,
    /// One row per label node.
    pub v: Tensor,
}

/// Intermediate encoder values, for inspection and tests.
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    /// Per head and path: summed incoming messages per node, before head
    /// averaging and rectification. `None` when the path has no edges.
    pub messages: Vec<[Option<Tensor>; 2]>,
    /// Per head and path: attention coefficient of each directed edge of
    /// [`PreparedGraph::path_edges`].
    pub attention: Vec<[Option<Vec<f64>>; 2]>,
    pub h_within: Tensor,
    pub h_cross: Tensor,
    pub output: EncoderOutput,
    pub ratings: RatingMatrix,
}

pub fn trace(params: &ModelParams, g: &PreparedGraph) -> Result<EncoderTrace, ModelError> {
    g.check(&params.dims)?;
    let dims = &params.dims;
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .tensors
        .iter()
        .map(|t| tape.constant(t.clone()))
        .collect();
    let b = build(&mut tape, &vars, dims, g, false)?;
    let stack = |tape: &Tape, [a, b]: [Var; 2]| -> Result<Tensor, NumericsError> {
        let (ta, tb) = (tape.value(a), tape.value(b));
        let mut data = ta.data().to_vec();
        data.extend_from_slice(tb.data());
        Tensor::from_vec(ta.rows() + tb.rows(), ta.cols(), data)
    };
    let mut messages = Vec::with_capacity(dims.num_heads);
    for (head, agg) in b.aggregated.iter().enumerate() {
        let mut per_path = [None, None];
        for p in 0..2 {
            if let Some(sides) = agg[p] {
                let w = &params.tensors[dims.propagate(head, p == Path::Cross as usize)];
                per_path[p] = Some(stack(&tape, sides)?.matmul(w)?);
            }
        }
        messages.push(per_path);
    }
    let alpha = |v: &Option<Var>| v.map(|v| tape.value(v).data().to_vec());
    Ok(EncoderTrace {
        messages,
        attention: b
            .alphas
            .iter()
            .map(|a| [alpha(&a[0]), alpha(&a[1])])
            .collect(),
        h_within: stack(&tape, b.h[0])?,
        h_cross: stack(&tape, b.h[1])?,
        output: EncoderOutput {
            u: tape.value(b.u).clone(),
            v: tape.value(b.v).clone(),
        },
        ratings: ratings_from(g, tape.value(b.logits)),
    })
}

pub(crate) fn ratings_from(g: &PreparedGraph, logits: &Tensor) -> RatingMatrix {
    RatingMatrix::from_logits(g.levels.clone(), g.num_instances, g.scored.clone(), logits)
}

pub fn encode(params: &ModelParams, g: &PreparedGraph) -> Result<EncoderOutput, ModelError> {
    Ok(trace(params, g)?.output)
}

/// Rating distributions for every scored edge of `g` from given embeddings.
pub fn decode(
    params: &ModelParams,
    embeddings: &EncoderOutput,
    g: &PreparedGraph,
) -> Result<RatingMatrix, ModelError> {
    g.check(&params.dims)?;
    let mut tape = Tape::new();
    let u = tape.constant(embeddings.u.clone());
    let v = tape.constant(embeddings.v.clone());
    let q = tape.constant(params.tensors[params.dims.decoder()].clone());
    let uq = tape.matmul(u, q)?;
    let logits = tape.bilinear_edge_scores(uq, v, g.decode_edges.clone(), params.dims.levels)?;
    Ok(ratings_from(g, tape.value(logits)))
}
