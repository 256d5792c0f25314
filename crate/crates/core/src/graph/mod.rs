//! Dual bipartite graph construction.
//!
//! Within-group links get a co-occurrence count from DBSCAN over
//! concatenated `[features; one-hot label]` tuples, normalised against the
//! contradictory links that share one endpoint. Cross-group links connect an
//! instance to the labels of its homogeneous neighbours in other groups and
//! inherit the neighbour's within-group weight.

mod dbscan;
mod io;

use serde::{Deserialize, Serialize};

use crate::data::GpllDataset;

pub use dbscan::{dbscan, euclidean, ClusterAssignment};
pub use io::{load_graph, read_graph, save_graph, write_graph, GraphError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphBuildConfig {
    pub eps: f64,
    pub min_pts: usize,
    /// Closed L2 distance bound for homogeneous neighbours.
    pub threshold: f64,
}

impl GraphBuildConfig {
    pub fn validate(&self) -> Result<(), GraphError> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(GraphError::Invalid("eps must be positive".into()));
        }
        if self.min_pts == 0 {
            return Err(GraphError::Invalid("min_pts must be at least 1".into()));
        }
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(GraphError::Invalid("threshold must be non-negative".into()));
        }
        Ok(())
    }
}

impl Default for GraphBuildConfig {
    fn default() -> Self {
        Self {
            eps: 1.0,
            min_pts: 2,
            threshold: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceNode {
    pub instance_id: u64,
    pub group_id: usize,
    pub features: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelNode {
    pub class_id: u32,
    pub group_id: usize,
    pub slot: usize,
}

/// A candidate link inside one group. `instance` and `label` index
/// [`DualBipartiteGraph::instances`] and [`DualBipartiteGraph::labels`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WithinEdge {
    pub instance: usize,
    pub label: usize,
    pub weight: f64,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossEdge {
    pub instance: usize,
    pub label: usize,
    pub weight: f64,
    /// The homogeneous neighbour whose within-group link was borrowed.
    pub via: usize,
}

/// Within-group edges; every retained edge is observed (mask = 1).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WithinGraph {
    pub edges: Vec<WithinEdge>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CrossGraph {
    pub edges: Vec<CrossEdge>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualBipartiteGraph {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub build: GraphBuildConfig,
    pub instances: Vec<InstanceNode>,
    pub labels: Vec<LabelNode>,
    pub within: WithinGraph,
    pub cross: CrossGraph,
}

/// Co-occurrence count of one within-group link.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinkCount {
    pub instance: usize,
    pub label: usize,
    pub count: usize,
}

/// Instance and label nodes in dataset order.
pub fn graph_nodes(ds: &GpllDataset) -> (Vec<InstanceNode>, Vec<LabelNode>) {
    let instances = ds
        .instances()
        .map(|i| InstanceNode {
            instance_id: i.id,
            group_id: i.group_id,
            features: i.features.clone(),
        })
        .collect();
    let labels = ds
        .labels()
        .map(|l| LabelNode {
            class_id: l.class_id,
            group_id: l.group_id,
            slot: l.slot,
        })
        .collect();
    (instances, labels)
}

/// All within-group links of `ds` with their link tuples `[x; onehot(l)]`.
pub fn link_tuples(ds: &GpllDataset) -> Vec<(usize, usize, Vec<f64>)> {
    let mut out = Vec::new();
    let mut inst_base = 0;
    let mut label_base = 0;
    for g in &ds.groups {
        for (a, inst) in g.instances.iter().enumerate() {
            for (b, l) in g.labels.iter().enumerate() {
                let mut feat = Vec::with_capacity(ds.feature_dim + ds.num_classes);
                feat.extend_from_slice(&inst.features);
                feat.resize(ds.feature_dim + ds.num_classes, 0.0);
                feat[ds.feature_dim + l.class_id as usize] = 1.0;
                out.push((inst_base + a, label_base + b, feat));
            }
        }
        inst_base += g.instances.len();
        label_base += g.labels.len();
    }
    out
}

/// Counts how often each within-group link's instance/label pairing recurs in
/// the dataset: the size of its DBSCAN cluster, or 1 for a noise link.
pub fn count_cooccurrence(ds: &GpllDataset, eps: f64, min_pts: usize) -> Vec<LinkCount> {
    let tuples = link_tuples(ds);
    let feats: Vec<&[f64]> = tuples.iter().map(|t| t.2.as_slice()).collect();
    let clusters = dbscan(&feats, eps, min_pts);
    tuples
        .iter()
        .enumerate()
        .map(|(k, &(instance, label, _))| LinkCount {
            instance,
            label,
            count: clusters.size_of(k),
        })
        .collect()
}

/// Contradiction-normalised weights:
/// `w = c / (sum of counts at the instance + sum of counts at the label - c)`.
/// Both sums run over the retained links and include the link itself.
pub fn within_weights(counts: &[LinkCount]) -> WithinGraph {
    let n_inst = counts.iter().map(|c| c.instance + 1).max().unwrap_or(0);
    let n_label = counts.iter().map(|c| c.label + 1).max().unwrap_or(0);
    let mut at_instance = vec![0usize; n_inst];
    let mut at_label = vec![0usize; n_label];
    for c in counts {
        at_instance[c.instance] += c.count;
        at_label[c.label] += c.count;
    }
    let edges = counts
        .iter()
        .map(|c| {
            let denom = at_instance[c.instance] + at_label[c.label] - c.count;
            WithinEdge {
                instance: c.instance,
                label: c.label,
                weight: c.count as f64 / denom as f64,
                count: c.count,
            }
        })
        .collect();
    WithinGraph { edges }
}

/// Cross-group instance pairs within L2 distance `threshold` (inclusive),
/// as sorted neighbour lists per instance node.
pub fn homogeneous_neighbors(ds: &GpllDataset, threshold: f64) -> Vec<Vec<usize>> {
    let nodes: Vec<(usize, &[f64])> = ds
        .instances()
        .map(|i| (i.group_id, i.features.as_slice()))
        .collect();
    let mut out = vec![Vec::new(); nodes.len()];
    for a in 0..nodes.len() {
        for b in a + 1..nodes.len() {
            if nodes[a].0 != nodes[b].0 && euclidean(nodes[a].1, nodes[b].1) <= threshold {
                out[a].push(b);
                out[b].push(a);
            }
        }
    }
    out
}

/// Links each instance to the within-group labels of its homogeneous
/// neighbours. Duplicate `(instance, label)` pairs keep the largest weight;
/// ties keep the lowest-index neighbour.
pub fn cross_links(within: &WithinGraph, neighbors: &[Vec<usize>]) -> CrossGraph {
    let mut by_instance: Vec<Vec<&WithinEdge>> = vec![Vec::new(); neighbors.len()];
    for e in &within.edges {
        if e.instance < by_instance.len() {
            by_instance[e.instance].push(e);
        }
    }
    let mut edges = Vec::new();
    for (i, nbs) in neighbors.iter().enumerate() {
        let mut best: std::collections::BTreeMap<usize, CrossEdge> = Default::default();
        for &nb in nbs {
            for e in &by_instance[nb] {
                let cand = CrossEdge {
                    instance: i,
                    label: e.label,
                    weight: e.weight,
                    via: nb,
                };
                best.entry(e.label)
                    .and_modify(|cur| {
                        if cand.weight > cur.weight {
                            *cur = cand;
                        }
                    })
                    .or_insert(cand);
            }
        }
        edges.extend(best.into_values());
    }
    CrossGraph { edges }
}

pub fn build_dual_graph(ds: &GpllDataset, config: &GraphBuildConfig) -> DualBipartiteGraph {
    let (instances, labels) = graph_nodes(ds);
    let counts = count_cooccurrence(ds, config.eps, config.min_pts);
    let within = within_weights(&counts);
    let neighbors = homogeneous_neighbors(ds, config.threshold);
    let cross = cross_links(&within, &neighbors);
    DualBipartiteGraph {
        num_classes: ds.num_classes,
        feature_dim: ds.feature_dim,
        build: *config,
        instances,
        labels,
        within,
        cross,
    }
}

impl DualBipartiteGraph {
    pub fn num_instances(&self) -> usize {
        self.instances.len()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    /// Checks endpoint bounds, weight ranges and the cross-group invariant.
    pub fn validate(&self) -> Result<(), String> {
        let (ni, nl) = (self.instances.len(), self.labels.len());
        for e in &self.within.edges {
            if e.instance >= ni || e.label >= nl {
                return Err(format!(
                    "within edge {}->{} out of range",
                    e.instance, e.label
                ));
            }
            if !(e.weight > 0.0 && e.weight <= 1.0) {
                return Err(format!("within weight {} outside (0, 1]", e.weight));
            }
            if self.instances[e.instance].group_id != self.labels[e.label].group_id {
                return Err(format!(
                    "within edge {}->{} spans groups",
                    e.instance, e.label
                ));
            }
        }
        for e in &self.cross.edges {
            if e.instance >= ni || e.label >= nl || e.via >= ni {
                return Err(format!(
                    "cross edge {}->{} out of range",
                    e.instance, e.label
                ));
            }
            if !(0.0..=1.0).contains(&e.weight) {
                return Err(format!("cross weight {} outside [0, 1]", e.weight));
            }
            if self.instances[e.instance].group_id == self.labels[e.label].group_id {
                return Err(format!(
                    "cross edge {}->{} stays in one group",
                    e.instance, e.label
                ));
            }
        }
        if self
            .labels
            .iter()
            .any(|l| l.class_id as usize >= self.num_classes)
        {
            return Err("label class out of range".into());
        }
        Ok(())
    }
}
