//! Clustering baselines that ignore the autoencoder.

use std::collections::BTreeSet;

use super::pool::{argmax_class, Prediction};
use crate::data::GpllDataset;
use crate::graph::{count_cooccurrence, dbscan};

/// Majority vote over the candidate labels of every group that holds a
/// member of the instance's feature cluster. Each group votes once per
/// label occurrence; noise instances only see their own group.
pub fn cluster_voting(ds: &GpllDataset, eps: f64, min_pts: usize) -> Vec<Prediction> {
    let instances: Vec<_> = ds.instances().collect();
    let feats: Vec<&[f64]> = instances.iter().map(|i| i.features.as_slice()).collect();
    let clusters = dbscan(&feats, eps, min_pts);
    let mut cluster_groups = vec![BTreeSet::new(); clusters.num_clusters()];
    for (k, inst) in instances.iter().enumerate() {
        if let Some(c) = clusters.labels[k] {
            cluster_groups[c].insert(inst.group_id);
        }
    }
    instances
        .iter()
        .enumerate()
        .map(|(k, inst)| {
            let own = BTreeSet::from([inst.group_id]);
            let groups = clusters.labels[k].map_or(&own, |c| &cluster_groups[c]);
            let mut votes = vec![0.0; ds.num_classes];
            for &g in groups {
                for l in &ds.groups[g].labels {
                    votes[l.class_id as usize] += 1.0;
                }
            }
            Prediction {
                instance_id: inst.id,
                group_id: inst.group_id,
                class: argmax_class(&votes),
                scores: votes,
            }
        })
        .collect()
}

/// Picks each instance's within-group link with the largest co-occurrence
/// cluster, lowest class id on ties.
pub fn pair_clustering(ds: &GpllDataset, eps: f64, min_pts: usize) -> Vec<Prediction> {
    let labels: Vec<_> = ds.labels().collect();
    let mut best: Vec<Vec<f64>> = vec![vec![0.0; ds.num_classes]; ds.num_instances()];
    for link in count_cooccurrence(ds, eps, min_pts) {
        let class = labels[link.label].class_id as usize;
        let s = &mut best[link.instance][class];
        *s = s.max(link.count as f64);
    }
    ds.instances()
        .zip(best)
        .map(|(inst, scores)| Prediction {
            instance_id: inst.id,
            group_id: inst.group_id,
            class: argmax_class(&scores),
            scores,
        })
        .collect()
}
