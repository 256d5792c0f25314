//! Brute-force references shared by the property and acceptance tests.
#![allow(dead_code)]

use gpll_core::graph::{LinkCount, WithinGraph};

/// Density-connected components found by union-find over core points.
/// Border points join the earliest cluster (ordered by lowest core index)
/// holding a core point in range.
pub fn reference_dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let close = |a: usize, b: usize| {
        let d2: f64 = points[a]
            .iter()
            .zip(&points[b])
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        d2 <= eps * eps
    };
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| close(i, j)).count() >= min_pts)
        .collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in 0..i {
            if core[i] && core[j] && close(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    // After full compression every root is its component's lowest index.
    let root: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    (0..n)
        .map(|i| {
            if core[i] {
                Some(root[i])
            } else {
                (0..n)
                    .filter(|&j| core[j] && close(i, j))
                    .map(|j| root[j])
                    .min()
            }
        })
        .collect()
}

/// Relabels clusters by order of first appearance.
pub fn canonical(labels: &[Option<usize>]) -> Vec<Option<usize>> {
    let mut seen: Vec<usize> = Vec::new();
    labels
        .iter()
        .map(|l| {
            l.map(|c| match seen.iter().position(|&s| s == c) {
                Some(k) => k,
                None => {
                    seen.push(c);
                    seen.len() - 1
                }
            })
        })
        .collect()
}

/// Weight of each link against the links contradicting it: those sharing
/// exactly one endpoint.
pub fn reference_weights(counts: &[LinkCount]) -> Vec<f64> {
    counts
        .iter()
        .map(|a| {
            let rivals: usize = counts
                .iter()
                .filter(|b| (b.instance == a.instance) != (b.label == a.label))
                .map(|b| b.count)
                .sum();
            a.count as f64 / (a.count + rivals) as f64
        })
        .collect()
}

pub fn max_weight_error(counts: &[LinkCount], got: &WithinGraph) -> f64 {
    reference_weights(counts)
        .iter()
        .zip(&got.edges)
        .map(|(r, e)| (r - e.weight).abs())
        .fold(0.0, f64::max)
}

use proptest::prelude::*;

/// Up to 64 points on a coarse 2-D grid (many exact ties and duplicates),
/// with eps and min_pts.
pub fn dbscan_case() -> impl Strategy<Value = (Vec<Vec<f64>>, f64, usize)> {
    (
        prop::collection::vec((0i32..8, 0i32..8), 0..=64),
        prop::sample::select(vec![0.5, 1.0, 1.5, 2.0, 3.0]),
        1usize..6,
    )
        .prop_map(|(pts, eps, m)| {
            let pts = pts
                .into_iter()
                .map(|(x, y)| vec![x as f64 * 0.5, y as f64 * 0.5])
                .collect();
            (pts, eps, m)
        })
}

/// Several small groups, each a random subset of its instance x label
/// pairs with counts in 1..=5. Node indices are global and disjoint
/// between groups.
pub fn link_groups() -> impl Strategy<Value = Vec<LinkCount>> {
    prop::collection::vec(
        (1usize..5, 1usize..5).prop_flat_map(|(ni, nl)| {
            prop::collection::vec(prop::option::weighted(0.8, 1usize..=5), ni * nl)
                .prop_map(move |cells| (ni, nl, cells))
        }),
        1..4,
    )
    .prop_map(|groups| {
        let mut out = Vec::new();
        let (mut ib, mut lb) = (0, 0);
        for (ni, nl, cells) in groups {
            for (k, c) in cells.into_iter().enumerate() {
                if let Some(count) = c {
                    out.push(LinkCount {
                        instance: ib + k / nl,
                        label: lb + k % nl,
                        count,
                    });
                }
            }
            ib += ni;
            lb += nl;
        }
        out
    })
}
