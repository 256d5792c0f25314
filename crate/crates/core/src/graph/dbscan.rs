//! Exact DBSCAN with Euclidean distance and deterministic border assignment.

/// Cluster membership per point; `None` marks noise.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub labels: Vec<Option<usize>>,
    pub sizes: Vec<usize>,
}

impl ClusterAssignment {
    pub fn num_clusters(&self) -> usize {
        self.sizes.len()
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    /// Size of the cluster holding point `i`, or 1 for a noise point.
    pub fn size_of(&self, i: usize) -> usize {
        self.labels[i].map_or(1, |c| self.sizes[c])
    }
}

#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Clusters `points` with radius `eps` (inclusive) and density threshold
/// `min_pts` (a point counts itself).
///
/// Points are visited in index order and a border point joins the first
/// cluster whose expansion reaches it.
pub fn dbscan<P: AsRef<[f64]>>(points: &[P], eps: f64, min_pts: usize) -> ClusterAssignment {
    let n = points.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| euclidean(points[i].as_ref(), points[j].as_ref()) <= eps)
                .collect()
        })
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut sizes = Vec::new();
    let mut queue = Vec::new();
    for start in 0..n {
        if labels[start].is_some() || !core[start] {
            continue;
        }
        let cluster = sizes.len();
        let mut size = 1;
        labels[start] = Some(cluster);
        queue.push(start);
        while let Some(p) = queue.pop() {
            for &q in &neighbors[p] {
                if labels[q].is_none() {
                    labels[q] = Some(cluster);
                    size += 1;
                    if core[q] {
                        queue.push(q);
                    }
                }
            }
        }
        sizes.push(size);
    }
    ClusterAssignment { labels, sizes }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_on_a_line_is_one_cluster() {
        let a = dbscan(&[[0.0], [0.5], [1.0]], 1.0, 2);
        assert_eq!(a.sizes, vec![3]);
        assert_eq!(a.noise_count(), 0);
    }

    #[test]
    fn isolated_points_are_noise() {
        let a = dbscan(&[[0.0], [5.0]], 1.0, 2);
        assert_eq!(a.num_clusters(), 0);
        assert_eq!(a.size_of(0), 1);
        assert_eq!(a.size_of(1), 1);
    }

    #[test]
    fn duplicated_points_are_never_noise() {
        let pts = [
            [0.0, 0.0],
            [0.0, 0.0],
            [9.0, 3.0],
            [9.0, 3.0],
            [-4.0, 2.0],
            [-4.0, 2.0],
        ];
        let a = dbscan(&pts, 1.0, 2);
        assert_eq!(a.noise_count(), 0);
        assert_eq!(a.sizes, vec![2, 2, 2]);
    }

    #[test]
    fn empty_input() {
        let pts: [[f64; 1]; 0] = [];
        let a = dbscan(&pts, 1.0, 2);
        assert!(a.labels.is_empty());
    }

    #[test]
    fn border_point_joins_first_cluster() {
        // x = 1.1 is a border point within reach of both dense runs.
        let pts = [
            [0.0],
            [0.1],
            [0.2],
            [0.3],
            [1.1],
            [1.9],
            [2.0],
            [2.1],
            [2.2],
        ];
        let a = dbscan(&pts, 0.85, 4);
        assert_eq!(a.labels[4], Some(0));
        assert_eq!(a.sizes, vec![5, 4]);
    }

    #[test]
    fn shared_borders_can_leave_a_cluster_below_min_pts() {
        // Two cores out of each other's reach share three border points.
        let pts = [
            [3.5, 1.5],
            [2.5, 1.5],
            [3.0, 1.5],
            [3.0, 1.0],
            [2.0, 1.0],
            [2.5, 1.5],
            [2.5, 1.0],
        ];
        let a = dbscan(&pts, 0.5, 5);
        assert_eq!(a.noise_count(), 0);
        assert_eq!(a.sizes, vec![5, 2]);
    }
}
