//! DBSCAN pseudo-label generation over pairwise cosine distance.
//!
//! Each epoch starts from the current embedding table: cluster it, drop the
//! noise, and treat cluster indices as labels for that epoch. Determinism is
//! part of the contract — clusters are numbered in first-discovery order
//! scanning sample ids ascending, and border points belong to the first
//! cluster whose expansion reaches them.

use crate::embedding::{l2_normalize, EmbeddingTable, FeatureVector};
use crate::error::{Error, Result};

/// Label for samples no cluster claims; such samples sit out the epoch.
pub const NOISE: i64 = -1;

/// One epoch's pseudo-label assignment plus per-cluster centroids.
#[derive(Debug, Clone)]
pub struct ClusterState {
    /// Per-sample label: `0..n_clusters` or [`NOISE`].
    pub labels: Vec<i64>,
    /// Number of clusters discovered.
    pub n_clusters: usize,
    /// L2-normalized mean vector per cluster, indexed by label.
    pub centroids: Vec<FeatureVector>,
}

impl ClusterState {
    /// Ids of the samples belonging to `cluster`, ascending.
    pub fn members(&self, cluster: i64) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == cluster)
            .map(|(i, _)| i)
            .collect()
    }

    /// Ids of all non-noise samples, ascending.
    pub fn trainable(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l != NOISE)
            .map(|(i, _)| i)
            .collect()
    }
}

/// DBSCAN over `d(u, v) = 1 - cosine_sim(u, v)` with self-inclusive
/// neighborhoods (`d <= eps`).
pub fn dbscan(table: &EmbeddingTable, eps: f64, min_points: usize) -> Result<ClusterState> {
    if table.is_empty() {
        return Err(Error::empty("dbscan over empty table"));
    }
    if !(eps > 0.0) {
        return Err(Error::Config(format!("cluster.eps must be > 0, got {eps}")));
    }
    if min_points < 1 {
        return Err(Error::Config("cluster.min_points must be >= 1".into()));
    }
    let n = table.len();
    let rows = table.rows();

    // Precompute normalized rows once; pairwise distances follow from dots.
    let mut unit = Vec::with_capacity(n);
    for (i, r) in rows.iter().enumerate() {
        unit.push(l2_normalize(r).map_err(|_| {
            Error::Invariant(format!("sample {i} has zero norm, cannot cluster"))
        })?);
    }
    let neighbors_of = |i: usize| -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for j in 0..n {
            let d = 1.0 - unit[i].dot(&unit[j])?;
            if d <= eps {
                out.push(j);
            }
        }
        Ok(out)
    };

    const UNVISITED: i64 = -2;
    let mut labels = vec![UNVISITED; n];
    let mut n_clusters = 0usize;
    for seed in 0..n {
        if labels[seed] != UNVISITED {
            continue;
        }
        let seed_neighbors = neighbors_of(seed)?;
        if seed_neighbors.len() < min_points {
            labels[seed] = NOISE;
            continue;
        }
        let cluster = n_clusters as i64;
        n_clusters += 1;
        labels[seed] = cluster;
        // Expansion order does not affect the resulting partition: membership
        // is a reachability closure, and border points go to the first cluster
        // expanded at all, which the ascending seed scan already fixes.
        let mut frontier = seed_neighbors;
        while let Some(q) = frontier.pop() {
            if labels[q] == NOISE {
                labels[q] = cluster;
            }
            if labels[q] != UNVISITED {
                continue;
            }
            labels[q] = cluster;
            let q_neighbors = neighbors_of(q)?;
            if q_neighbors.len() >= min_points {
                frontier.extend(q_neighbors);
            }
        }
    }

    let centroids = compute_centroids(table, &labels, n_clusters)?;
    Ok(ClusterState {
        labels,
        n_clusters,
        centroids,
    })
}

/// Per-cluster mean of member vectors, l2-normalized. Labels must cover
/// `0..n_clusters` with no gaps.
pub fn compute_centroids(
    table: &EmbeddingTable,
    labels: &[i64],
    n_clusters: usize,
) -> Result<Vec<FeatureVector>> {
    if labels.len() != table.len() {
        return Err(Error::DimensionMismatch {
            expected: table.len(),
            got: labels.len(),
        });
    }
    let d = table.dim();
    let mut sums = vec![vec![0.0; d]; n_clusters];
    let mut counts = vec![0usize; n_clusters];
    for (i, &label) in labels.iter().enumerate() {
        if label == NOISE {
            continue;
        }
        let c = label as usize;
        if c >= n_clusters {
            return Err(Error::Invariant(format!(
                "label {label} exceeds cluster count {n_clusters}"
            )));
        }
        for (s, v) in sums[c].iter_mut().zip(table.row(i)?.as_slice()) {
            *s += v;
        }
        counts[c] += 1;
    }
    let mut centroids = Vec::with_capacity(n_clusters);
    for (c, (sum, count)) in sums.into_iter().zip(counts).enumerate() {
        if count == 0 {
            return Err(Error::Invariant(format!("cluster {c} has no members")));
        }
        let mean = FeatureVector::new(sum.into_iter().map(|s| s / count as f64).collect())?;
        centroids.push(l2_normalize(&mean).map_err(|_| {
            Error::Invariant(format!("cluster {c} centroid has zero norm"))
        })?);
    }
    Ok(centroids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[&[f64]]) -> EmbeddingTable {
        EmbeddingTable::new(
            rows.iter()
                .map(|r| FeatureVector::new(r.to_vec()).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn two_tight_blobs_two_clusters() {
        // Ten copies near (1,0), ten near (0,1): orthogonal, far beyond eps.
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for k in 0..10 {
            rows.push(vec![1.0, 0.001 * k as f64]);
        }
        for k in 0..10 {
            rows.push(vec![0.001 * k as f64, 1.0]);
        }
        let t = EmbeddingTable::new(
            rows.into_iter()
                .map(|r| FeatureVector::new(r).unwrap())
                .collect(),
        )
        .unwrap();
        let state = dbscan(&t, 0.1, 4).unwrap();
        assert_eq!(state.n_clusters, 2);
        assert!(state.labels.iter().all(|&l| l != NOISE));
        assert_eq!(&state.labels[..10], &[0; 10]);
        assert_eq!(&state.labels[10..], &[1; 10]);
    }

    #[test]
    fn isolated_point_is_noise() {
        let mut rows: Vec<Vec<f64>> = (0..6).map(|k| vec![1.0, 0.001 * k as f64]).collect();
        rows.push(vec![-1.0, 0.0]); // antipodal, distance 2 > eps
        let t = EmbeddingTable::new(
            rows.into_iter()
                .map(|r| FeatureVector::new(r).unwrap())
                .collect(),
        )
        .unwrap();
        let state = dbscan(&t, 0.1, 4).unwrap();
        assert_eq!(state.labels[6], NOISE);
        assert_eq!(state.n_clusters, 1);
    }

    #[test]
    fn empty_table_errors_upstream() {
        // EmbeddingTable cannot be empty by construction; dbscan's own guard
        // is unreachable through the public API but kept for defense.
        assert!(EmbeddingTable::new(vec![]).is_err());
    }

    #[test]
    fn centroid_of_identical_members() {
        let t = table(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let c = compute_centroids(&t, &[0, 0], 1).unwrap();
        assert_eq!(c[0].as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn centroid_of_orthogonal_members() {
        let t = table(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let c = compute_centroids(&t, &[0, 0], 1).unwrap();
        let e = 1.0 / 2f64.sqrt();
        assert!((c[0].as_slice()[0] - e).abs() < 1e-15);
        assert!((c[0].as_slice()[1] - e).abs() < 1e-15);
    }

    #[test]
    fn centroid_hand_value() {
        // Mean of (2,0),(0,4),(2,2) is (4/3, 2); normalized ≈ (0.5547, 0.8321).
        let t = table(&[&[2.0, 0.0], &[0.0, 4.0], &[2.0, 2.0]]);
        let c = compute_centroids(&t, &[0, 0, 0], 1).unwrap();
        let norm = (4.0f64 / 3.0).hypot(2.0);
        assert!((c[0].as_slice()[0] - (4.0 / 3.0) / norm).abs() < 1e-15);
        assert!((c[0].as_slice()[1] - 2.0 / norm).abs() < 1e-15);
        assert!((c[0].as_slice()[0] - 0.5547).abs() < 1e-4);
        assert!((c[0].as_slice()[1] - 0.8321).abs() < 1e-4);
    }

    #[test]
    fn members_listing_ascending() {
        let t = table(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.01]]);
        let state = ClusterState {
            labels: vec![0, NOISE, 0],
            n_clusters: 1,
            centroids: compute_centroids(&t, &[0, NOISE, 0], 1).unwrap(),
        };
        assert_eq!(state.members(0), vec![0, 2]);
        assert_eq!(state.trainable(), vec![0, 2]);
    }
}
