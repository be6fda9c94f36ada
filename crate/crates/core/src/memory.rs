//! Cluster-centroid memory with momentum updates.
//!
//! The bank holds one entry per cluster, re-initialized from the centroids at
//! the start of every epoch. During the epoch, entries drift toward batch
//! samples under `m <- mu*m + (1-mu)*f` followed by re-normalization; either
//! the batch-hardest member of each cluster drives the update, or every
//! member does.

use crate::embedding::{cosine_sim, l2_normalize, FeatureVector};
use crate::error::{Error, Result};

/// Which batch samples feed the momentum update for a cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    /// One update per (batch, cluster): the member least similar to the entry.
    Hardest,
    /// One update per member sample.
    All,
}

impl std::str::FromStr for UpdateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "HARDEST" => Ok(UpdateMode::Hardest),
            "ALL" => Ok(UpdateMode::All),
            _ => Err(Error::Config(format!(
                "unknown memory.update_mode {s:?} (expected HARDEST or ALL)"
            ))),
        }
    }
}

impl std::fmt::Display for UpdateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UpdateMode::Hardest => "HARDEST",
            UpdateMode::All => "ALL",
        })
    }
}

/// Per-cluster centroid memory.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    entries: Vec<FeatureVector>,
    mu: f64,
    update_mode: UpdateMode,
}

impl MemoryBank {
    /// Copies the epoch's centroids into the bank.
    pub fn init_from_centroids(
        centroids: &[FeatureVector],
        mu: f64,
        update_mode: UpdateMode,
    ) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::empty("memory bank needs at least one centroid"));
        }
        if !(0.0..=1.0).contains(&mu) {
            return Err(Error::Config(format!(
                "memory.mu must lie in [0, 1], got {mu}"
            )));
        }
        Ok(MemoryBank {
            entries: centroids.to_vec(),
            mu,
            update_mode,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn update_mode(&self) -> UpdateMode {
        self.update_mode
    }

    pub fn entry(&self, cluster_id: usize) -> Result<&FeatureVector> {
        self.entries.get(cluster_id).ok_or(Error::OutOfRange {
            what: "cluster id",
            index: cluster_id,
            len: self.entries.len(),
        })
    }

    pub fn entries(&self) -> &[FeatureVector] {
        &self.entries
    }

    /// `entry <- l2_normalize(mu*entry + (1-mu)*f)`.
    pub fn momentum_update(&mut self, cluster_id: usize, f: &FeatureVector) -> Result<()> {
        let mu = self.mu;
        let len = self.entries.len();
        let entry = self.entries.get_mut(cluster_id).ok_or(Error::OutOfRange {
            what: "cluster id",
            index: cluster_id,
            len,
        })?;
        let blended = entry.scale(mu).axpy(1.0 - mu, f)?;
        *entry = l2_normalize(&blended).map_err(|_| {
            Error::degenerate("momentum update produced a zero-norm entry")
        })?;
        Ok(())
    }

    /// Index into `members` of the sample least similar to entry `cluster_id`;
    /// ties go to the lowest index.
    pub fn select_hardest(
        &self,
        cluster_id: usize,
        members: &[FeatureVector],
    ) -> Result<usize> {
        if members.is_empty() {
            return Err(Error::empty("hardest selection over empty member list"));
        }
        let entry = self.entry(cluster_id)?;
        let mut best = 0usize;
        let mut best_sim = f64::INFINITY;
        for (i, m) in members.iter().enumerate() {
            let sim = cosine_sim(entry, m)?;
            if sim < best_sim {
                best_sim = sim;
                best = i;
            }
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(values: &[f64]) -> FeatureVector {
        FeatureVector::new(values.to_vec()).unwrap()
    }

    fn bank(entries: &[&[f64]], mu: f64) -> MemoryBank {
        let centroids: Vec<_> = entries.iter().map(|e| fv(e)).collect();
        MemoryBank::init_from_centroids(&centroids, mu, UpdateMode::Hardest).unwrap()
    }

    #[test]
    fn init_copies_centroids() {
        let b = bank(&[&[1.0, 0.0], &[0.0, 1.0]], 0.2);
        assert_eq!(b.entry(0).unwrap().as_slice(), &[1.0, 0.0]);
        assert_eq!(b.entry(1).unwrap().as_slice(), &[0.0, 1.0]);
        for c in 0..2 {
            let e = b.entry(c).unwrap();
            assert_eq!(cosine_sim(e, e).unwrap(), 1.0);
        }
    }

    #[test]
    fn init_rejects_empty() {
        assert!(MemoryBank::init_from_centroids(&[], 0.2, UpdateMode::All).is_err());
    }

    #[test]
    fn update_with_full_momentum_is_identity() {
        let mut b = bank(&[&[1.0, 0.0]], 1.0);
        b.momentum_update(0, &fv(&[0.0, 1.0])).unwrap();
        assert_eq!(b.entry(0).unwrap().as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn update_with_zero_momentum_replaces() {
        let mut b = bank(&[&[1.0, 0.0]], 0.0);
        b.momentum_update(0, &fv(&[0.0, 2.0])).unwrap();
        assert_eq!(b.entry(0).unwrap().as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn update_hand_value() {
        // 0.2*(1,0) + 0.8*(0,1) = (0.2, 0.8); norm sqrt(0.68).
        let mut b = bank(&[&[1.0, 0.0]], 0.2);
        b.momentum_update(0, &fv(&[0.0, 1.0])).unwrap();
        let e = b.entry(0).unwrap().as_slice();
        let n = 0.68f64.sqrt();
        assert!((e[0] - 0.2 / n).abs() < 1e-15);
        assert!((e[1] - 0.8 / n).abs() < 1e-15);
        assert!((e[0] - 0.2425).abs() < 1e-4);
        assert!((e[1] - 0.9701).abs() < 1e-4);
    }

    #[test]
    fn entries_stay_unit_norm() {
        let mut b = bank(&[&[1.0, 0.0]], 0.2);
        for k in 0..50 {
            b.momentum_update(0, &fv(&[k as f64 + 0.5, 1.0])).unwrap();
            assert!((b.entry(0).unwrap().norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn out_of_range_cluster_rejected() {
        let mut b = bank(&[&[1.0, 0.0]], 0.2);
        assert!(b.momentum_update(1, &fv(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn hardest_single_member() {
        let b = bank(&[&[1.0, 0.0]], 0.2);
        assert_eq!(b.select_hardest(0, &[fv(&[0.3, 0.4])]).unwrap(), 0);
    }

    #[test]
    fn hardest_orthogonal_beats_aligned() {
        let b = bank(&[&[1.0, 0.0]], 0.2);
        let members = [fv(&[1.0, 0.0]), fv(&[0.0, 1.0])];
        assert_eq!(b.select_hardest(0, &members).unwrap(), 1);
    }

    #[test]
    fn hardest_argmin_of_similarities() {
        let b = bank(&[&[1.0, 0.0]], 0.2);
        let members = [fv(&[0.9, 0.436]), fv(&[0.8, 0.6]), fv(&[0.6, 0.8])];
        assert_eq!(b.select_hardest(0, &members).unwrap(), 2);
    }

    #[test]
    fn hardest_tie_takes_lowest_index() {
        let b = bank(&[&[1.0, 0.0]], 0.2);
        // Same direction twice: equal similarity, first wins.
        let members = [fv(&[0.0, 2.0]), fv(&[0.0, 1.0])];
        assert_eq!(b.select_hardest(0, &members).unwrap(), 0);
    }
}
