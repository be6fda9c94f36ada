//! Progressive linear interpolation: support-sample generation.
//!
//! A support sample walks a real sample part of the way from its own cluster
//! centroid toward a neighboring cluster's centroid: `f~ = f + lambda * df`
//! with `df = (c* - c) / 2`. The walk length `lambda` grows over training
//! according to a schedule, and the neighboring clusters are picked per
//! sample by a direction policy over the memory bank.

use crate::embedding::{cosine_sim, FeatureVector};
use crate::error::{Error, Result};
use crate::memory::MemoryBank;

/// How `lambda` evolves with the iteration count `t` out of `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// `lambda0 / 2` throughout.
    Constant,
    /// `lambda0 * t / (2T)`.
    Linear,
    /// `lambda0 * t^2 / (2T^2)`.
    Square,
    /// `(lambda0 / 2) * ln((e - 1) * t / T + 1)`.
    Logarithm,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CONSTANT" => Ok(ScheduleKind::Constant),
            "LINEAR" => Ok(ScheduleKind::Linear),
            "SQUARE" => Ok(ScheduleKind::Square),
            "LOGARITHM" => Ok(ScheduleKind::Logarithm),
            _ => Err(Error::Config(format!(
                "unknown pli.schedule {s:?} (expected CONSTANT, LINEAR, SQUARE or LOGARITHM)"
            ))),
        }
    }
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScheduleKind::Constant => "CONSTANT",
            ScheduleKind::Linear => "LINEAR",
            ScheduleKind::Square => "SQUARE",
            ScheduleKind::Logarithm => "LOGARITHM",
        })
    }
}

/// Interpolation-degree schedule: `lambda(t)` in `[0, lambda0/2]`,
/// non-decreasing in `t`.
#[derive(Debug, Clone, Copy)]
pub struct DegreeSchedule {
    pub kind: ScheduleKind,
    pub lambda0: f64,
    /// Total iterations `T` over the whole run.
    pub total_iterations: u64,
}

impl DegreeSchedule {
    pub fn new(kind: ScheduleKind, lambda0: f64, total_iterations: u64) -> Result<Self> {
        if !lambda0.is_finite() || lambda0 < 0.0 {
            return Err(Error::Config(format!(
                "pli.lambda0 must be finite and >= 0, got {lambda0}"
            )));
        }
        if total_iterations == 0 {
            return Err(Error::Config("schedule needs at least one iteration".into()));
        }
        Ok(DegreeSchedule {
            kind,
            lambda0,
            total_iterations,
        })
    }

    /// `lambda(t)`. Iterations past `T` clamp to `T` with a warning, so a run
    /// extended beyond its planned length keeps the terminal degree.
    pub fn degree(&self, t: u64) -> f64 {
        let t = if t > self.total_iterations {
            log::warn!(
                "degree schedule queried at t={t} past T={}; clamping",
                self.total_iterations
            );
            self.total_iterations
        } else {
            t
        };
        let ratio = t as f64 / self.total_iterations as f64;
        let half = 0.5 * self.lambda0;
        match self.kind {
            ScheduleKind::Constant => half,
            ScheduleKind::Linear => half * ratio,
            ScheduleKind::Square => half * ratio * ratio,
            ScheduleKind::Logarithm => {
                half * ((std::f64::consts::E - 1.0) * ratio + 1.0).ln()
            }
        }
    }
}

/// How target clusters are picked for a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectionKind {
    /// The `K` clusters most cosine-similar to `f`.
    Nearest,
    /// `K` distinct clusters drawn uniformly.
    Random,
    /// The `K` clusters least cosine-similar to `f`.
    Farthest,
}

impl std::str::FromStr for DirectionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "NEAREST" => Ok(DirectionKind::Nearest),
            "RANDOM" => Ok(DirectionKind::Random),
            "FARTHEST" => Ok(DirectionKind::Farthest),
            _ => Err(Error::Config(format!(
                "unknown pli.direction {s:?} (expected NEAREST, RANDOM or FARTHEST)"
            ))),
        }
    }
}

impl std::fmt::Display for DirectionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DirectionKind::Nearest => "NEAREST",
            DirectionKind::Random => "RANDOM",
            DirectionKind::Farthest => "FARTHEST",
        })
    }
}

/// Target-cluster selection policy: `kind` plus neighbor count `K`.
#[derive(Debug, Clone, Copy)]
pub struct DirectionPolicy {
    pub kind: DirectionKind,
    pub k: usize,
}

impl DirectionPolicy {
    pub fn new(kind: DirectionKind, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("pli.k must be >= 1".into()));
        }
        Ok(DirectionPolicy { kind, k })
    }
}

/// An interpolated sample plus everything needed to reconstruct it.
#[derive(Debug, Clone)]
pub struct SupportSample {
    /// `f + lambda * df`, NOT normalized (losses normalize on read).
    pub vector: FeatureVector,
    /// Id of the real sample `f`.
    pub source_id: usize,
    /// Cluster of `f` (the pseudo label the support inherits).
    pub source_cluster: usize,
    /// Cluster whose centroid the interpolation walks toward.
    pub target_cluster: usize,
    /// The `lambda` the support was generated with.
    pub lambda_used: f64,
}

/// Picks `policy.k` distinct target clusters for `f`, never its own.
///
/// NEAREST returns ids by descending similarity, FARTHEST by ascending;
/// similarity ties break toward the lower cluster id. RANDOM draws without
/// replacement from `rng`.
pub fn select_directions<R: rand::Rng>(
    f: &FeatureVector,
    own_cluster: usize,
    bank: &MemoryBank,
    policy: &DirectionPolicy,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let c = bank.len();
    if c <= policy.k {
        return Err(Error::Config(format!(
            "direction policy needs K < cluster count, got K={} with C={c}",
            policy.k
        )));
    }
    let mut candidates: Vec<usize> = (0..c).filter(|&id| id != own_cluster).collect();
    match policy.kind {
        DirectionKind::Random => {
            // Partial Fisher-Yates: the first k slots become the draw.
            for i in 0..policy.k {
                let j = rng.gen_range(i..candidates.len());
                candidates.swap(i, j);
            }
            candidates.truncate(policy.k);
            Ok(candidates)
        }
        DirectionKind::Nearest | DirectionKind::Farthest => {
            let mut scored = Vec::with_capacity(candidates.len());
            for id in candidates {
                scored.push((cosine_sim(f, bank.entry(id)?)?, id));
            }
            scored.sort_by(|a, b| {
                let order = a.0.partial_cmp(&b.0).expect("similarities are finite");
                match policy.kind {
                    DirectionKind::Farthest => order.then(a.1.cmp(&b.1)),
                    _ => order.reverse().then(a.1.cmp(&b.1)),
                }
            });
            Ok(scored.into_iter().take(policy.k).map(|(_, id)| id).collect())
        }
    }
}

/// Builds one support sample per target cluster:
/// `df = (bank[target] - bank[source_cluster]) / 2`, `f~ = f + lambda * df`.
pub fn generate_support(
    f: &FeatureVector,
    source_id: usize,
    source_cluster: usize,
    bank: &MemoryBank,
    target_clusters: &[usize],
    lambda: f64,
) -> Result<Vec<SupportSample>> {
    if lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    let own = bank.entry(source_cluster)?;
    let mut out = Vec::with_capacity(target_clusters.len());
    for &target in target_clusters {
        let delta = bank.entry(target)?.sub(own)?.scale(0.5);
        out.push(SupportSample {
            vector: f.axpy(lambda, &delta)?,
            source_id,
            source_cluster,
            target_cluster: target,
            lambda_used: lambda,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::UpdateMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fv(values: &[f64]) -> FeatureVector {
        FeatureVector::new(values.to_vec()).unwrap()
    }

    fn bank(entries: &[&[f64]]) -> MemoryBank {
        let centroids: Vec<_> = entries.iter().map(|e| fv(e)).collect();
        MemoryBank::init_from_centroids(&centroids, 0.2, UpdateMode::Hardest).unwrap()
    }

    #[test]
    fn logarithm_starts_at_zero() {
        let s = DegreeSchedule::new(ScheduleKind::Logarithm, 1.0, 100).unwrap();
        assert_eq!(s.degree(0), 0.0);
    }

    #[test]
    fn logarithm_ends_at_half_lambda0() {
        let s = DegreeSchedule::new(ScheduleKind::Logarithm, 1.0, 100).unwrap();
        assert!((s.degree(100) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn linear_midpoint() {
        let s = DegreeSchedule::new(ScheduleKind::Linear, 1.0, 100).unwrap();
        assert!((s.degree(50) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn constant_everywhere() {
        let s = DegreeSchedule::new(ScheduleKind::Constant, 1.0, 100).unwrap();
        for t in [0, 1, 50, 100] {
            assert_eq!(s.degree(t), 0.5);
        }
    }

    #[test]
    fn square_midpoint() {
        let s = DegreeSchedule::new(ScheduleKind::Square, 1.0, 100).unwrap();
        assert!((s.degree(50) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn past_the_end_clamps() {
        let s = DegreeSchedule::new(ScheduleKind::Linear, 2.0, 10).unwrap();
        assert_eq!(s.degree(25), s.degree(10));
    }

    #[test]
    fn all_kinds_monotone_and_bounded() {
        for kind in [
            ScheduleKind::Constant,
            ScheduleKind::Linear,
            ScheduleKind::Square,
            ScheduleKind::Logarithm,
        ] {
            let s = DegreeSchedule::new(kind, 1.7, 1000).unwrap();
            let mut prev = -1.0;
            for t in 0..=1000 {
                let l = s.degree(t);
                assert!(l >= prev, "{kind} not monotone at t={t}");
                assert!((0.0..=0.85 + 1e-12).contains(&l));
                prev = l;
            }
        }
    }

    #[test]
    fn nearest_with_two_clusters_picks_the_other() {
        let b = bank(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let policy = DirectionPolicy::new(DirectionKind::Nearest, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let picks = select_directions(&fv(&[1.0, 0.0]), 0, &b, &policy, &mut rng).unwrap();
        assert_eq!(picks, vec![1]);
    }

    #[test]
    fn nearest_and_farthest_disagree() {
        let b = bank(&[&[1.0, 0.0], &[0.9, 0.436], &[0.0, 1.0]]);
        let f = fv(&[1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let nearest = DirectionPolicy::new(DirectionKind::Nearest, 1).unwrap();
        let farthest = DirectionPolicy::new(DirectionKind::Farthest, 1).unwrap();
        assert_eq!(
            select_directions(&f, 0, &b, &nearest, &mut rng).unwrap(),
            vec![1]
        );
        assert_eq!(
            select_directions(&f, 0, &b, &farthest, &mut rng).unwrap(),
            vec![2]
        );
    }

    #[test]
    fn random_is_seed_reproducible() {
        let b = bank(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0], &[0.0, -1.0]]);
        let policy = DirectionPolicy::new(DirectionKind::Random, 2).unwrap();
        let f = fv(&[1.0, 0.0]);
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b2 = ChaCha8Rng::seed_from_u64(7);
        let first = select_directions(&f, 0, &b, &policy, &mut a).unwrap();
        let second = select_directions(&f, 0, &b, &policy, &mut b2).unwrap();
        assert_eq!(first, second);
        assert_eq!(first.len(), 2);
        assert!(!first.contains(&0));
        assert_ne!(first[0], first[1]);
    }

    #[test]
    fn too_few_clusters_is_config_error() {
        let b = bank(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let policy = DirectionPolicy::new(DirectionKind::Nearest, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(select_directions(&fv(&[1.0, 0.0]), 0, &b, &policy, &mut rng).is_err());
    }

    #[test]
    fn same_target_as_source_is_identity() {
        let b = bank(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let f = fv(&[0.6, 0.8]);
        let s = generate_support(&f, 3, 0, &b, &[0], 1.0).unwrap();
        assert_eq!(s[0].vector, f);
    }

    #[test]
    fn zero_lambda_is_identity() {
        let b = bank(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let f = fv(&[0.6, 0.8]);
        let s = generate_support(&f, 3, 0, &b, &[1], 0.0).unwrap();
        assert_eq!(s[0].vector, f);
    }

    #[test]
    fn hand_interpolation() {
        // df = ((0,1)-(1,0))/2 = (-0.5, 0.5); f~ = (1,0) + 1.0*df = (0.5, 0.5).
        let b = bank(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let s = generate_support(&fv(&[1.0, 0.0]), 0, 0, &b, &[1], 1.0).unwrap();
        assert_eq!(s[0].vector.as_slice(), &[0.5, 0.5]);
        assert_eq!(s[0].target_cluster, 1);
        assert_eq!(s[0].lambda_used, 1.0);
    }

    #[test]
    fn one_support_per_target() {
        let b = bank(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0]]);
        let s = generate_support(&fv(&[1.0, 0.0]), 0, 0, &b, &[1, 2], 0.3).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].target_cluster, 1);
        assert_eq!(s[1].target_cluster, 2);
    }

    #[test]
    fn step_length_matches_lambda() {
        let b = bank(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let f = fv(&[0.6, 0.8]);
        for lambda in [0.1, 0.5, 1.3] {
            let s = generate_support(&f, 0, 0, &b, &[1], lambda).unwrap();
            let delta_norm = b
                .entry(1)
                .unwrap()
                .sub(b.entry(0).unwrap())
                .unwrap()
                .scale(0.5)
                .norm();
            let step = s[0].vector.sub(&f).unwrap().norm();
            assert!((step - lambda * delta_norm).abs() < 1e-12);
        }
    }
}
