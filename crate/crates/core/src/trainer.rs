//! The training loop: per epoch, cluster the current embeddings into pseudo
//! labels, re-initialize the centroid memory, then iterate minibatches of
//! `C_B` clusters x `P` instances — generating support samples, taking a
//! gradient step on the sampled rows, and momentum-updating the memory.
//!
//! The "network" here is the embedding table itself, optimized directly by
//! SGD; all rows participate in clustering and training, while rows with the
//! QUERY/GALLERY role additionally serve retrieval evaluation at the end of
//! every epoch.
//!
//! Determinism contract: a config plus seed fixes every batch, direction
//! draw, gradient and metric bit-for-bit. Batch and direction randomness come
//! from separate seeded streams so configurations that never draw directions
//! (or draw them differently) still see identical batch sequences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cluster::{dbscan, ClusterState, NOISE};
use crate::config::{TrainConfig, TrainMode};
use crate::embedding::{l2_normalize, EmbeddingTable, FeatureVector};
use crate::error::{Error, Result};
use crate::loss::{total_loss_and_grad, BatchSample, LossParams};
use crate::memory::{MemoryBank, UpdateMode};
use crate::metrics::{cluster_quality, evaluate_retrieval, ClusterQuality, RetrievalScores};
use crate::pli::{
    generate_support, select_directions, DegreeSchedule, DirectionPolicy, SupportSample,
};
use crate::synth::{LabeledDataset, Split};

/// One epoch's summary row.
#[derive(Debug, Clone, Copy)]
pub struct RunRecord {
    pub epoch: usize,
    /// Cluster count of the end-of-epoch partition.
    pub n_clusters: usize,
    /// Noise count of the end-of-epoch partition.
    pub n_noise: usize,
    /// Mean sample-extension loss over the epoch's iterations.
    pub l_se: f64,
    /// Mean label-preserving loss over the epoch's iterations.
    pub l_lp: f64,
    /// End-of-epoch clustering quality against ground truth.
    pub quality: ClusterQuality,
    /// End-of-epoch retrieval scores on the QUERY/GALLERY rows.
    pub retrieval: RetrievalScores,
    /// Interpolation degree at the epoch's last planned iteration.
    pub lambda_end: f64,
}

impl RunRecord {
    pub const CSV_HEADER: &'static str = "epoch,n_clusters,n_noise,l_se,l_lp,\
fowlkes_mallows,adjusted_rand,adjusted_mutual_info,v_measure,map,cmc1,cmc5,cmc10,lambda";

    /// One CSV row matching [`Self::CSV_HEADER`]; floats at full precision.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.epoch,
            self.n_clusters,
            self.n_noise,
            self.l_se,
            self.l_lp,
            self.quality.fowlkes_mallows,
            self.quality.adjusted_rand,
            self.quality.adjusted_mutual_info,
            self.quality.v_measure,
            self.retrieval.map,
            self.retrieval.cmc[0],
            self.retrieval.cmc[1],
            self.retrieval.cmc[2],
            self.lambda_end,
        )
    }
}

/// Everything a finished run hands back.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub records: Vec<RunRecord>,
    /// The trained embedding table (same row order as the dataset).
    pub embeddings: EmbeddingTable,
}

/// Draws a PK-style minibatch: `c_b` clusters without replacement, then `p`
/// members per cluster (with replacement only when a cluster holds fewer than
/// `p`). Returns sample ids in draw order.
pub fn sample_batch<R: Rng>(
    labels: &[i64],
    c_b: usize,
    p: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if c_b == 0 || p == 0 {
        return Err(Error::Config("batch shape must be at least 1x1".into()));
    }
    // Member lists per cluster, ascending cluster id, ascending sample id.
    let mut members: std::collections::BTreeMap<i64, Vec<usize>> = std::collections::BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        if label != NOISE {
            members.entry(label).or_default().push(i);
        }
    }
    if members.is_empty() {
        return Err(Error::empty("no non-noise samples to batch"));
    }
    let cluster_ids: Vec<i64> = members.keys().copied().collect();
    let take = if cluster_ids.len() < c_b {
        log::warn!(
            "only {} clusters available for a {c_b}-cluster batch; shrinking",
            cluster_ids.len()
        );
        cluster_ids.len()
    } else {
        c_b
    };
    // Partial Fisher-Yates over the cluster list.
    let mut pool = cluster_ids;
    for i in 0..take {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(take);

    let mut batch = Vec::with_capacity(take * p);
    for cluster in pool {
        let m = &members[&cluster];
        if m.len() >= p {
            let mut idx: Vec<usize> = (0..m.len()).collect();
            for i in 0..p {
                let j = rng.gen_range(i..idx.len());
                idx.swap(i, j);
            }
            for &i in idx.iter().take(p) {
                batch.push(m[i]);
            }
        } else {
            batch.extend_from_slice(m);
            for _ in m.len()..p {
                batch.push(m[rng.gen_range(0..m.len())]);
            }
        }
    }
    Ok(batch)
}

/// Learning rate for a 1-based epoch under the step-decay schedule: the base
/// rate is multiplied by the decay factor once for every listed epoch already
/// completed.
fn epoch_lr(config: &TrainConfig, epoch: usize) -> f64 {
    let decays = config
        .lr_decay_epochs
        .iter()
        .filter(|&&d| epoch > d)
        .count();
    config.learning_rate * config.lr_decay_factor.powi(decays as i32)
}

/// End-of-epoch scores: clustering quality of `state` against ground truth,
/// retrieval over the QUERY/GALLERY rows of the current table.
fn evaluate_epoch(
    table: &EmbeddingTable,
    dataset: &LabeledDataset,
    state: &ClusterState,
) -> Result<(ClusterQuality, RetrievalScores)> {
    let quality = cluster_quality(&state.labels, &dataset.true_ids)?;
    let query_idx = dataset.indices_of(Split::Query);
    let gallery_idx = dataset.indices_of(Split::Gallery);
    if query_idx.is_empty() || gallery_idx.is_empty() {
        return Err(Error::degenerate(
            "training dataset needs QUERY and GALLERY rows for evaluation",
        ));
    }
    let mut q_emb = Vec::with_capacity(query_idx.len());
    let mut q_ids = Vec::with_capacity(query_idx.len());
    for &i in &query_idx {
        q_emb.push(table.row(i)?);
        q_ids.push(dataset.true_ids[i]);
    }
    let mut g_emb = Vec::with_capacity(gallery_idx.len());
    let mut g_ids = Vec::with_capacity(gallery_idx.len());
    for &i in &gallery_idx {
        g_emb.push(table.row(i)?);
        g_ids.push(dataset.true_ids[i]);
    }
    let retrieval = evaluate_retrieval(&q_emb, &g_emb, &q_ids, &g_ids)?;
    Ok((quality, retrieval))
}

/// Applies the post-step memory updates for one minibatch.
///
/// Features are the start-of-step values (`batch_features`), not the freshly
/// stepped rows, mirroring a single forward pass. HARDEST mode applies one
/// update per cluster with the least-similar member of the union of actual
/// and support samples; ALL mode applies one update per actual member and one
/// per support. Clusters are visited in ascending id, members in batch
/// (ascending sample id) order.
fn apply_memory_updates(
    bank: &mut MemoryBank,
    batch: &[BatchSample],
    batch_features: &[FeatureVector],
    supports: &[Vec<SupportSample>],
) -> Result<()> {
    let mut clusters: std::collections::BTreeMap<usize, Vec<usize>> =
        std::collections::BTreeMap::new();
    for (slot, sample) in batch.iter().enumerate() {
        clusters.entry(sample.cluster).or_default().push(slot);
    }
    match bank.update_mode() {
        UpdateMode::Hardest => {
            for (&cluster, slots) in &clusters {
                let mut candidates: Vec<FeatureVector> = Vec::new();
                for &s in slots {
                    candidates.push(batch_features[s].clone());
                }
                for &s in slots {
                    for sup in &supports[s] {
                        candidates.push(sup.vector.clone());
                    }
                }
                let hardest = bank.select_hardest(cluster, &candidates)?;
                let winner = candidates[hardest].clone();
                bank.momentum_update(cluster, &winner)?;
            }
        }
        UpdateMode::All => {
            for (&cluster, slots) in &clusters {
                let mut seen = std::collections::BTreeSet::new();
                for &s in slots {
                    // A repeated sample (small-cluster replacement draw)
                    // updates once; each of its supports updates once.
                    if seen.insert(batch[s].id) {
                        bank.momentum_update(cluster, &batch_features[s])?;
                        for sup in &supports[s] {
                            bank.momentum_update(cluster, &sup.vector)?;
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Trains the dataset's embedding table under `config` and reports one
/// [`RunRecord`] per epoch.
pub fn run(dataset: &LabeledDataset, config: &TrainConfig) -> Result<TrainResult> {
    dataset.validate()?;
    let distinct_ids: std::collections::BTreeSet<i64> =
        dataset.true_ids.iter().copied().collect();
    if distinct_ids.len() < 2 {
        return Err(Error::degenerate(
            "training needs at least 2 latent identities",
        ));
    }

    let n = dataset.len();
    let b = config.batch_size;
    let c_b = config.batch_size / config.instances_per_cluster;
    let p = config.instances_per_cluster;
    let iters_per_epoch = n.div_ceil(b);
    let total_iters = (config.epochs * iters_per_epoch) as u64;
    let schedule = DegreeSchedule::new(config.pli.schedule, config.pli.lambda0, total_iters)?;

    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed);
    batch_rng.set_stream(1);
    let mut direction_rng = ChaCha8Rng::seed_from_u64(config.seed);
    direction_rng.set_stream(2);

    let mut table = dataset.embeddings.clone();
    let mut state = dbscan(&table, config.cluster.eps, config.cluster.min_points)?;
    let lp_params = LossParams::new(
        config.loss.beta,
        config.loss.tau1,
        config.loss.tau2,
        config.loss.lp_variant,
    )?;

    let mut records = Vec::with_capacity(config.epochs);
    let mut t: u64 = 0;
    for epoch in 1..=config.epochs {
        let lr = epoch_lr(config, epoch);
        let mut se_sum = 0.0;
        let mut lp_sum = 0.0;
        let mut trained_iters = 0usize;

        if state.n_clusters < 2 {
            log::warn!(
                "epoch {epoch}: only {} cluster(s); skipping training this epoch",
                state.n_clusters
            );
            t += iters_per_epoch as u64;
        } else {
            let mut bank = MemoryBank::init_from_centroids(
                &state.centroids,
                config.memory.mu,
                config.memory.update_mode,
            )?;
            // Clamp the neighbor count when the epoch has few clusters.
            let k_eff = config.pli.k.min(state.n_clusters - 1);
            if config.mode == TrainMode::Ise && k_eff < config.pli.k {
                log::warn!(
                    "epoch {epoch}: {} clusters support only K={k_eff} (configured {})",
                    state.n_clusters,
                    config.pli.k
                );
            }
            let policy = DirectionPolicy::new(config.pli.direction, k_eff)?;

            for _ in 0..iters_per_epoch {
                t += 1;
                let lambda = schedule.degree(t);
                let mut ids = sample_batch(&state.labels, c_b, p, &mut batch_rng)?;
                ids.sort_unstable();
                let batch: Vec<BatchSample> = ids
                    .iter()
                    .map(|&id| BatchSample {
                        id,
                        cluster: state.labels[id] as usize,
                    })
                    .collect();
                // Start-of-step feature snapshot: the normalized read of each
                // row, exactly what the loss consumes. Support generation and
                // memory updates both work on these values.
                let batch_features: Vec<FeatureVector> = batch
                    .iter()
                    .map(|s| l2_normalize(table.row(s.id)?))
                    .collect::<Result<_>>()?;

                let supports: Vec<Vec<SupportSample>> = if config.mode == TrainMode::Ise {
                    let mut all = Vec::with_capacity(batch.len());
                    for (slot, sample) in batch.iter().enumerate() {
                        let targets = select_directions(
                            &batch_features[slot],
                            sample.cluster,
                            &bank,
                            &policy,
                            &mut direction_rng,
                        )?;
                        all.push(generate_support(
                            &batch_features[slot],
                            sample.id,
                            sample.cluster,
                            &bank,
                            &targets,
                            lambda,
                        )?);
                    }
                    all
                } else {
                    vec![Vec::new(); batch.len()]
                };

                let (terms, grad) =
                    total_loss_and_grad(&table, &batch, &supports, &bank, &lp_params)?;
                se_sum += terms.l_se;
                lp_sum += terms.l_lp;
                for (id, g) in grad.iter() {
                    table.add_to_row(id, -lr, g)?;
                }
                apply_memory_updates(&mut bank, &batch, &batch_features, &supports)?;
                trained_iters += 1;
            }
        }

        // End-of-epoch clustering doubles as next epoch's pseudo labels.
        state = dbscan(&table, config.cluster.eps, config.cluster.min_points)?;
        let (quality, retrieval) = evaluate_epoch(&table, dataset, &state)?;
        let n_noise = state.labels.iter().filter(|&&l| l == NOISE).count();
        let denom = trained_iters.max(1) as f64;
        records.push(RunRecord {
            epoch,
            n_clusters: state.n_clusters,
            n_noise,
            l_se: se_sum / denom,
            l_lp: lp_sum / denom,
            quality,
            retrieval,
            lambda_end: if config.mode == TrainMode::Ise {
                schedule.degree(t)
            } else {
                0.0
            },
        });
    }

    Ok(TrainResult {
        records,
        embeddings: table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{resolve, Settings};
    use crate::synth::{generate, ScenarioConfig};

    fn quick_settings() -> Settings {
        let mut s = Settings::new();
        s.set("epochs", 3);
        s.set("batch_size", 16);
        s.set("instances_per_cluster", 4);
        s.set("scenario.n_identities", 8);
        s.set("scenario.samples_per_identity", 10);
        s.set("scenario.d", 16);
        s.set("scenario.split_fraction", 0.25);
        s.set("scenario.overlap_pairs", 1);
        s
    }

    #[test]
    fn batch_shape_and_determinism() {
        let labels = vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, NOISE];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = sample_batch(&labels, 2, 4, &mut rng).unwrap();
        assert_eq!(batch.len(), 8);
        assert!(batch.iter().all(|&i| labels[i] != NOISE));
        // Two distinct clusters, four members each.
        let mut clusters: Vec<i64> = batch.iter().map(|&i| labels[i]).collect();
        clusters.dedup();
        assert_eq!(clusters.len(), 2);

        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(batch, sample_batch(&labels, 2, 4, &mut rng2).unwrap());
    }

    #[test]
    fn single_cluster_batch_takes_everything() {
        let labels = vec![0; 8];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = sample_batch(&labels, 1, 8, &mut rng).unwrap();
        let mut sorted = batch.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn tiny_cluster_repeats_members() {
        let labels = vec![0, 1, 1, 1, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = sample_batch(&labels, 2, 4, &mut rng).unwrap();
        assert_eq!(batch.len(), 8);
        let zeros = batch.iter().filter(|&&i| i == 0).count();
        assert_eq!(zeros, 4, "the singleton cluster repeats its only member");
    }

    #[test]
    fn too_few_clusters_shrinks_batch() {
        let labels = vec![0, 0, 0, 1, 1, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = sample_batch(&labels, 4, 2, &mut rng).unwrap();
        assert_eq!(batch.len(), 4); // 2 clusters x 2 instances
    }

    #[test]
    fn lr_decay_steps() {
        let config = resolve(&quick_settings()).unwrap().train;
        // Default decay at epoch 20, factor 0.1.
        assert_eq!(epoch_lr(&config, 1), 0.1);
        assert_eq!(epoch_lr(&config, 20), 0.1);
        assert!((epoch_lr(&config, 21) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn run_is_deterministic() {
        let config = resolve(&quick_settings()).unwrap();
        let dataset = generate(&config.scenario).unwrap();
        let a = run(&dataset, &config.train).unwrap();
        let b = run(&dataset, &config.train).unwrap();
        let rows_a: Vec<String> = a.records.iter().map(|r| r.csv_row()).collect();
        let rows_b: Vec<String> = b.records.iter().map(|r| r.csv_row()).collect();
        assert_eq!(rows_a, rows_b);
        for (ra, rb) in a.embeddings.rows().iter().zip(b.embeddings.rows()) {
            assert_eq!(ra.as_slice(), rb.as_slice());
        }
    }

    #[test]
    fn easy_scenario_reaches_perfect_scores() {
        let mut s = quick_settings();
        s.set("epochs", 5);
        s.set("scenario.split_fraction", 0.0);
        s.set("scenario.overlap_pairs", 0);
        s.set("scenario.intra_spread", 0.05);
        let config = resolve(&s).unwrap();
        let dataset = generate(&config.scenario).unwrap();
        let result = run(&dataset, &config.train).unwrap();
        let last = result.records.last().unwrap();
        assert_eq!(last.quality.adjusted_rand, 1.0);
        assert!(last.retrieval.map >= 0.99);
    }

    #[test]
    fn records_one_row_per_epoch() {
        let config = resolve(&quick_settings()).unwrap();
        let dataset = generate(&config.scenario).unwrap();
        let result = run(&dataset, &config.train).unwrap();
        assert_eq!(result.records.len(), 3);
        for (i, r) in result.records.iter().enumerate() {
            assert_eq!(r.epoch, i + 1);
        }
    }

    #[test]
    fn lambda_trajectory_monotone_to_half_lambda0() {
        let mut s = quick_settings();
        s.set("epochs", 6);
        let config = resolve(&s).unwrap();
        let dataset = generate(&config.scenario).unwrap();
        let result = run(&dataset, &config.train).unwrap();
        let mut prev = -1.0;
        for r in &result.records {
            assert!(r.lambda_end >= prev);
            prev = r.lambda_end;
        }
        assert!((prev - 0.5).abs() < 1e-9);
    }

    #[test]
    fn baseline_matches_zero_degree_ise() {
        let mut s = quick_settings();
        s.set("mode", "BASELINE");
        s.set("loss.beta", 0.0);
        let baseline_config = resolve(&s).unwrap();
        let mut s2 = quick_settings();
        s2.set("mode", "ISE");
        s2.set("pli.lambda0", 0.0);
        s2.set("loss.beta", 0.0);
        s2.set("pli.k", 1);
        let ise_config = resolve(&s2).unwrap();

        let dataset = generate(&baseline_config.scenario).unwrap();
        let a = run(&dataset, &baseline_config.train).unwrap();
        let b = run(&dataset, &ise_config.train).unwrap();
        let rows_a: Vec<String> = a.records.iter().map(|r| r.csv_row()).collect();
        let rows_b: Vec<String> = b.records.iter().map(|r| r.csv_row()).collect();
        assert_eq!(rows_a, rows_b);
        for (ra, rb) in a.embeddings.rows().iter().zip(b.embeddings.rows()) {
            assert_eq!(ra.as_slice(), rb.as_slice());
        }
    }

    #[test]
    fn scenario_with_one_identity_rejected() {
        let dataset = generate(&ScenarioConfig {
            n_identities: 1,
            overlap_pairs: 0,
            split_fraction: 0.0,
            ..ScenarioConfig::default()
        })
        .unwrap();
        let config = resolve(&quick_settings()).unwrap();
        assert!(run(&dataset, &config.train).is_err());
    }
}
