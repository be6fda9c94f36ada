//! Clustering-quality scores and retrieval evaluation.
//!
//! The four cluster metrics (Fowlkes-Mallows, adjusted Rand, adjusted mutual
//! information, V-measure) follow the standard toolkit semantics: natural
//! logarithms, exact hypergeometric expected-MI for AMI with arithmetic-mean
//! normalization, and the usual degenerate-case conventions. Retrieval is
//! plain cosine ranking with mean average precision and CMC at ranks 1/5/10,
//! no re-ranking.

use std::collections::BTreeMap;

use crate::cluster::NOISE;
use crate::embedding::FeatureVector;
use crate::error::{Error, Result};

/// The four clustering scores against ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterQuality {
    pub fowlkes_mallows: f64,
    pub adjusted_rand: f64,
    pub adjusted_mutual_info: f64,
    pub v_measure: f64,
}

/// CMC ranks reported alongside mAP.
pub const CMC_RANKS: [usize; 3] = [1, 5, 10];

/// Below this gap between the AMI normalizer and the expected mutual
/// information, the chance-corrected score is treated as degenerate (0/0 in
/// exact arithmetic). Wide enough to absorb log-sum rounding residue, orders
/// of magnitude below any genuine gap.
const DEGENERATE_AMI_GAP: f64 = 1e-12;

/// Retrieval scores: mean average precision and CMC at [`CMC_RANKS`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalScores {
    pub map: f64,
    pub cmc: [f64; 3],
}

/// Contingency table of two label arrays with marginals, built over samples
/// where both labels are non-negative.
struct Contingency {
    /// cells[(true_label, pred_label)] = joint count
    cells: BTreeMap<(i64, i64), i64>,
    /// Row marginals (true labels).
    a: BTreeMap<i64, i64>,
    /// Column marginals (predicted labels).
    b: BTreeMap<i64, i64>,
    n: i64,
}

impl Contingency {
    fn build(pred: &[i64], truth: &[i64]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::DimensionMismatch {
                expected: truth.len(),
                got: pred.len(),
            });
        }
        let mut cells = BTreeMap::new();
        let mut a = BTreeMap::new();
        let mut b = BTreeMap::new();
        let mut n = 0i64;
        for (&p, &t) in pred.iter().zip(truth) {
            if p == NOISE || p < 0 || t < 0 {
                continue;
            }
            *cells.entry((t, p)).or_insert(0) += 1;
            *a.entry(t).or_insert(0) += 1;
            *b.entry(p).or_insert(0) += 1;
            n += 1;
        }
        if n < 2 {
            return Err(Error::degenerate(
                "cluster quality needs at least 2 non-noise samples",
            ));
        }
        Ok(Contingency { cells, a, b, n })
    }
}

fn choose2(k: i64) -> f64 {
    (k as f64) * (k as f64 - 1.0) / 2.0
}

fn entropy_nat(marginals: &BTreeMap<i64, i64>, n: f64) -> f64 {
    marginals
        .values()
        .map(|&v| {
            let p = v as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Natural-log factorial table: `lnfact[k] = ln(k!)` for `k = 0..=n`.
fn ln_factorials(n: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(n + 1);
    t.push(0.0);
    for k in 1..=n {
        t.push(t[k - 1] + (k as f64).ln());
    }
    t
}

/// Exact expected mutual information of the hypergeometric null model,
/// evaluated with a log-factorial table.
fn expected_mutual_info(c: &Contingency, lnfact: &[f64]) -> f64 {
    let n = c.n;
    let nf = n as f64;
    let mut emi = 0.0;
    for &ai in c.a.values() {
        for &bj in c.b.values() {
            let lo = std::cmp::max(1, ai + bj - n);
            let hi = std::cmp::min(ai, bj);
            for nij in lo..=hi {
                let nijf = nij as f64;
                let log_term = ((nf * nijf) / (ai as f64 * bj as f64)).ln();
                let log_prob = lnfact[ai as usize] + lnfact[bj as usize]
                    + lnfact[(n - ai) as usize]
                    + lnfact[(n - bj) as usize]
                    - lnfact[n as usize]
                    - lnfact[nij as usize]
                    - lnfact[(ai - nij) as usize]
                    - lnfact[(bj - nij) as usize]
                    - lnfact[(n - ai - bj + nij) as usize];
                emi += (nijf / nf) * log_term * log_prob.exp();
            }
        }
    }
    emi
}

/// The four clustering scores of `pred_labels` against `true_labels`.
/// Samples labeled noise (or any negative label) on either side are excluded
/// before scoring.
pub fn cluster_quality(pred_labels: &[i64], true_labels: &[i64]) -> Result<ClusterQuality> {
    let c = Contingency::build(pred_labels, true_labels)?;
    let nf = c.n as f64;

    // Unordered pair counts.
    let tp: f64 = c.cells.values().map(|&v| choose2(v)).sum();
    let same_true: f64 = c.a.values().map(|&v| choose2(v)).sum();
    let same_pred: f64 = c.b.values().map(|&v| choose2(v)).sum();

    let fowlkes_mallows = if tp == 0.0 {
        0.0
    } else {
        tp / (same_true * same_pred).sqrt()
    };

    let adjusted_rand = if same_true == tp && same_pred == tp {
        // No disagreeing pairs at all: identical partitions (or both trivial).
        1.0
    } else {
        let expected = same_true * same_pred / choose2(c.n);
        let maximum = 0.5 * (same_true + same_pred);
        (tp - expected) / (maximum - expected)
    };

    // Mutual information and entropies, natural log.
    let h_true = entropy_nat(&c.a, nf);
    let h_pred = entropy_nat(&c.b, nf);
    let mut mi = 0.0;
    for (&(t, p), &nij) in &c.cells {
        let nijf = nij as f64;
        mi += (nijf / nf) * ((nf * nijf) / (c.a[&t] as f64 * c.b[&p] as f64)).ln();
    }

    let adjusted_mutual_info = if c.a.len() == 1 && c.b.len() == 1 {
        1.0
    } else {
        let lnfact = ln_factorials(c.n as usize);
        let emi = expected_mutual_info(&c, &lnfact);
        let normalizer = 0.5 * (h_true + h_pred);
        let denominator = normalizer - emi;
        if denominator.abs() <= DEGENERATE_AMI_GAP {
            // The expectation already attains the maximum (e.g. two
            // all-singleton partitions force MI = EMI = normalizer), so no
            // chance correction is possible: score 1 when the observed MI
            // also sits at the maximum, 0 otherwise. Dividing by an
            // epsilon-clamped denominator here would only amplify rounding
            // residue into an arbitrary value.
            if (mi - normalizer).abs() <= DEGENERATE_AMI_GAP {
                1.0
            } else {
                0.0
            }
        } else {
            (mi - emi) / denominator
        }
    };

    let homogeneity = if h_true == 0.0 { 1.0 } else { mi / h_true };
    let completeness = if h_pred == 0.0 { 1.0 } else { mi / h_pred };
    let v_measure = if homogeneity + completeness == 0.0 {
        0.0
    } else {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    };

    Ok(ClusterQuality {
        fowlkes_mallows,
        adjusted_rand,
        adjusted_mutual_info,
        v_measure,
    })
}

/// Ranks the gallery by descending cosine similarity per query and scores
/// mean average precision plus CMC at ranks 1/5/10.
///
/// Queries with no gallery match are excluded with a warning. Average
/// precision uses precision-at-hit averaging over the query's matches.
pub fn evaluate_retrieval(
    query_embeddings: &[&FeatureVector],
    gallery_embeddings: &[&FeatureVector],
    query_ids: &[i64],
    gallery_ids: &[i64],
) -> Result<RetrievalScores> {
    if query_embeddings.len() != query_ids.len() {
        return Err(Error::DimensionMismatch {
            expected: query_ids.len(),
            got: query_embeddings.len(),
        });
    }
    if gallery_embeddings.len() != gallery_ids.len() {
        return Err(Error::DimensionMismatch {
            expected: gallery_ids.len(),
            got: gallery_embeddings.len(),
        });
    }
    if query_embeddings.is_empty() || gallery_embeddings.is_empty() {
        return Err(Error::empty("retrieval needs queries and a gallery"));
    }

    let mut ap_sum = 0.0;
    let mut cmc_hits = [0usize; 3];
    let mut scored = 0usize;
    let mut excluded = 0usize;

    for (q, &qid) in query_embeddings.iter().zip(query_ids) {
        let total_matches = gallery_ids.iter().filter(|&&g| g == qid).count();
        if total_matches == 0 {
            excluded += 1;
            continue;
        }
        // (similarity, gallery index); descending sim, ascending index.
        let mut order: Vec<(f64, usize)> = Vec::with_capacity(gallery_embeddings.len());
        for (j, g) in gallery_embeddings.iter().enumerate() {
            order.push((crate::embedding::cosine_sim(q, g)?, j));
        }
        order.sort_by(|x, y| {
            y.0.partial_cmp(&x.0)
                .expect("similarities are finite")
                .then(x.1.cmp(&y.1))
        });

        let mut hits = 0usize;
        let mut prec_sum = 0.0;
        let mut first_hit_rank = None;
        for (rank0, &(_, j)) in order.iter().enumerate() {
            if gallery_ids[j] == qid {
                hits += 1;
                prec_sum += hits as f64 / (rank0 + 1) as f64;
                if first_hit_rank.is_none() {
                    first_hit_rank = Some(rank0 + 1);
                }
            }
        }
        ap_sum += prec_sum / total_matches as f64;
        let first = first_hit_rank.expect("query has a match");
        for (slot, &rank) in CMC_RANKS.iter().enumerate() {
            if first <= rank {
                cmc_hits[slot] += 1;
            }
        }
        scored += 1;
    }

    if excluded > 0 {
        log::warn!("{excluded} query(s) had no gallery match and were excluded");
    }
    if scored == 0 {
        return Err(Error::degenerate("no query has a gallery match"));
    }

    let mut cmc = [0.0; 3];
    for (slot, &h) in cmc_hits.iter().enumerate() {
        cmc[slot] = h as f64 / scored as f64;
    }
    Ok(RetrievalScores {
        map: ap_sum / scored as f64,
        cmc,
    })
}
