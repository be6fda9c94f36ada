//! Brute-force reference implementations used only by tests.
//!
//! Everything in here trades speed for obviousness: full pairwise matrices,
//! exhaustive searches, central finite differences. The main crate must never
//! call into this one — superiority of the main path is certified by
//! agreement with these independently written routines, which only works if
//! the two share no code. All functions take plain slices for that reason.

use statrs::function::gamma::ln_gamma;

/// Label value for samples no cluster claims.
pub const NOISE: i64 = -1;

/// Side-by-side comparison of a main-path value against its oracle.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub case: String,
    pub main: f64,
    pub oracle: f64,
    pub abs_dev: f64,
    pub rel_dev: f64,
}

impl OracleReport {
    pub fn new(case: impl Into<String>, main: f64, oracle: f64) -> Self {
        let abs_dev = (main - oracle).abs();
        let scale = main.abs().max(oracle.abs());
        let rel_dev = if abs_dev == 0.0 { 0.0 } else { abs_dev / scale };
        OracleReport {
            case: case.into(),
            main,
            oracle,
            abs_dev,
            rel_dev,
        }
    }

    pub fn within(&self, tol: f64) -> bool {
        self.abs_dev <= tol || self.rel_dev <= tol
    }
}

fn cos_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    1.0 - dot / (na.sqrt() * nb.sqrt())
}

/// Textbook DBSCAN: full pairwise cosine-distance matrix, queue expansion,
/// clusters numbered in first-discovery order over ascending point ids.
///
/// Quadratic; refuses more than 500 points.
pub fn oracle_dbscan(
    points: &[Vec<f64>],
    eps: f64,
    min_points: usize,
) -> Result<Vec<i64>, String> {
    let n = points.len();
    if n > 500 {
        return Err(format!("oracle_dbscan limited to 500 points, got {n}"));
    }
    // Neighborhoods are self-inclusive and use d <= eps.
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if cos_distance(&points[i], &points[j]) <= eps {
                neighbors[i].push(j);
            }
        }
    }
    const UNVISITED: i64 = -2;
    let mut labels = vec![UNVISITED; n];
    let mut next_cluster: i64 = 0;
    for i in 0..n {
        if labels[i] != UNVISITED {
            continue;
        }
        if neighbors[i].len() < min_points {
            labels[i] = NOISE;
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        labels[i] = cluster;
        let mut queue: std::collections::VecDeque<usize> = neighbors[i].iter().copied().collect();
        while let Some(q) = queue.pop_front() {
            if labels[q] == NOISE {
                labels[q] = cluster; // border point claimed by first cluster to reach it
            }
            if labels[q] != UNVISITED {
                continue;
            }
            labels[q] = cluster;
            if neighbors[q].len() >= min_points {
                queue.extend(neighbors[q].iter().copied());
            }
        }
    }
    Ok(labels)
}

/// The four clustering scores computed straight from pair counts and the
/// contingency table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairQuality {
    pub fowlkes_mallows: f64,
    pub adjusted_rand: f64,
    pub adjusted_mutual_info: f64,
    pub v_measure: f64,
}

/// Pair-counting / contingency-table scoring of `pred` against `truth`.
///
/// Samples with a negative label on either side are excluded first. Natural
/// logarithms throughout; AMI uses the exact hypergeometric expected-MI sum
/// and the arithmetic-mean normalizer. Refuses more than 2000 samples.
pub fn oracle_pair_metrics(pred: &[i64], truth: &[i64]) -> Result<PairQuality, String> {
    if pred.len() != truth.len() {
        return Err(format!(
            "label arrays differ in length: {} vs {}",
            pred.len(),
            truth.len()
        ));
    }
    if pred.len() > 2000 {
        return Err(format!(
            "oracle_pair_metrics limited to 2000 samples, got {}",
            pred.len()
        ));
    }
    let kept: Vec<(i64, i64)> = pred
        .iter()
        .zip(truth)
        .filter(|(p, t)| **p >= 0 && **t >= 0)
        .map(|(p, t)| (*p, *t))
        .collect();
    let n = kept.len();
    if n < 2 {
        return Err(format!("need at least 2 scorable samples, got {n}"));
    }

    // Contingency table n[t][p] via dense index maps.
    let mut true_index = std::collections::BTreeMap::new();
    let mut pred_index = std::collections::BTreeMap::new();
    for (p, t) in &kept {
        let next = true_index.len() as usize;
        true_index.entry(*t).or_insert(next);
        let next = pred_index.len() as usize;
        pred_index.entry(*p).or_insert(next);
    }
    let r = true_index.len();
    let c = pred_index.len();
    let mut table = vec![vec![0i64; c]; r];
    for (p, t) in &kept {
        table[true_index[t]][pred_index[p]] += 1;
    }
    let a: Vec<i64> = table.iter().map(|row| row.iter().sum()).collect();
    let mut b = vec![0i64; c];
    for row in &table {
        for (j, v) in row.iter().enumerate() {
            b[j] += v;
        }
    }
    let nf = n as f64;

    // Ordered-pair confusion counts.
    let sum_sq: i64 = table.iter().flatten().map(|&v| v * v).sum();
    let sum_a_sq: i64 = a.iter().map(|&v| v * v).sum();
    let sum_b_sq: i64 = b.iter().map(|&v| v * v).sum();
    let tp = (sum_sq - n as i64) as f64;
    let fn_ = (sum_a_sq - n as i64) as f64 - tp;
    let fp = (sum_b_sq - n as i64) as f64 - tp;
    let tn = nf * (nf - 1.0) - tp - fn_ - fp;

    let fowlkes_mallows = if tp == 0.0 {
        0.0
    } else {
        (tp / (tp + fp)).sqrt() * (tp / (tp + fn_)).sqrt()
    };

    let adjusted_rand = if fn_ == 0.0 && fp == 0.0 {
        1.0
    } else {
        2.0 * (tp * tn - fn_ * fp) / ((tp + fn_) * (fn_ + tn) + (tp + fp) * (fp + tn))
    };

    // Entropies and mutual information (natural log).
    let entropy = |counts: &[i64]| -> f64 {
        counts
            .iter()
            .filter(|&&v| v > 0)
            .map(|&v| {
                let p = v as f64 / nf;
                -p * p.ln()
            })
            .sum()
    };
    let h_true = entropy(&a);
    let h_pred = entropy(&b);
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += (nij / nf) * ((nf * nij) / (a[i] as f64 * b[j] as f64)).ln();
            }
        }
    }

    // Exact expected mutual information under the hypergeometric model.
    let mut emi = 0.0;
    for &ai in &a {
        for &bj in &b {
            let lo = std::cmp::max(1, ai + bj - n as i64);
            let hi = std::cmp::min(ai, bj);
            for nij in lo..=hi {
                let nijf = nij as f64;
                let aif = ai as f64;
                let bjf = bj as f64;
                let log_term = ((nf * nijf) / (aif * bjf)).ln();
                let log_prob = ln_gamma(aif + 1.0) + ln_gamma(bjf + 1.0)
                    + ln_gamma(nf - aif + 1.0)
                    + ln_gamma(nf - bjf + 1.0)
                    - ln_gamma(nf + 1.0)
                    - ln_gamma(nijf + 1.0)
                    - ln_gamma(aif - nijf + 1.0)
                    - ln_gamma(bjf - nijf + 1.0)
                    - ln_gamma(nf - aif - bjf + nijf + 1.0);
                emi += (nijf / nf) * log_term * log_prob.exp();
            }
        }
    }

    let adjusted_mutual_info = if r == 1 && c == 1 {
        1.0
    } else {
        let normalizer = 0.5 * (h_true + h_pred);
        let denominator = normalizer - emi;
        if denominator.abs() <= 1e-12 {
            // 0/0 in exact arithmetic (the expectation is forced to the
            // maximum, e.g. all-singleton partitions on both sides): score 1
            // when the observed MI also attains the maximum, else 0.
            if (mi - normalizer).abs() <= 1e-12 {
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

    Ok(PairQuality {
        fowlkes_mallows,
        adjusted_rand,
        adjusted_mutual_info,
        v_measure,
    })
}

/// Exhaustive hardest-member search: index of the member least cosine-similar
/// to `reference`, ties broken by lowest index.
pub fn oracle_hardest(reference: &[f64], members: &[Vec<f64>]) -> Result<usize, String> {
    if members.is_empty() {
        return Err("hardest search over empty member set".to_string());
    }
    let mut best = 0;
    let mut best_sim = f64::INFINITY;
    for (i, m) in members.iter().enumerate() {
        let sim = 1.0 - cos_distance(reference, m);
        if sim < best_sim {
            best_sim = sim;
            best = i;
        }
    }
    Ok(best)
}

/// Central-difference gradient of `loss` with respect to every coordinate of
/// `table`. Step `h` must lie in `[1e-8, 1e-4]`; a non-finite loss anywhere is
/// an error.
pub fn oracle_finite_diff<F>(
    mut loss: F,
    table: &[Vec<f64>],
    h: f64,
) -> Result<Vec<Vec<f64>>, String>
where
    F: FnMut(&[Vec<f64>]) -> f64,
{
    if !(1e-8..=1e-4).contains(&h) {
        return Err(format!("step {h} outside [1e-8, 1e-4]"));
    }
    let mut grad: Vec<Vec<f64>> = table.iter().map(|row| vec![0.0; row.len()]).collect();
    let mut work = table.to_vec();
    for i in 0..table.len() {
        for k in 0..table[i].len() {
            let saved = work[i][k];
            work[i][k] = saved + h;
            let up = loss(&work);
            work[i][k] = saved - h;
            let down = loss(&work);
            work[i][k] = saved;
            if !up.is_finite() || !down.is_finite() {
                return Err(format!("non-finite loss at row {i} coord {k}"));
            }
            grad[i][k] = (up - down) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// Norm-based relative error between two gradients of identical shape:
/// `|a - b| / max(|a|, |b|)` in the Frobenius norm, 0 when both are zero.
pub fn grad_rel_error(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, String> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err("gradient shapes differ".to_string());
    }
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            diff += (x - y) * (x - y);
            na += x * x;
            nb += y * y;
        }
    }
    let scale = na.sqrt().max(nb.sqrt());
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(diff.sqrt() / scale)
}
