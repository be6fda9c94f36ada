//! Loss functions and their analytic gradients with respect to embedding rows.
//!
//! Three pieces: an InfoNCE term over the memory bank (the baseline loss),
//! the sample-extension loss `L_SE` that averages that term over actual and
//! support samples alike, and the label-preserving loss `L_LP` that anchors
//! each actual sample against the hardest positive of its own cluster and the
//! hardest negative of every other cluster in the batch. The combined
//! objective is `L = L_SE + beta * L_LP`.
//!
//! Embedding rows are stored unnormalized; the batch read inside
//! [`total_loss_and_grad`] l2-normalizes each row into the feature `f` that
//! every term (and support generation upstream) consumes. That makes the
//! whole objective invariant to rescaling the table.
//!
//! Gradient conventions: bank entries and centroids are constants
//! (stop-gradient); a support sample passes its gradient through to its
//! source feature unchanged (`d f~ / d f = I`); the normalization Jacobian
//! `(I - f f^T) / |row|` is applied once per row when feature-space gradients
//! are mapped back onto raw rows.

use std::collections::BTreeMap;

use crate::embedding::{l2_normalize, EmbeddingTable, FeatureVector};
use crate::error::{Error, Result};
use crate::memory::MemoryBank;
use crate::pli::SupportSample;

/// One minibatch slot: a sample id and its pseudo label this epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSample {
    pub id: usize,
    pub cluster: usize,
}

/// Which samples the label-preserving loss selects its pairs from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpVariant {
    /// Pairs are support samples (the full method).
    Support,
    /// Pairs are actual batch samples (component-ablation arm).
    Actual,
}

impl std::str::FromStr for LpVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SUPPORT" => Ok(LpVariant::Support),
            "ACTUAL" => Ok(LpVariant::Actual),
            _ => Err(Error::Config(format!(
                "unknown loss.lp_variant {s:?} (expected SUPPORT or ACTUAL)"
            ))),
        }
    }
}

impl std::fmt::Display for LpVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LpVariant::Support => "SUPPORT",
            LpVariant::Actual => "ACTUAL",
        })
    }
}

/// Loss weights and temperatures.
#[derive(Debug, Clone, Copy)]
pub struct LossParams {
    pub beta: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub lp_variant: LpVariant,
}

impl LossParams {
    pub fn new(beta: f64, tau1: f64, tau2: f64, lp_variant: LpVariant) -> Result<Self> {
        if tau1 <= 0.0 || tau2 <= 0.0 {
            return Err(Error::Config(format!(
                "temperatures must be > 0, got tau1={tau1}, tau2={tau2}"
            )));
        }
        if beta < 0.0 {
            return Err(Error::Config(format!("loss.beta must be >= 0, got {beta}")));
        }
        Ok(LossParams {
            beta,
            tau1,
            tau2,
            lp_variant,
        })
    }
}

/// Values of the individual loss terms for one minibatch.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub l_se: f64,
    pub l_lp: f64,
    pub total: f64,
    pub beta: f64,
    pub tau1: f64,
    pub tau2: f64,
}

/// Sparse per-row gradient accumulator aligned with the embedding table;
/// rows absent from the minibatch are implicitly zero.
#[derive(Debug, Clone)]
pub struct GradientBuffer {
    dim: usize,
    rows: BTreeMap<usize, Vec<f64>>,
}

impl GradientBuffer {
    pub fn new(dim: usize) -> Self {
        GradientBuffer {
            dim,
            rows: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `rows[id] += scale * values`.
    pub fn add(&mut self, id: usize, scale: f64, values: &[f64]) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: values.len(),
            });
        }
        let row = self.rows.entry(id).or_insert_with(|| vec![0.0; self.dim]);
        for (r, v) in row.iter_mut().zip(values) {
            *r += scale * v;
        }
        Ok(())
    }

    pub fn get(&self, id: usize) -> Option<&[f64]> {
        self.rows.get(&id).map(|r| r.as_slice())
    }

    /// Touched rows in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows.iter().map(|(id, row)| (*id, row.as_slice()))
    }

    /// Dense `n x dim` copy, zeros where untouched.
    pub fn to_dense(&self, n: usize) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.dim]; n];
        for (id, row) in &self.rows {
            out[*id].copy_from_slice(row);
        }
        out
    }
}

/// Cosine similarity of `v` against every bank entry, plus what the gradient
/// needs: `v`'s norm and unit direction.
fn bank_similarities(v: &FeatureVector, bank: &MemoryBank) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let nv = v.norm();
    if nv == 0.0 {
        return Err(Error::degenerate("zero-norm vector in loss"));
    }
    let vhat: Vec<f64> = v.as_slice().iter().map(|x| x / nv).collect();
    let mut sims = Vec::with_capacity(bank.len());
    for entry in bank.entries() {
        let ne = entry.norm();
        if ne == 0.0 {
            return Err(Error::degenerate("zero-norm bank entry"));
        }
        let dot: f64 = vhat
            .iter()
            .zip(entry.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        sims.push(dot / ne);
    }
    Ok((sims, nv, vhat))
}

/// InfoNCE value and gradient w.r.t. `v`, shifted by the positive logit so the
/// sum stays small: `loss = ln(1 + sum_{c != pos} e^{(s_c - s_pos)/tau})`.
fn info_nce_with_grad(
    v: &FeatureVector,
    bank: &MemoryBank,
    positive: usize,
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    if tau <= 0.0 {
        return Err(Error::Config(format!("temperature must be > 0, got {tau}")));
    }
    if positive >= bank.len() {
        return Err(Error::OutOfRange {
            what: "positive cluster",
            index: positive,
            len: bank.len(),
        });
    }
    let (sims, nv, vhat) = bank_similarities(v, bank)?;
    let s_pos = sims[positive];
    let mut shifted = Vec::with_capacity(sims.len());
    let mut sum = 0.0;
    for (c, &s) in sims.iter().enumerate() {
        let e = if c == positive {
            0.0
        } else {
            ((s - s_pos) / tau).exp()
        };
        shifted.push(e);
        sum += e;
    }
    let loss = sum.ln_1p();
    let denom = 1.0 + sum;

    // d loss / d s_c = (p_c - [c == pos]) / tau, with p_pos = 1/denom.
    let d = v.dim();
    let mut grad = vec![0.0; d];
    for (c, entry) in bank.entries().iter().enumerate() {
        let p = if c == positive {
            1.0 / denom
        } else {
            shifted[c] / denom
        };
        let coef = (p - if c == positive { 1.0 } else { 0.0 }) / tau;
        if coef == 0.0 {
            continue;
        }
        let ne = entry.norm();
        for k in 0..d {
            let ds = (entry.as_slice()[k] / ne - sims[c] * vhat[k]) / nv;
            grad[k] += coef * ds;
        }
    }
    Ok((loss, grad))
}

/// InfoNCE over the bank with the positive at `positive_index` (Eq. form:
/// `-log softmax(sims / tau)[positive]`).
pub fn loss_info_nce(
    f: &FeatureVector,
    bank: &MemoryBank,
    positive_index: usize,
    tau: f64,
) -> Result<f64> {
    info_nce_with_grad(f, bank, positive_index, tau).map(|(l, _)| l)
}

/// Sample-extension loss for one vector (actual or support) against the bank.
/// Needs at least two clusters to be meaningful.
pub fn loss_se(
    f_hat: &FeatureVector,
    bank: &MemoryBank,
    own_cluster: usize,
    tau1: f64,
) -> Result<f64> {
    if bank.len() < 2 {
        return Err(Error::degenerate(
            "sample-extension loss needs at least 2 clusters",
        ));
    }
    loss_info_nce(f_hat, bank, own_cluster, tau1)
}

/// A pairwise-similarity candidate for the label-preserving loss.
struct LpCandidate<'a> {
    cluster: usize,
    /// Batch slot (or row, for the standalone helpers) that receives this
    /// candidate's share of the gradient.
    grad_row: usize,
    vector: &'a FeatureVector,
}

/// Cosine similarity of a pair plus partial derivatives for both ends.
fn pair_sim_grad(f: &FeatureVector, w: &FeatureVector) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let nf = f.norm();
    let nw = w.norm();
    if nf == 0.0 || nw == 0.0 {
        return Err(Error::degenerate("zero-norm vector in pair similarity"));
    }
    let d = f.dim();
    let fh: Vec<f64> = f.as_slice().iter().map(|x| x / nf).collect();
    let wh: Vec<f64> = w.as_slice().iter().map(|x| x / nw).collect();
    let s: f64 = fh.iter().zip(&wh).map(|(a, b)| a * b).sum();
    let mut df = vec![0.0; d];
    let mut dw = vec![0.0; d];
    for k in 0..d {
        df[k] = (wh[k] - s * fh[k]) / nf;
        dw[k] = (fh[k] - s * wh[k]) / nw;
    }
    Ok((s, df, dw))
}

/// Result of one anchor's label-preserving term.
struct LpTerm {
    loss: f64,
    /// Gradient w.r.t. the anchor vector.
    d_anchor: Vec<f64>,
    /// Gradient contributions to candidate rows: `(grad_row, vector)`.
    contributions: Vec<(usize, Vec<f64>)>,
}

/// Shared hardest-pair machinery for both LP variants. Returns `None` when
/// the candidates span fewer than two clusters (term skipped). The anchor's
/// own cluster must be represented.
fn lp_term(
    anchor: &FeatureVector,
    anchor_cluster: usize,
    candidates: &[LpCandidate<'_>],
    tau2: f64,
) -> Result<Option<LpTerm>> {
    // Hardest positive: minimum similarity within the anchor's cluster.
    // Hardest negative per other cluster: maximum similarity. First
    // candidate wins ties, and candidates arrive in ascending sample-id
    // order, which realizes the lowest-id tie-break.
    let mut pos: Option<(f64, usize)> = None;
    let mut negs: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let mut sims = Vec::with_capacity(candidates.len());
    for (i, cand) in candidates.iter().enumerate() {
        let (s, df, dw) = pair_sim_grad(anchor, cand.vector)?;
        sims.push((s, df, dw));
        if cand.cluster == anchor_cluster {
            if pos.map_or(true, |(best, _)| s < best) {
                pos = Some((s, i));
            }
        } else {
            let entry = negs.entry(cand.cluster);
            match entry {
                std::collections::btree_map::Entry::Vacant(v) => {
                    v.insert((s, i));
                }
                std::collections::btree_map::Entry::Occupied(mut o) => {
                    if s > o.get().0 {
                        o.insert((s, i));
                    }
                }
            }
        }
    }
    let (s_pos, pos_idx) = pos.ok_or_else(|| {
        Error::empty("label-preserving loss: anchor's cluster has no candidate")
    })?;
    if negs.is_empty() {
        return Ok(None);
    }

    // loss = ln(1 + sum_c e^{(s_c - s_pos)/tau2}); denominator includes the
    // positive term, so the loss is bounded below by 0.
    let mut weights = Vec::with_capacity(negs.len());
    let mut sum = 0.0;
    for (&_cluster, &(s_neg, idx)) in &negs {
        let e = ((s_neg - s_pos) / tau2).exp();
        weights.push((idx, e));
        sum += e;
    }
    let loss = sum.ln_1p();
    let denom = 1.0 + sum;

    let d = anchor.dim();
    let mut d_anchor = vec![0.0; d];
    let mut contributions = Vec::with_capacity(1 + weights.len());

    // Positive coefficient: (p_pos - 1)/tau2 with p_pos = 1/denom.
    let coef_pos = (1.0 / denom - 1.0) / tau2;
    let (_, ref df_pos, ref dw_pos) = sims[pos_idx];
    for k in 0..d {
        d_anchor[k] += coef_pos * df_pos[k];
    }
    contributions.push((
        candidates[pos_idx].grad_row,
        dw_pos.iter().map(|g| coef_pos * g).collect(),
    ));

    for (idx, e) in weights {
        let coef = e / denom / tau2;
        let (_, ref df_neg, ref dw_neg) = sims[idx];
        for k in 0..d {
            d_anchor[k] += coef * df_neg[k];
        }
        contributions.push((
            candidates[idx].grad_row,
            dw_neg.iter().map(|g| coef * g).collect(),
        ));
    }

    Ok(Some(LpTerm {
        loss,
        d_anchor,
        contributions,
    }))
}

/// Label-preserving loss for one anchor against the batch's support samples.
/// Returns 0 with a warning when the supports span fewer than two clusters.
pub fn loss_lp(
    f: &FeatureVector,
    supports_in_batch: &[SupportSample],
    cluster_of_f: usize,
    tau2: f64,
) -> Result<f64> {
    if tau2 <= 0.0 {
        return Err(Error::Config(format!("temperature must be > 0, got {tau2}")));
    }
    let candidates: Vec<LpCandidate<'_>> = supports_in_batch
        .iter()
        .map(|s| LpCandidate {
            cluster: s.source_cluster,
            grad_row: s.source_id,
            vector: &s.vector,
        })
        .collect();
    match lp_term(f, cluster_of_f, &candidates, tau2)? {
        Some(term) => Ok(term.loss),
        None => {
            log::warn!("label-preserving term skipped: batch spans a single cluster");
            Ok(0.0)
        }
    }
}

/// Label-preserving loss with actual samples as pair candidates (the
/// component-ablation arm). The anchor itself should be among `batch`.
pub fn loss_lp_actual(
    f: &FeatureVector,
    cluster_of_f: usize,
    batch: &[(usize, &FeatureVector)],
    tau2: f64,
) -> Result<f64> {
    if tau2 <= 0.0 {
        return Err(Error::Config(format!("temperature must be > 0, got {tau2}")));
    }
    let candidates: Vec<LpCandidate<'_>> = batch
        .iter()
        .enumerate()
        .map(|(i, (cluster, vector))| LpCandidate {
            cluster: *cluster,
            grad_row: i,
            vector,
        })
        .collect();
    match lp_term(f, cluster_of_f, &candidates, tau2)? {
        Some(term) => Ok(term.loss),
        None => {
            log::warn!("label-preserving term skipped: batch spans a single cluster");
            Ok(0.0)
        }
    }
}

/// Combined loss `L = L_SE + beta * L_LP` over a minibatch, with analytic
/// gradients for every touched embedding row.
///
/// Each batch row is read once and l2-normalized into its feature `f`;
/// `supports[i]` must have been generated from that same normalized feature
/// of `batch[i]` (pass empty vectors to run the bare InfoNCE baseline). Every
/// slot must carry the same number of supports, so the per-sample mean of
/// each group composes into the flat mean over actual plus support samples.
///
/// `L_SE` is accumulated as the batch mean of per-sample group means
/// (`group = mean of the sample's own term and its supports' terms`); with
/// uniform group sizes this equals the flat mean, and it makes a zero-degree
/// support contribute exactly its source's term.
pub fn total_loss_and_grad(
    table: &EmbeddingTable,
    batch: &[BatchSample],
    supports: &[Vec<SupportSample>],
    bank: &MemoryBank,
    params: &LossParams,
) -> Result<(LossTerms, GradientBuffer)> {
    if batch.is_empty() {
        return Err(Error::empty("loss over empty batch"));
    }
    if supports.len() != batch.len() {
        return Err(Error::Invariant(format!(
            "supports ({}) misaligned with batch ({})",
            supports.len(),
            batch.len()
        )));
    }
    if bank.len() < 2 {
        return Err(Error::degenerate(
            "sample-extension loss needs at least 2 clusters",
        ));
    }
    let b = batch.len() as f64;
    let dim = table.dim();

    // Normalized read of every batch row, plus the raw norm for the chain
    // rule at the end. Per-slot gradients accumulate in feature space (the
    // support pass-through is the identity there) and are mapped back onto
    // raw rows once per slot.
    let mut features = Vec::with_capacity(batch.len());
    let mut raw_norms = Vec::with_capacity(batch.len());
    for slot in batch {
        let row = table.row(slot.id)?;
        raw_norms.push(row.norm());
        features.push(l2_normalize(row)?);
    }
    let mut slot_grads = vec![vec![0.0; dim]; batch.len()];
    let axpy_into = |acc: &mut [f64], w: f64, g: &[f64]| {
        for (a, v) in acc.iter_mut().zip(g) {
            *a += w * v;
        }
    };

    // ---- L_SE over actual samples and their supports -----------------------
    let mut se_sum = 0.0;
    for (i, (slot, sup)) in batch.iter().zip(supports).enumerate() {
        let group_size = (1 + sup.len()) as f64;
        let weight = 1.0 / (group_size * b);

        let (l0, g0) = info_nce_with_grad(&features[i], bank, slot.cluster, params.tau1)?;
        axpy_into(&mut slot_grads[i], weight, &g0);
        let mut group_sum = l0;
        for s in sup {
            if s.source_id != slot.id {
                return Err(Error::Invariant(format!(
                    "support of sample {} filed under sample {}",
                    s.source_id, slot.id
                )));
            }
            let (lj, gj) = info_nce_with_grad(&s.vector, bank, s.source_cluster, params.tau1)?;
            // Pass-through: d f~ / d f = I, so the support's gradient lands
            // on its source feature unchanged.
            axpy_into(&mut slot_grads[i], weight, &gj);
            group_sum += lj;
        }
        se_sum += group_sum / group_size;
    }
    let l_se = se_sum / b;

    // ---- L_LP over actual anchors ------------------------------------------
    let mut l_lp = 0.0;
    if params.beta > 0.0 {
        // Candidate pool shared by every anchor, in batch (ascending-id)
        // order; `grad_row` is the batch slot the candidate's gradient share
        // passes through to.
        let all_candidates: Vec<LpCandidate<'_>> = match params.lp_variant {
            LpVariant::Support => supports
                .iter()
                .enumerate()
                .flat_map(|(i, sup)| {
                    sup.iter().map(move |s| LpCandidate {
                        cluster: s.source_cluster,
                        grad_row: i,
                        vector: &s.vector,
                    })
                })
                .collect(),
            LpVariant::Actual => batch
                .iter()
                .enumerate()
                .map(|(i, slot)| LpCandidate {
                    cluster: slot.cluster,
                    grad_row: i,
                    vector: &features[i],
                })
                .collect(),
        };
        let mut lp_sum = 0.0;
        let mut skipped = 0usize;
        let lp_weight = params.beta / b;
        for (i, slot) in batch.iter().enumerate() {
            match lp_term(&features[i], slot.cluster, &all_candidates, params.tau2)? {
                Some(term) => {
                    lp_sum += term.loss;
                    axpy_into(&mut slot_grads[i], lp_weight, &term.d_anchor);
                    for (slot_row, contribution) in term.contributions {
                        axpy_into(&mut slot_grads[slot_row], lp_weight, &contribution);
                    }
                }
                None => skipped += 1,
            }
        }
        if skipped > 0 {
            log::warn!(
                "label-preserving term skipped for {skipped} anchor(s): batch spans a single cluster"
            );
        }
        l_lp = lp_sum / b;
    }

    // ---- feature space -> raw rows ------------------------------------------
    // d row = (g - (g . f) f) / |row|, the Jacobian of row |-> row / |row|.
    let mut grad = GradientBuffer::new(dim);
    for (i, slot) in batch.iter().enumerate() {
        let f = features[i].as_slice();
        let acc = &slot_grads[i];
        let dot: f64 = acc.iter().zip(f).map(|(a, b)| a * b).sum();
        let mapped: Vec<f64> = acc
            .iter()
            .zip(f)
            .map(|(g, fk)| (g - dot * fk) / raw_norms[i])
            .collect();
        grad.add(slot.id, 1.0, &mapped)?;
    }

    let terms = LossTerms {
        l_se,
        l_lp,
        total: l_se + params.beta * l_lp,
        beta: params.beta,
        tau1: params.tau1,
        tau2: params.tau2,
    };
    Ok((terms, grad))
}
