use std::cmp::Ordering;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::corpus::VariantKey;
use crate::error::{Error, Result};

pub fn cosine_sim(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {}", a.len(), b.len())));
    }
    let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Area under the ROC curve as the Mann-Whitney statistic
/// `P(s+ > s-) + P(s+ = s-) / 2`, via midranks.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        pos_rank_sum += midrank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// One query's candidates in ranked order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRanking {
    pub query: VariantKey,
    pub candidates: Vec<VariantKey>,
    pub scores: Vec<f64>,
    pub relevant: Vec<bool>,
    /// Relevant items that exist for this query, ranked or not.
    pub n_rel: usize,
}

impl QueryRanking {
    /// Sorts by descending score, ties by ascending key.
    pub fn new(query: VariantKey, mut items: Vec<(VariantKey, f64, bool)>, n_rel: usize) -> Self {
        items.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
        let mut candidates = Vec::with_capacity(items.len());
        let mut scores = Vec::with_capacity(items.len());
        let mut relevant = Vec::with_capacity(items.len());
        for (k, s, r) in items {
            candidates.push(k);
            scores.push(s);
            relevant.push(r);
        }
        Self {
            query,
            candidates,
            scores,
            relevant,
            n_rel,
        }
    }

    pub fn first_relevant_rank(&self) -> Option<usize> {
        self.relevant.iter().position(|&r| r).map(|p| p + 1)
    }
}

fn non_empty(rankings: &[QueryRanking]) -> Result<()> {
    if rankings.is_empty() {
        return Err(Error::UndefinedMetric("no queries".into()));
    }
    Ok(())
}

pub fn mrr_at_k(rankings: &[QueryRanking], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Precondition("MRR cutoff must be at least 1".into()));
    }
    non_empty(rankings)?;
    let sum: f64 = rankings
        .iter()
        .map(|r| match r.first_relevant_rank() {
            Some(rank) if rank <= k => 1.0 / rank as f64,
            _ => 0.0,
        })
        .sum();
    Ok(sum / rankings.len() as f64)
}

pub fn recall_at_1(rankings: &[QueryRanking]) -> Result<f64> {
    non_empty(rankings)?;
    let hits = rankings.iter().filter(|r| r.relevant.first() == Some(&true)).count();
    Ok(hits as f64 / rankings.len() as f64)
}

/// `sum_{k<=n} P(k) rel(k) / n_rel`, dividing by the total relevant count
/// even when it exceeds `n`.
pub fn average_precision(relevant: &[bool], n: usize, n_rel: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Precondition("AP cutoff must be at least 1".into()));
    }
    if n_rel == 0 {
        return Err(Error::UndefinedMetric("AP with no relevant items".into()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in relevant.iter().take(n).enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / n_rel as f64)
}

/// Mean AP over queries; `cap_nrel` divides by `min(n_rel, n)` instead.
pub fn mean_ap(rankings: &[QueryRanking], n: usize, cap_nrel: bool) -> Result<f64> {
    non_empty(rankings)?;
    let mut sum = 0.0;
    for r in rankings {
        let n_rel = if cap_nrel { r.n_rel.min(n) } else { r.n_rel };
        sum += average_precision(&r.relevant, n, n_rel)?;
    }
    Ok(sum / rankings.len() as f64)
}

/// Same-function decision at a fixed similarity threshold.
pub fn classify(similarity: f64, threshold: f64) -> bool {
    similarity >= threshold
}

pub fn threshold_accuracy(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| classify(s, threshold) == l)
        .count();
    Ok(correct as f64 / scores.len() as f64)
}
