//! Ranking and regression metrics: MAE, Spearman rank correlation,
//! tie-adjusted Kendall's Tau, NDCG@k with relevance rescaled to [0, 20],
//! and comparator-driven mergesort ranking.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("MismatchedLengths: {0} vs {1}")]
    MismatchedLengths(usize, usize),
    #[error("ConstantInput: rank correlation undefined for constant input")]
    ConstantInput,
    #[error("DegenerateLabels: relevance rescale undefined when all labels equal")]
    DegenerateLabels,
    #[error("need at least {0} elements")]
    TooFew(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingReport {
    pub mae: f64,
    pub srcc: f64,
    #[serde(rename = "kt")]
    pub kendall_tau: f64,
    pub ndcg: BTreeMap<String, f64>,
}

pub fn mae(preds: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    if preds.len() != labels.len() {
        return Err(MetricError::MismatchedLengths(preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return Err(MetricError::TooFew(1));
    }
    Ok(preds
        .iter()
        .zip(labels)
        .map(|(p, l)| (p - l).abs())
        .sum::<f64>()
        / preds.len() as f64)
}

/// Fractional ranks (1-based), ties get the average rank.
pub fn fractional_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of fractional ranks.
pub fn srcc(preds: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    if preds.len() != labels.len() {
        return Err(MetricError::MismatchedLengths(preds.len(), labels.len()));
    }
    if preds.len() < 2 {
        return Err(MetricError::TooFew(2));
    }
    let rp = fractional_ranks(preds);
    let rl = fractional_ranks(labels);
    pearson(&rp, &rl)
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        let da = a[i] - ma;
        let db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if va <= 0.0 || vb <= 0.0 {
        return Err(MetricError::ConstantInput);
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Kendall's Tau-b (tie-adjusted pair counting).
pub fn kendall_tau(preds: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    if preds.len() != labels.len() {
        return Err(MetricError::MismatchedLengths(preds.len(), labels.len()));
    }
    let n = preds.len();
    if n < 2 {
        return Err(MetricError::TooFew(2));
    }
    let mut concordant = 0u64;
    let mut discordant = 0u64;
    let mut ties_p = 0u64; // tied in preds only
    let mut ties_l = 0u64; // tied in labels only
    let mut any_untied_p = false;
    let mut any_untied_l = false;
    for i in 0..n {
        for j in (i + 1)..n {
            let dp = preds[i] - preds[j];
            let dl = labels[i] - labels[j];
            if dp != 0.0 {
                any_untied_p = true;
            }
            if dl != 0.0 {
                any_untied_l = true;
            }
            if dp == 0.0 && dl == 0.0 {
                // tied in both: excluded from every term
            } else if dp == 0.0 {
                ties_p += 1;
            } else if dl == 0.0 {
                ties_l += 1;
            } else if dp * dl > 0.0 {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    if !any_untied_p || !any_untied_l {
        return Err(MetricError::ConstantInput);
    }
    let num = concordant as f64 - discordant as f64;
    let den_p = (concordant + discordant + ties_p) as f64;
    let den_l = (concordant + discordant + ties_l) as f64;
    Ok(num / (den_p * den_l).sqrt())
}

/// NDCG@k with relevance = labels rescaled to [0, 20]. Predictions are
/// sorted descending with stable tie-break by original index.
pub fn ndcg_at_k(preds: &[f64], labels: &[f64], k: usize) -> Result<f64, MetricError> {
    if preds.len() != labels.len() {
        return Err(MetricError::MismatchedLengths(preds.len(), labels.len()));
    }
    let n = preds.len();
    if k == 0 || k > n {
        return Err(MetricError::TooFew(k));
    }
    let rel = rescale_relevance(labels)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| preds[b].partial_cmp(&preds[a]).unwrap().then(a.cmp(&b)));
    let dcg = dcg_at_k(&order.iter().map(|&i| rel[i]).collect::<Vec<_>>(), k);
    let mut ideal = rel.clone();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let idcg = dcg_at_k(&ideal, k);
    Ok(dcg / idcg)
}

/// Rescale labels into [0, 20].
pub fn rescale_relevance(labels: &[f64]) -> Result<Vec<f64>, MetricError> {
    let min = labels.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = labels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Err(MetricError::DegenerateLabels);
    }
    Ok(labels.iter().map(|&l| 20.0 * (l - min) / (max - min)).collect())
}

fn dcg_at_k(rel: &[f64], k: usize) -> f64 {
    rel.iter()
        .take(k)
        .enumerate()
        .map(|(i, &r)| ((2.0f64).powf(r) - 1.0) / ((i as f64 + 2.0).log2()))
        .sum()
}

/// Stable mergesort driven by an external comparator; returns the sorted
/// item indices (best first per the comparator) and the comparator call
/// count, bounded by n*ceil(log2 n).
pub fn rank_via_comparator<F>(n: usize, mut better: F) -> (Vec<usize>, usize)
where
    F: FnMut(usize, usize) -> Ordering,
{
    let mut calls = 0usize;
    let items: Vec<usize> = (0..n).collect();
    let sorted = mergesort(&items, &mut |a, b| {
        calls += 1;
        better(a, b)
    });
    (sorted, calls)
}

fn mergesort(items: &[usize], cmp: &mut dyn FnMut(usize, usize) -> Ordering) -> Vec<usize> {
    if items.len() <= 1 {
        return items.to_vec();
    }
    let mid = items.len() / 2;
    let left = mergesort(&items[..mid], cmp);
    let right = mergesort(&items[mid..], cmp);
    let mut out = Vec::with_capacity(items.len());
    let (mut i, mut j) = (0, 0);
    while i < left.len() && j < right.len() {
        // stable: left wins ties
        if cmp(left[i], right[j]) != Ordering::Greater {
            out.push(left[i]);
            i += 1;
        } else {
            out.push(right[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&left[i..]);
    out.extend_from_slice(&right[j..]);
    out
}

/// Scores in [0, 1] proportional to fractional rank; highest score = 1.
/// Used to put constituent predictors on a common scale.
pub fn normalized_rank_scores(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    if n == 1 {
        return vec![1.0];
    }
    fractional_ranks(xs)
        .into_iter()
        .map(|r| (r - 1.0) / (n as f64 - 1.0))
        .collect()
}
