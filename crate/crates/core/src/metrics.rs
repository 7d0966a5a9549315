//! Ranking and probabilistic evaluation for imbalanced misstatement
//! detection: R-precision, precision@k, ROC-AUC, NDCG, negative log loss.
//!
//! All ranking metrics operate on a deterministic [`RankedList`]: scores
//! descending, ties broken by record key ascending, so any score multiset
//! yields exactly one ordering.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::panel::RecordKey;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("non-finite score for record {0}")]
    NonFiniteScore(String),
    #[error("no positive records in the truth set")]
    NoPositives,
    #[error("k={k} out of range 1..={len}")]
    KOutOfRange { k: usize, len: usize },
    #[error("both classes must be present")]
    SingleClassInput,
    #[error("empty input")]
    EmptyInput,
    #[error("probability {0} outside (0,1)")]
    InvalidProbability(f64),
    #[error("record {0} missing from the truth map")]
    MissingTruth(String),
}

/// Deterministically ordered (record, score) ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    items: Vec<(RecordKey, f64)>,
}

impl RankedList {
    pub fn items(&self) -> &[(RecordKey, f64)] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Orders records by descending score; equal scores are ordered by record
/// key ascending.
pub fn rank(scores: &BTreeMap<RecordKey, f64>) -> Result<RankedList, MetricError> {
    let mut items: Vec<(RecordKey, f64)> = Vec::with_capacity(scores.len());
    for (key, &score) in scores {
        if !score.is_finite() {
            return Err(MetricError::NonFiniteScore(key.to_string()));
        }
        items.push((key.clone(), score));
    }
    // BTreeMap iteration already gives ascending keys, so a stable sort on
    // the score alone preserves the key tie-break.
    items.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    Ok(RankedList { items })
}

/// Counts of test-set positives overall (`total`) and within the top
/// `total` ranked items (`found`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankingOutcome {
    pub found: usize,
    pub total: usize,
}

fn truth_of(ranked: &RankedList, truth: &BTreeMap<RecordKey, bool>) -> Result<Vec<bool>, MetricError> {
    ranked
        .items()
        .iter()
        .map(|(key, _)| {
            truth
                .get(key)
                .copied()
                .ok_or_else(|| MetricError::MissingTruth(key.to_string()))
        })
        .collect()
}

/// Positives found in the top-R ranked items divided by R, where R is the
/// number of positives in the truth set.
pub fn r_precision(
    ranked: &RankedList,
    truth: &BTreeMap<RecordKey, bool>,
) -> Result<f64, MetricError> {
    Ok(r_precision_outcome(ranked, truth)?.ratio())
}

impl RankingOutcome {
    pub fn ratio(&self) -> f64 {
        self.found as f64 / self.total as f64
    }
}

/// Like [`r_precision`] but also exposes the raw counts.
pub fn r_precision_outcome(
    ranked: &RankedList,
    truth: &BTreeMap<RecordKey, bool>,
) -> Result<RankingOutcome, MetricError> {
    let labels = truth_of(ranked, truth)?;
    let total = labels.iter().filter(|&&p| p).count();
    if total == 0 {
        return Err(MetricError::NoPositives);
    }
    let found = labels.iter().take(total).filter(|&&p| p).count();
    Ok(RankingOutcome { found, total })
}

/// Positives in the top k, divided by k.
pub fn precision_at_k(
    ranked: &RankedList,
    truth: &BTreeMap<RecordKey, bool>,
    k: usize,
) -> Result<f64, MetricError> {
    if k < 1 || k > ranked.len() {
        return Err(MetricError::KOutOfRange {
            k,
            len: ranked.len(),
        });
    }
    let labels = truth_of(ranked, truth)?;
    let found = labels.iter().take(k).filter(|&&p| p).count();
    Ok(found as f64 / k as f64)
}

/// Probability that a uniformly random positive outscores a uniformly
/// random negative, ties counting one half (Mann-Whitney formulation).
pub fn roc_auc(
    scores: &BTreeMap<RecordKey, f64>,
    truth: &BTreeMap<RecordKey, bool>,
) -> Result<f64, MetricError> {
    let ranked = rank(scores)?;
    let labels = truth_of(&ranked, truth)?;
    let n_pos = labels.iter().filter(|&&p| p).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClassInput);
    }
    // Average ranks over tied scores, then the rank-sum statistic. The list
    // is descending, so rank from the bottom: item i has rank len - i.
    let n = ranked.len();
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && ranked.items()[j + 1].1 == ranked.items()[i].1 {
            j += 1;
        }
        // Positions i..=j share a score; their ascending ranks are
        // (n - j)..=(n - i), averaging to (2n - i - j) / 2.
        let avg_rank = (2 * n - i - j) as f64 / 2.0;
        for label in &labels[i..=j] {
            if *label {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Binary-gain DCG over the full list with a log2(rank + 1) discount,
/// normalized by the ideal ordering's DCG.
pub fn ndcg(ranked: &RankedList, truth: &BTreeMap<RecordKey, bool>) -> Result<f64, MetricError> {
    let labels = truth_of(ranked, truth)?;
    let total = labels.iter().filter(|&&p| p).count();
    if total == 0 {
        return Err(MetricError::NoPositives);
    }
    let dcg: f64 = labels
        .iter()
        .enumerate()
        .filter(|(_, &p)| p)
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..total).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    Ok(dcg / ideal)
}

/// Clamp bound applied to probabilities before taking logs.
pub const PROBABILITY_CLAMP: f64 = 1e-12;

/// Mean negative log likelihood of boolean truth under predicted
/// probabilities, clamped to [1e-12, 1 - 1e-12].
pub fn neg_log_loss(probabilities: &[f64], truth: &[bool]) -> Result<f64, MetricError> {
    if probabilities.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    assert_eq!(probabilities.len(), truth.len(), "inputs must align");
    let mut sum = 0.0;
    for (&p, &y) in probabilities.iter().zip(truth) {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(MetricError::InvalidProbability(p));
        }
        let p = p.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
        sum += if y { -p.ln() } else { -(1.0 - p).ln() };
    }
    Ok(sum / probabilities.len() as f64)
}
