//! ROC AUC, log loss and RMSE.

use thiserror::Error;

use crate::nn::bce_loss;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("scores and labels differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("AUC needs both classes, got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("empty input")]
    Empty,
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
}

/// Scores paired with binary labels.
#[derive(Debug, Clone, Copy)]
pub struct ScoredSet<'a> {
    scores: &'a [f64],
    labels: &'a [u8],
}

impl<'a> ScoredSet<'a> {
    pub fn new(scores: &'a [f64], labels: &'a [u8]) -> Result<Self, MetricError> {
        if scores.len() != labels.len() {
            return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &'a [f64] {
        self.scores
    }

    pub fn labels(&self) -> &'a [u8] {
        self.labels
    }

    pub fn auc(&self) -> Result<f64, MetricError> {
        auc(self.scores, self.labels)
    }

    pub fn logloss(&self) -> Result<f64, MetricError> {
        logloss(self.scores, self.labels)
    }
}

/// Probability that a random positive outranks a random negative, ties
/// counted one half. Midrank statistic, `O(n log n)`.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    let positives = labels.iter().filter(|&&y| y != 0).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::SingleClass {
            positives,
            negatives,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let midrank = (i + j + 2) as f64 / 2.0;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k] != 0).count();
        positive_rank_sum += midrank * tied_pos as f64;
        i = j + 1;
    }
    let p = positives as f64;
    let n = negatives as f64;
    Ok((positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

const PROB_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy with probabilities clamped to `[1e-7, 1 - 1e-7]`,
/// each term computed by [`crate::nn::bce_loss`].
pub fn logloss(probs: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if probs.len() != labels.len() {
        return Err(MetricError::LengthMismatch(probs.len(), labels.len()));
    }
    if probs.is_empty() {
        return Err(MetricError::Empty);
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| bce_loss(p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP), y))
        .sum();
    Ok(total / probs.len() as f64)
}

pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64, MetricError> {
    if predictions.len() != targets.len() {
        return Err(MetricError::LengthMismatch(
            predictions.len(),
            targets.len(),
        ));
    }
    if predictions.is_empty() {
        return Err(MetricError::Empty);
    }
    let mse = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / predictions.len() as f64;
    Ok(mse.sqrt())
}
