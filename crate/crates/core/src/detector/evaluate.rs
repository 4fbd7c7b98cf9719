//! Agreement matrices, confidence filtering, and classification metrics.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Prediction, StyleClassifier};
use crate::author::{AuthorId, AUTHOR_COUNT};
use crate::error::Result;
use crate::generation::GeneratedSet;

/// 5x5 counts: rows are the expected (seed-tag) author, columns the predicted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementMatrix {
    pub counts: [[u64; AUTHOR_COUNT]; AUTHOR_COUNT],
}

impl AgreementMatrix {
    pub fn from_predictions(preds: &[Prediction]) -> AgreementMatrix {
        let mut counts = [[0u64; AUTHOR_COUNT]; AUTHOR_COUNT];
        for p in preds {
            counts[p.expected.index()][p.predicted.index()] += 1;
        }
        AgreementMatrix { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> [u64; AUTHOR_COUNT] {
        let mut sums = [0; AUTHOR_COUNT];
        for (i, row) in self.counts.iter().enumerate() {
            sums[i] = row.iter().sum();
        }
        sums
    }

    pub fn diagonal(&self) -> u64 {
        (0..AUTHOR_COUNT).map(|i| self.counts[i][i]).sum()
    }

    /// Diagonal mass over total: the seed-tag/detector agreement rate.
    pub fn agreement_rate(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.diagonal() as f64 / total as f64
        }
    }
}

/// Matrix plus the per-sentence predictions it was reduced from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationOutcome {
    pub matrix: AgreementMatrix,
    pub predictions: Vec<Prediction>,
    pub tie_count: u64,
}

/// Classifies every generated sentence against its seed tag.
pub fn agreement_matrix<C: StyleClassifier + Sync>(
    detector: &C,
    generated: &GeneratedSet,
) -> Result<EvaluationOutcome> {
    let scored: Vec<Result<(Prediction, bool)>> = generated
        .items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let scores = detector.classify(&item.text)?;
            Ok((
                Prediction {
                    sentence_id: format!("gen-{i}"),
                    probs: scores.probs,
                    predicted: scores.predicted,
                    confidence: scores.confidence,
                    expected: item.author,
                },
                scores.tie,
            ))
        })
        .collect();
    let mut predictions = Vec::with_capacity(generated.items.len());
    let mut tie_count = 0;
    for item in scored {
        let (pred, tie) = item?;
        tie_count += tie as u64;
        predictions.push(pred);
    }
    Ok(EvaluationOutcome {
        matrix: AgreementMatrix::from_predictions(&predictions),
        predictions,
        tie_count,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuthorFilterStats {
    pub retained: u64,
    pub total: u64,
    pub correct: u64,
}

/// Aggregates over predictions whose confidence strictly exceeds `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredReport {
    pub threshold: f64,
    pub retained: u64,
    pub total: u64,
    pub retained_fraction: f64,
    /// Mean confidence of retained predictions; absent when none retained.
    pub avg_confidence: Option<f64>,
    /// Fraction of retained predictions with predicted == expected.
    pub avg_accuracy: Option<f64>,
    /// Micro aggregates above; per-author breakdown alongside.
    pub per_author: BTreeMap<String, AuthorFilterStats>,
}

/// Keeps predictions with confidence strictly above `threshold` (the "more
/// than" reading) and reports their average confidence and accuracy.
pub fn confidence_filter(preds: &[Prediction], threshold: f64) -> FilteredReport {
    let total = preds.len() as u64;
    let mut per_author: BTreeMap<String, AuthorFilterStats> = AuthorId::all()
        .map(|a| (a.to_string(), AuthorFilterStats::default()))
        .collect();
    let mut retained = 0u64;
    let mut conf_sum = 0.0;
    let mut correct = 0u64;
    for p in preds {
        let stats = per_author
            .get_mut(&p.expected.to_string())
            .expect("author bucket");
        stats.total += 1;
        if p.confidence > threshold {
            retained += 1;
            conf_sum += p.confidence;
            stats.retained += 1;
            if p.correct() {
                correct += 1;
                stats.correct += 1;
            }
        }
    }
    FilteredReport {
        threshold,
        retained,
        total,
        retained_fraction: if total == 0 {
            0.0
        } else {
            retained as f64 / total as f64
        },
        avg_confidence: (retained > 0).then(|| conf_sum / retained as f64),
        avg_accuracy: (retained > 0).then(|| correct as f64 / retained as f64),
        per_author,
    }
}

pub fn accuracy(preds: &[Prediction]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    preds.iter().filter(|p| p.correct()).count() as f64 / preds.len() as f64
}

pub fn confusion_matrix(preds: &[Prediction]) -> [[u64; AUTHOR_COUNT]; AUTHOR_COUNT] {
    AgreementMatrix::from_predictions(preds).counts
}

/// Macro F1 straight from the prediction list: per-class precision and recall
/// from one pass over predictions.
pub fn macro_f1(preds: &[Prediction]) -> f64 {
    let mut tp = [0u64; AUTHOR_COUNT];
    let mut fp = [0u64; AUTHOR_COUNT];
    let mut fn_ = [0u64; AUTHOR_COUNT];
    for p in preds {
        if p.correct() {
            tp[p.expected.index()] += 1;
        } else {
            fp[p.predicted.index()] += 1;
            fn_[p.expected.index()] += 1;
        }
    }
    let mut f1_sum = 0.0;
    for c in 0..AUTHOR_COUNT {
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom > 0 {
            f1_sum += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    f1_sum / AUTHOR_COUNT as f64
}

/// Macro F1 recomputed independently from a confusion matrix. Per-class
/// counts come from row/column sums, so agreement with [`macro_f1`] is exact,
/// not approximate: `f1 = 2tp / (2tp + fp + fn)` over integers either way.
pub fn macro_f1_from_confusion(m: &[[u64; AUTHOR_COUNT]; AUTHOR_COUNT]) -> f64 {
    let mut f1_sum = 0.0;
    for (c, row) in m.iter().enumerate() {
        let tp = row[c];
        let fn_ = row.iter().sum::<u64>() - tp;
        let fp = (0..AUTHOR_COUNT).map(|r| m[r][c]).sum::<u64>() - tp;
        let denom = 2 * tp + fp + fn_;
        if denom > 0 {
            f1_sum += 2.0 * tp as f64 / denom as f64;
        }
    }
    f1_sum / AUTHOR_COUNT as f64
}
