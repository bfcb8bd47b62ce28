//! Binary classification metrics: confusion counts, threshold metrics, ROC
//! curves with trapezoidal AUC, and average precision.
//!
//! Undefined quantities (empty inputs, zero denominators, single-class
//! label sets) are reported as typed errors instead of NaN so callers can
//! distinguish "model is bad" from "question is meaningless".

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty input: {what}")]
    EmptyInput { what: &'static str },
    #[error("scores and labels have different lengths: {scores} vs {labels}")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score at index {index} is not finite: {value}")]
    BadScore { index: usize, value: f64 },
    #[error("{metric} is undefined: {reason}")]
    Undefined {
        metric: &'static str,
        reason: &'static str,
    },
}

/// Raw outcome counts of binary predictions against truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn from_predictions(predicted: &[bool], actual: &[bool]) -> Result<Self, MetricsError> {
        if predicted.is_empty() {
            return Err(MetricsError::EmptyInput {
                what: "predictions",
            });
        }
        if predicted.len() != actual.len() {
            return Err(MetricsError::LengthMismatch {
                scores: predicted.len(),
                labels: actual.len(),
            });
        }
        let mut c = ConfusionCounts {
            tp: 0,
            fp: 0,
            tn: 0,
            fn_: 0,
        };
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// (TP + TN) / total.
pub fn accuracy(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    if c.total() == 0 {
        return Err(MetricsError::Undefined {
            metric: "accuracy",
            reason: "no observations",
        });
    }
    Ok((c.tp + c.tn) as f64 / c.total() as f64)
}

/// TP / (TP + FP).
pub fn precision(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    let denom = c.tp + c.fp;
    if denom == 0 {
        return Err(MetricsError::Undefined {
            metric: "precision",
            reason: "no positive predictions",
        });
    }
    Ok(c.tp as f64 / denom as f64)
}

/// TP / (TP + FN), a.k.a. true positive rate.
pub fn recall(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    let denom = c.tp + c.fn_;
    if denom == 0 {
        return Err(MetricsError::Undefined {
            metric: "recall",
            reason: "no actual positives",
        });
    }
    Ok(c.tp as f64 / denom as f64)
}

/// FP / (FP + FN): the "false positive rate" exactly as some summaries
/// print it, normalizing false positives by the total number of errors.
/// See [`fpr_conventional`] for the textbook rate used in ROC analysis.
pub fn fpr_as_printed(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    let denom = c.fp + c.fn_;
    if denom == 0 {
        return Err(MetricsError::Undefined {
            metric: "fpr_as_printed",
            reason: "no errors at all",
        });
    }
    Ok(c.fp as f64 / denom as f64)
}

/// FP / (FP + TN): the conventional false positive rate (the ROC x-axis).
pub fn fpr_conventional(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    let denom = c.fp + c.tn;
    if denom == 0 {
        return Err(MetricsError::Undefined {
            metric: "fpr_conventional",
            reason: "no actual negatives",
        });
    }
    Ok(c.fp as f64 / denom as f64)
}

/// ROC curve points swept over the distinct score thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// (fpr, tpr) pairs from (0,0) to (1,1), non-decreasing in both axes.
    pub points: Vec<(f64, f64)>,
    /// Distinct thresholds in descending order, one per interior point.
    pub thresholds: Vec<f64>,
}

fn validate_scored(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyInput { what: "scores" });
    }
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    for (i, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(MetricsError::BadScore { index: i, value: s });
        }
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    Ok((pos, neg))
}

/// Sweeps thresholds from high to low, emitting one point per distinct
/// score. Tied scores move as a block, which makes the trapezoidal area
/// under the curve equal to the rank statistic that counts ties as 1/2.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve, MetricsError> {
    let (pos, neg) = validate_scored(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::Undefined {
            metric: "roc_curve",
            reason: "needs at least one positive and one negative label",
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut k = 0;
    while k < order.len() {
        let t = scores[order[k]];
        // Consume the whole block of ties at this threshold.
        while k < order.len() && scores[order[k]] == t {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        thresholds.push(t);
    }
    Ok(RocCurve { points, thresholds })
}

/// Area under the ROC curve by trapezoidal rule.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    let curve = roc_curve(scores, labels)?;
    let mut auc = 0.0;
    for w in curve.points.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        auc += (x1 - x0) * (y0 + y1) / 2.0;
    }
    Ok(auc)
}

/// Average precision: sum over descending distinct thresholds of
/// `(R_k - R_{k-1}) * P_k`.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    let (pos, _neg) = validate_scored(scores, labels)?;
    if pos == 0 {
        return Err(MetricsError::Undefined {
            metric: "average_precision",
            reason: "needs at least one positive label",
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));

    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut prev_recall = 0.0;
    let mut k = 0;
    while k < order.len() {
        let t = scores[order[k]];
        while k < order.len() && scores[order[k]] == t {
            if labels[order[k]] {
                tp += 1;
            }
            seen += 1;
            k += 1;
        }
        let recall = tp as f64 / pos as f64;
        let prec = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * prec;
        prev_recall = recall;
    }
    Ok(ap)
}
