//! Evaluation metrics: F1-micro, accuracy, ROC-AUC and silhouette.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::graphio::Labels;
use crate::numkit::DenseMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("metric over zero samples")]
    Empty,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("metric undefined: {0}")]
    Undefined(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub metric: String,
    pub value: f64,
    pub count: usize,
}

impl fmt::Display for EvalResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:.6} n={}", self.metric, self.value, self.count)
    }
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::Shape(format!("{} predictions vs {} targets", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(MetricError::Empty);
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Micro-averaged F1, `2TP / (2TP + FP + FN)` pooled over classes.
///
/// For single-label inputs every sample contributes one prediction, so the
/// value coincides with accuracy and is computed that way.
pub fn f1_micro(pred: &Labels, truth: &Labels) -> Result<f64, MetricError> {
    match (pred, truth) {
        (Labels::Single(p), Labels::Single(t)) => accuracy(p, t),
        (Labels::Multi(p), Labels::Multi(t)) => {
            if p.len() != t.len() {
                return Err(MetricError::Shape(format!("{} vs {} rows", p.len(), t.len())));
            }
            if p.is_empty() {
                return Err(MetricError::Empty);
            }
            let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
            for (pr, tr) in p.iter().zip(t) {
                if pr.len() != tr.len() {
                    return Err(MetricError::Shape("multi-hot rows differ in width".into()));
                }
                for (&a, &b) in pr.iter().zip(tr) {
                    match (a, b) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fn_ += 1,
                        (false, false) => {}
                    }
                }
            }
            let denom = 2 * tp + fp + fn_;
            // no positives anywhere, predicted or true: perfect agreement
            if denom == 0 {
                return Ok(1.0);
            }
            Ok(2.0 * tp as f64 / denom as f64)
        }
        _ => Err(MetricError::Shape("cannot mix single-label and multi-label inputs".into())),
    }
}

/// Multi-hot predictions from logits, thresholding sigmoid probabilities at 0.5.
pub fn threshold_multilabel(logits: &DenseMatrix) -> Vec<Vec<bool>> {
    (0..logits.rows()).map(|r| logits.row(r).iter().map(|&z| z > 0.0).collect()).collect()
}

/// Probability that a random positive outscores a random negative, ties counting half.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Result<f64, MetricError> {
    if scores.len() != truth.len() {
        return Err(MetricError::Shape(format!("{} scores vs {} targets", scores.len(), truth.len())));
    }
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::Undefined("ROC-AUC needs both positive and negative samples".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricError::Undefined("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over tie groups, 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += order[i..=j].iter().filter(|&&k| truth[k]).count() as f64 * avg;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

fn euclid(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt()
}

/// Mean silhouette coefficient under Euclidean distance.
///
/// Points in singleton clusters score 0, as do points whose intra and
/// nearest-cluster distances are both zero.
pub fn silhouette(embeddings: &DenseMatrix, labels: &[usize]) -> Result<f64, MetricError> {
    let n = embeddings.rows();
    if labels.len() != n {
        return Err(MetricError::Shape(format!("{n} embeddings vs {} labels", labels.len())));
    }
    if n == 0 {
        return Err(MetricError::Empty);
    }
    let mut clusters: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *clusters.entry(l).or_default() += 1;
    }
    if clusters.len() < 2 {
        return Err(MetricError::Undefined("silhouette needs at least two clusters".into()));
    }
    let slot: BTreeMap<usize, usize> = clusters.keys().enumerate().map(|(i, &c)| (c, i)).collect();
    let sizes: Vec<usize> = clusters.values().copied().collect();
    let k = sizes.len();
    let mut total = 0.0;
    let mut sums = vec![0.0f64; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        let row = embeddings.row(i);
        for j in 0..n {
            if i != j {
                sums[slot[&labels[j]]] += euclid(row, embeddings.row(j));
            }
        }
        let own = slot[&labels[i]];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}
