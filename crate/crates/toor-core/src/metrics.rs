//! Detection metrics: AUROC by rank statistic, precision/recall, and the
//! score histogram table.

/// AUROC of positives vs negatives with ties counting 0.5.
///
/// Computed by exact pair counting (every pair contributes 1, 0.5, or 0),
/// so it matches an all-pairs brute force bit for bit. Returns `None` when
/// either class is empty.
pub fn auroc(positive_scores: &[f64], negative_scores: &[f64]) -> Option<f64> {
    if positive_scores.is_empty() || negative_scores.is_empty() {
        return None;
    }
    let mut neg = negative_scores.to_vec();
    neg.sort_by(|a, b| a.partial_cmp(b).expect("scores must not be NaN"));
    let mut total = 0.0;
    for &p in positive_scores {
        let below = neg.partition_point(|&n| n < p);
        let not_above = neg.partition_point(|&n| n <= p);
        total += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Some(total / (positive_scores.len() as f64 * negative_scores.len() as f64))
}

/// Precision and recall of a binary prediction against ground truth.
/// Vacuous denominators (nothing predicted / nothing true) yield 1.0.
pub fn precision_recall(predicted: &[bool], truth: &[bool]) -> (f64, f64) {
    assert_eq!(predicted.len(), truth.len());
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        1.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    (precision, recall)
}

/// Histogram of scores over `bins` uniform bins on `[0, 1]`, counted
/// separately for the two truth classes. Scores at 1.0 land in the last bin.
pub fn score_histogram(
    scores: &[f64],
    truth_id: &[bool],
    bins: usize,
) -> Vec<(f64, usize, usize)> {
    assert_eq!(scores.len(), truth_id.len());
    assert!(bins > 0);
    let mut table: Vec<(f64, usize, usize)> = (0..bins)
        .map(|i| (i as f64 / bins as f64, 0, 0))
        .collect();
    for (&s, &is_id) in scores.iter().zip(truth_id) {
        let idx = ((s * bins as f64) as usize).min(bins - 1);
        if is_id {
            table[idx].1 += 1;
        } else {
            table[idx].2 += 1;
        }
    }
    table
}
