//! Evaluation metrics: AUROC, AUPRC (average precision), F1, MAE and RMSE.

use crate::error::{Error, Result};

/// Scores paired with labels, validated once.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<usize>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        check(&scores, labels.len())?;
        Ok(ScoredSet { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn auroc(&self) -> Result<f64> {
        auroc(&self.scores, &self.labels)
    }

    pub fn auprc(&self) -> Result<f64> {
        auprc(&self.scores, &self.labels)
    }

    pub fn f1(&self, threshold: f64) -> Result<f64> {
        f1(&self.scores, &self.labels, threshold)
    }
}

fn check(scores: &[f64], n_labels: usize) -> Result<()> {
    if scores.len() != n_labels {
        return Err(Error::shape(format!("{} scores but {n_labels} labels", scores.len())));
    }
    if scores.is_empty() {
        return Err(Error::UndefinedMetric("empty input".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    Ok(())
}

fn check_binary(labels: &[usize]) -> Result<(usize, usize)> {
    let mut pos = 0;
    for &y in labels {
        match y {
            0 => {}
            1 => pos += 1,
            other => return Err(Error::invalid(format!("binary label expected, got {other}"))),
        }
    }
    Ok((pos, labels.len() - pos))
}

/// Mann-Whitney AUROC: the fraction of positive/negative pairs ranked
/// correctly, ties counting one half. Computed from mid-ranks in O(n log n).
pub fn auroc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    check(scores, labels.len())?;
    let (n_pos, n_neg) = check_binary(labels)?;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both positive and negative labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of positive ranks; tied blocks share their mean rank. Ranks are
    // doubled to stay in integers.
    let mut pos_rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j, mean (i+1+j)/2.
        let mid2 = (i + 1 + j) as u128;
        let pos_in_block = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        pos_rank_sum2 += mid2 * pos_in_block;
        i = j;
    }
    let np = n_pos as u128;
    // 2U = 2*sum(ranks) - n_pos(n_pos+1)
    let u2 = pos_rank_sum2 - np * (np + 1);
    Ok(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Average precision: rows sorted by descending score (ties keep ascending
/// original index), then the mean over positives of the precision at each
/// positive's rank.
pub fn auprc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    check(scores, labels.len())?;
    let (n_pos, _) = check_binary(labels)?;
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("AUPRC needs at least one positive label".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (rank, &k) in order.iter().enumerate() {
        if labels[k] == 1 {
            tp += 1;
            sum += tp as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

/// Binary F1 of `score >= threshold`; zero when precision + recall is zero.
pub fn f1(scores: &[f64], labels: &[usize], threshold: f64) -> Result<f64> {
    check(scores, labels.len())?;
    check_binary(labels)?;
    let pred: Vec<usize> = scores.iter().map(|&s| usize::from(s >= threshold)).collect();
    Ok(f1_for_class(&pred, labels, 1))
}

fn f1_for_class(pred: &[usize], labels: &[usize], class: usize) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &y) in pred.iter().zip(labels) {
        match (p == class, y == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Unweighted mean of one-vs-rest F1 over `n_classes` classes.
pub fn f1_macro(pred: &[usize], labels: &[usize], n_classes: usize) -> Result<f64> {
    if pred.len() != labels.len() || pred.is_empty() {
        return Err(Error::shape("predictions and labels must be non-empty and equal length"));
    }
    if n_classes == 0 {
        return Err(Error::invalid("n_classes must be positive"));
    }
    let total: f64 = (0..n_classes).map(|c| f1_for_class(pred, labels, c)).sum();
    Ok(total / n_classes as f64)
}

/// `(MAE, RMSE)` of predictions against targets.
pub fn mae_rmse(pred: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    check(pred, truth.len())?;
    let n = pred.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let e = t - p;
        abs += e.abs();
        sq += e * e;
    }
    Ok((abs / n, (sq / n).sqrt()))
}

/// Mean one-vs-rest value of `metric` over classes, from per-class scores
/// (`class_scores[c][i]` is the score of row `i` for class `c`).
pub fn one_vs_rest(
    class_scores: &[Vec<f64>],
    labels: &[usize],
    metric: fn(&[f64], &[usize]) -> Result<f64>,
) -> Result<f64> {
    if class_scores.len() == 2 {
        return metric(&class_scores[1], labels);
    }
    let mut total = 0.0;
    for (c, s) in class_scores.iter().enumerate() {
        let bin: Vec<usize> = labels.iter().map(|&y| usize::from(y == c)).collect();
        total += metric(s, &bin)?;
    }
    Ok(total / class_scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise_auroc(scores: &[f64], labels: &[usize]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            for (j, &yj) in labels.iter().enumerate() {
                if yi == 1 && yj == 0 {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.9, 0.8, 0.7, 0.1], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.3; 6], &[1, 0, 1, 0, 0, 0]).unwrap(), 0.5);
    }

    #[test]
    fn auroc_single_class_is_undefined() {
        assert!(matches!(auroc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn auprc_examples() {
        let ap = auprc(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(auprc(&[0.9, 0.8, 0.1], &[1, 1, 0]).unwrap(), 1.0);
        assert!(matches!(auprc(&[0.1, 0.2], &[0, 0]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn auprc_ties_keep_original_order() {
        // Tied scores: the negative at index 0 ranks before the positive.
        let ap = auprc(&[0.5, 0.5], &[0, 1]).unwrap();
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1(&[1.0, 0.0, 1.0], &[1, 0, 1], 0.5).unwrap(), 1.0);
        assert_eq!(f1(&[0.1, 0.2], &[1, 0], 0.5).unwrap(), 0.0);
        // TP=2, FP=1, FN=1
        let v = f1(&[0.9, 0.9, 0.9, 0.1, 0.1], &[1, 1, 0, 1, 0], 0.5).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn macro_f1_averages_classes() {
        let v = f1_macro(&[0, 1, 2, 2], &[0, 1, 2, 1], 3).unwrap();
        // class 0: 1, class 1: P=1 R=1/2 -> 2/3, class 2: P=1/2 R=1 -> 2/3
        assert!((v - (1.0 + 2.0 / 3.0 + 2.0 / 3.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn regression_errors() {
        assert_eq!(mae_rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, 0.0));
        assert_eq!(mae_rmse(&[1.0, 1.0], &[2.0, 0.0]).unwrap(), (1.0, 1.0));
        let (mae, rmse) = mae_rmse(&[0.0, 0.0], &[0.0, 2.0]).unwrap();
        assert_eq!(mae, 1.0);
        assert!((rmse - 2f64.sqrt()).abs() < 1e-15);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
        (2usize..50).prop_flat_map(|n| {
            (
                proptest::collection::vec((0i32..20).prop_map(|v| v as f64 / 4.0), n),
                proptest::collection::vec(0usize..2, n),
            )
        })
    }

    proptest! {
        #[test]
        fn auroc_matches_pairwise((scores, labels) in instance()) {
            let pos = labels.iter().filter(|&&y| y == 1).count();
            prop_assume!(pos > 0 && pos < labels.len());
            let fast = auroc(&scores, &labels).unwrap();
            prop_assert!((fast - pairwise_auroc(&scores, &labels)).abs() < 1e-12);
        }

        #[test]
        fn auroc_invariant_under_monotone_transform((scores, labels) in instance()) {
            let pos = labels.iter().filter(|&&y| y == 1).count();
            prop_assume!(pos > 0 && pos < labels.len());
            let t: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 1.0).collect();
            prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&t, &labels).unwrap());
        }

        #[test]
        fn rmse_at_least_mae(errs in proptest::collection::vec(-100.0f64..100.0, 1..40)) {
            let zeros = vec![0.0; errs.len()];
            let (mae, rmse) = mae_rmse(&zeros, &errs).unwrap();
            prop_assert!(rmse + 1e-12 >= mae);
        }
    }

    #[test]
    fn auroc_complement_for_distinct_scores() {
        let scores = [0.3, 0.1, 0.9, 0.45, 0.7, 0.2];
        let labels = [1, 0, 1, 0, 0, 1];
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let sum = auroc(&scores, &labels).unwrap() + auroc(&neg, &labels).unwrap();
        assert!((sum - 1.0).abs() < 1e-15);
    }
}
