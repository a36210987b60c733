use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_rows, TabularDataset, Task};
use crate::error::{Error, Result};
use crate::metrics;

/// Neighbors used by the raw-space scorer behind [`rank_feature_importance`].
pub const IMPORTANCE_NEIGHBORS: usize = 10;

/// Positive and negative counts for a training set of `train_size` rows at
/// imbalance ratio `ir`: `n_pos = round(train_size / (1 + ir))`, at least 1.
pub fn rarity_counts(train_size: usize, ir: f64) -> (usize, usize) {
    let n_pos = ((train_size as f64 / (1.0 + ir)).round() as usize).clamp(1, train_size);
    (n_pos, train_size - n_pos)
}

/// Samples a binary training subset of exactly `train_size` rows from `pool`
/// at imbalance ratio `ir`, without replacement. Returns sorted row indices.
/// Rows outside `pool` (the test set) are never touched.
pub fn apply_rarity(ds: &TabularDataset, pool: &[usize], train_size: usize, ir: f64, seed: u64) -> Result<Vec<usize>> {
    if ds.task() != Task::Binary {
        return Err(Error::invalid("rarity subsampling requires a binary task"));
    }
    if !(ir >= 1.0) {
        return Err(Error::invalid(format!("imbalance ratio {ir} must be >= 1")));
    }
    if train_size == 0 {
        return Err(Error::invalid("train_size must be positive"));
    }
    check_rows(ds.n_rows(), pool, "pool")?;
    let y = ds.class_labels()?;
    let (n_pos, n_neg) = rarity_counts(train_size, ir);
    let mut pos: Vec<usize> = pool.iter().copied().filter(|&i| y[i] == 1).collect();
    let mut neg: Vec<usize> = pool.iter().copied().filter(|&i| y[i] == 0).collect();
    if pos.len() < n_pos {
        return Err(Error::InsufficientRows { class: 1, required: n_pos, available: pos.len() });
    }
    if neg.len() < n_neg {
        return Err(Error::InsufficientRows { class: 0, required: n_neg, available: neg.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut rows: Vec<usize> = pos[..n_pos].iter().chain(&neg[..n_neg]).copied().collect();
    rows.sort_unstable();
    Ok(rows)
}

/// Keeps the first `n_features` columns of `importance_order` (a permutation
/// of column indices); survivors keep their original relative order. A request
/// larger than the column count is clamped with a warning.
pub fn apply_heterogeneity(
    ds: &TabularDataset,
    n_features: usize,
    importance_order: &[usize],
) -> Result<TabularDataset> {
    let d = ds.n_features();
    let mut seen = vec![false; d];
    if importance_order.len() != d || importance_order.iter().any(|&c| c >= d || std::mem::replace(&mut seen[c], true))
    {
        return Err(Error::invalid("importance order is not a permutation of the columns"));
    }
    if n_features == 0 {
        return Err(Error::invalid("n_features must be positive"));
    }
    let take = n_features.min(d);
    let mut cols = importance_order[..take].to_vec();
    cols.sort_unstable();
    let mut out = ds.select_columns(&cols);
    if n_features > d {
        out.push_warning(format!("requested {n_features} features, dataset has {d}; clamped"));
    }
    Ok(out)
}

/// Per-column permutation importance and the descending-importance order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    /// Column indices, most important first; ties by ascending index.
    pub order: Vec<usize>,
    /// Drop in validation AUROC when the column is shuffled, per column.
    pub importance: Vec<f64>,
    pub baseline_auroc: f64,
}

/// Permutation importance of each column for a raw-space
/// [`IMPORTANCE_NEIGHBORS`]-NN scorer fitted on `fit_idx` and scored on
/// `valid_idx`. Each column is shuffled once across the validation rows; the
/// shuffles are drawn from one stream seeded with `seed`, in column order.
/// Multiclass tasks use macro one-vs-rest AUROC.
pub fn rank_feature_importance(
    ds: &TabularDataset,
    fit_idx: &[usize],
    valid_idx: &[usize],
    seed: u64,
) -> Result<FeatureImportance> {
    let y = ds.class_labels()?;
    let n_classes = ds.task().n_classes().unwrap_or(2);
    check_rows(ds.n_rows(), fit_idx, "fit")?;
    check_rows(ds.n_rows(), valid_idx, "valid")?;
    if fit_idx.len() < IMPORTANCE_NEIGHBORS {
        return Err(Error::invalid(format!("importance scorer needs at least {IMPORTANCE_NEIGHBORS} fitting rows")));
    }
    let x = ds.features();
    let d = ds.n_features();
    let nf = fit_idx.len();
    let nv = valid_idx.len();
    let fit_y: Vec<usize> = fit_idx.iter().map(|&i| y[i]).collect();
    let valid_y: Vec<usize> = valid_idx.iter().map(|&i| y[i]).collect();

    let mut base = vec![0.0; nv * nf];
    for (q, &vi) in valid_idx.iter().enumerate() {
        let vrow = x.row(vi);
        let vrow = vrow.as_slice().expect("standard layout");
        for (t, &fi) in fit_idx.iter().enumerate() {
            base[q * nf + t] = crate::distance::squared_euclidean(vrow, x.row(fi).as_slice().expect("standard layout"));
        }
    }

    let score_all = |dist: &dyn Fn(usize, &mut Vec<(f64, usize)>)| -> Result<f64> {
        let mut votes = vec![vec![0.0; nv]; n_classes];
        let mut buf: Vec<(f64, usize)> = Vec::with_capacity(nf);
        for q in 0..nv {
            dist(q, &mut buf);
            buf.select_nth_unstable_by(IMPORTANCE_NEIGHBORS - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(_, t) in &buf[..IMPORTANCE_NEIGHBORS] {
                votes[fit_y[t]][q] += 1.0 / IMPORTANCE_NEIGHBORS as f64;
            }
        }
        macro_auroc(&votes, &valid_y)
    };

    let baseline_auroc = score_all(&|q, buf| {
        buf.clear();
        buf.extend((0..nf).map(|t| (base[q * nf + t], t)));
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut importance = Vec::with_capacity(d);
    let mut perm: Vec<usize> = (0..nv).collect();
    for j in 0..d {
        perm.shuffle(&mut rng);
        let fit_col: Vec<f64> = fit_idx.iter().map(|&i| x[[i, j]]).collect();
        let auroc = score_all(&|q, buf| {
            let orig = x[[valid_idx[q], j]];
            let shuffled = x[[valid_idx[perm[q]], j]];
            buf.clear();
            buf.extend((0..nf).map(|t| {
                let a = orig - fit_col[t];
                let b = shuffled - fit_col[t];
                (base[q * nf + t] - a * a + b * b, t)
            }));
        })?;
        importance.push(baseline_auroc - auroc);
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    Ok(FeatureImportance { order, importance, baseline_auroc })
}

fn macro_auroc(votes: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if votes.len() == 2 {
        let bin: Vec<usize> = labels.iter().map(|&c| usize::from(c == 1)).collect();
        return metrics::auroc(&votes[1], &bin);
    }
    let mut total = 0.0;
    for (c, v) in votes.iter().enumerate() {
        let bin: Vec<usize> = labels.iter().map(|&y| usize::from(y == c)).collect();
        total += metrics::auroc(v, &bin)?;
    }
    Ok(total / votes.len() as f64)
}
