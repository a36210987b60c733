use super::{check_rows, ColumnKind, ColumnMeta, TabularDataset};
use crate::error::{Error, Result};

/// Columns whose train variance falls below this are treated as constant.
pub const VARIANCE_FLOOR: f64 = 1e-8;
/// Two-valued columns whose minority value covers less than this fraction of
/// train rows are dropped.
pub const RARE_PREVALENCE: f64 = 1e-3;

fn observed(ds: &TabularDataset, col: usize, rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&i| ds.features[[i, col]]).filter(|v| !v.is_nan()).collect()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Most frequent value; ties resolve to the smallest value.
fn mode(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mut best, mut best_count) = (sorted[0], 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        if j - i > best_count {
            best = sorted[i];
            best_count = j - i;
        }
        i = j;
    }
    best
}

/// Imputes and normalizes every column with statistics from `train_idx`.
///
/// Numerical columns: missing values take the train mean, then the column is
/// z-scored with the train mean and population std of the observed train
/// values (a zero std only centers the column). Categorical columns: missing
/// values take the train mode; codes are left unscaled. Columns with no
/// observed train value are dropped with a warning.
///
/// A dataset that already carries train statistics is returned unchanged, so
/// applying this twice is the same as applying it once.
pub fn preprocess(ds: &TabularDataset, train_idx: &[usize]) -> Result<TabularDataset> {
    if train_idx.is_empty() {
        return Err(Error::invalid("preprocess needs a non-empty training split"));
    }
    check_rows(ds.n_rows(), train_idx, "train")?;
    if ds.preprocessed {
        return Ok(ds.clone());
    }

    let mut out = ds.clone();
    let mut keep = Vec::with_capacity(ds.n_features());
    for col in 0..ds.n_features() {
        let obs = observed(ds, col, train_idx);
        let meta = &mut out.column_meta[col];
        if obs.is_empty() {
            out.warnings.push(format!("column `{}` dropped: no observed values on the training split", meta.name));
            continue;
        }
        keep.push(col);
        let mut column = out.features.column_mut(col);
        match meta.kind {
            ColumnKind::Numerical => {
                let (mean, std) = mean_std(&obs);
                meta.train_mean = Some(mean);
                meta.train_std = Some(std);
                for v in column.iter_mut() {
                    let x = if v.is_nan() { mean } else { *v };
                    *v = if std > 0.0 { (x - mean) / std } else { x - mean };
                }
            }
            ColumnKind::Categorical => {
                let m = mode(&obs);
                meta.train_mode = Some(m);
                for v in column.iter_mut() {
                    if v.is_nan() {
                        *v = m;
                    }
                }
            }
        }
    }
    let mut out = if keep.len() == ds.n_features() { out } else { out.select_columns(&keep) };
    if out.n_features() == 0 {
        return Err(Error::Schema("every column is missing on the training split".into()));
    }
    out.preprocessed = true;
    Ok(out)
}

/// Re-applies stored training statistics to another file of the same schema.
///
/// Columns are matched by name and emitted in the order of `columns`; extra
/// columns are ignored. Categorical cells are re-coded through their tokens,
/// so files that met categories in a different order agree; tokens unseen in
/// training take the training mode.
pub fn apply_statistics(ds: &TabularDataset, columns: &[ColumnMeta]) -> Result<TabularDataset> {
    if columns.is_empty() {
        return Err(Error::invalid("no column statistics to apply"));
    }
    let mut cols = Vec::with_capacity(columns.len());
    for meta in columns {
        let found = ds.column_meta.iter().position(|c| c.name == meta.name).ok_or_else(|| {
            Error::shape(format!("column `{}` expected by the model is missing from the data", meta.name))
        })?;
        if ds.column_meta[found].kind != meta.kind {
            return Err(Error::shape(format!("column `{}` changed kind", meta.name)));
        }
        cols.push(found);
    }
    let mut out = ds.select_columns(&cols);
    for (j, meta) in columns.iter().enumerate() {
        let source = out.column_meta[j].categories.clone();
        let mut column = out.features.column_mut(j);
        match meta.kind {
            ColumnKind::Numerical => {
                let (Some(mean), Some(std)) = (meta.train_mean, meta.train_std) else {
                    return Err(Error::invalid(format!("column `{}` has no training statistics", meta.name)));
                };
                for v in column.iter_mut() {
                    let x = if v.is_nan() { mean } else { *v };
                    *v = if std > 0.0 { (x - mean) / std } else { x - mean };
                }
            }
            ColumnKind::Categorical => {
                let Some(m) = meta.train_mode else {
                    return Err(Error::invalid(format!("column `{}` has no training mode", meta.name)));
                };
                for v in column.iter_mut() {
                    let token = if v.is_nan() { None } else { source.get(*v as usize) };
                    *v = token.and_then(|t| meta.categories.iter().position(|c| c == t)).map_or(m, |code| code as f64);
                }
            }
        }
    }
    out.column_meta = columns.to_vec();
    out.preprocessed = true;
    Ok(out)
}

/// Drops near-constant and ultra-rare two-valued columns (statistics on
/// `train_idx`), then keeps at most `max_features` columns of highest train
/// variance. Survivors keep their original order.
pub fn filter_features(ds: &TabularDataset, train_idx: &[usize], max_features: usize) -> Result<TabularDataset> {
    if max_features == 0 {
        return Err(Error::invalid("max_features must be at least 1"));
    }
    if train_idx.is_empty() {
        return Err(Error::invalid("filter_features needs a non-empty training split"));
    }
    check_rows(ds.n_rows(), train_idx, "train")?;

    let mut survivors: Vec<(usize, f64)> = Vec::new();
    for col in 0..ds.n_features() {
        let obs = observed(ds, col, train_idx);
        if obs.is_empty() {
            continue;
        }
        let (_, std) = mean_std(&obs);
        let var = std * std;
        if var < VARIANCE_FLOOR {
            continue;
        }
        if let Some(prevalence) = minority_prevalence(&obs) {
            if prevalence < RARE_PREVALENCE {
                continue;
            }
        }
        survivors.push((col, var));
    }
    if survivors.is_empty() {
        return Err(Error::Schema("feature filtering removed every column".into()));
    }
    if survivors.len() > max_features {
        // Highest variance first; equal variances keep the earlier column.
        let mut ranked = survivors.clone();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(max_features);
        survivors.retain(|s| ranked.iter().any(|r| r.0 == s.0));
    }
    let cols: Vec<usize> = survivors.iter().map(|s| s.0).collect();
    Ok(ds.select_columns(&cols))
}

/// Fraction of rows holding the less frequent value, for columns with exactly
/// two distinct values.
fn minority_prevalence(values: &[f64]) -> Option<f64> {
    let first = values[0];
    let second = values.iter().copied().find(|&v| v != first)?;
    let mut n_first = 0usize;
    for &v in values {
        if v == first {
            n_first += 1;
        } else if v != second {
            return None;
        }
    }
    let n_second = values.len() - n_first;
    Some(n_first.min(n_second) as f64 / values.len() as f64)
}
