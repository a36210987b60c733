//! Tabular datasets: loading, preprocessing, splitting, synthesis and the
//! dataset transforms used by the stress protocols.

mod io;
mod preprocess;
mod series;
mod split;
mod stress;
mod synthetic;

pub use io::{load_csv, write_csv, Manifest, TaskKind};
pub use preprocess::{apply_statistics, filter_features, preprocess, RARE_PREVALENCE, VARIANCE_FLOOR};
pub use series::{aggregate_series, Window};
pub use split::{stratified_split, SplitSpec};
pub use stress::{
    apply_heterogeneity, apply_rarity, rank_feature_importance, rarity_counts, FeatureImportance, IMPORTANCE_NEIGHBORS,
};
pub use synthetic::{make_synthetic, minority_count, SyntheticSpec};

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnKind {
    Numerical,
    Categorical,
}

/// Per-column record. Statistics are filled in by [`preprocess`] from the
/// training split and reused verbatim for every other row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default)]
    pub train_mean: Option<f64>,
    #[serde(default)]
    pub train_std: Option<f64>,
    #[serde(default)]
    pub train_mode: Option<f64>,
    /// Category tokens in encoding order (categorical columns only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl ColumnMeta {
    pub fn numerical(name: impl Into<String>) -> Self {
        ColumnMeta {
            name: name.into(),
            kind: ColumnKind::Numerical,
            train_mean: None,
            train_std: None,
            train_mode: None,
            categories: Vec::new(),
        }
    }

    pub fn categorical(name: impl Into<String>, categories: Vec<String>) -> Self {
        ColumnMeta { kind: ColumnKind::Categorical, categories, ..ColumnMeta::numerical(name) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Binary,
    Multiclass(usize),
    Regression,
}

impl Task {
    /// Number of classes, or `None` for regression.
    pub fn n_classes(self) -> Option<usize> {
        match self {
            Task::Binary => Some(2),
            Task::Multiclass(c) => Some(c),
            Task::Regression => None,
        }
    }

    pub fn is_classification(self) -> bool {
        !matches!(self, Task::Regression)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Labels {
    Class(Vec<usize>),
    Real(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Class(v) => v.len(),
            Labels::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_class(&self) -> Option<&[usize]> {
        match self {
            Labels::Class(v) => Some(v),
            Labels::Real(_) => None,
        }
    }

    pub fn as_real(&self) -> Option<&[f64]> {
        match self {
            Labels::Real(v) => Some(v),
            Labels::Class(_) => None,
        }
    }

    pub fn select(&self, rows: &[usize]) -> Labels {
        match self {
            Labels::Class(v) => Labels::Class(rows.iter().map(|&i| v[i]).collect()),
            Labels::Real(v) => Labels::Real(rows.iter().map(|&i| v[i]).collect()),
        }
    }

    pub fn get(&self, i: usize) -> Label {
        match self {
            Labels::Class(v) => Label::Class(v[i]),
            Labels::Real(v) => Label::Real(v[i]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Class(usize),
    Real(f64),
}

/// Feature matrix (rows are encounters) with labels and per-column metadata.
///
/// Missing values are stored as NaN until [`preprocess`] replaces them.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularDataset {
    features: Array2<f64>,
    labels: Labels,
    column_meta: Vec<ColumnMeta>,
    task: Task,
    group_ids: Option<Vec<String>>,
    informative: Option<Vec<usize>>,
    warnings: Vec<String>,
    preprocessed: bool,
}

impl TabularDataset {
    pub fn new(features: Array2<f64>, labels: Labels, column_meta: Vec<ColumnMeta>, task: Task) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::shape(format!("{} feature rows but {} labels", features.nrows(), labels.len())));
        }
        if features.ncols() != column_meta.len() {
            return Err(Error::shape(format!(
                "{} feature columns but {} column records",
                features.ncols(),
                column_meta.len()
            )));
        }
        match (&labels, task) {
            (Labels::Class(v), Task::Binary | Task::Multiclass(_)) => {
                let c = task.n_classes().unwrap_or(0);
                if let Some(bad) = v.iter().find(|&&y| y >= c) {
                    return Err(Error::invalid(format!("class index {bad} outside [0, {c})")));
                }
            }
            (Labels::Real(v), Task::Regression) => {
                if v.iter().any(|y| !y.is_finite()) {
                    return Err(Error::invalid("non-finite regression target"));
                }
            }
            _ => return Err(Error::invalid("label kind does not match task")),
        }
        Ok(TabularDataset {
            features: standard(features),
            labels,
            column_meta,
            task,
            group_ids: None,
            informative: None,
            warnings: Vec::new(),
            preprocessed: false,
        })
    }

    pub fn with_group_ids(mut self, group_ids: Vec<String>) -> Result<Self> {
        if group_ids.len() != self.n_rows() {
            return Err(Error::shape("group id count differs from row count"));
        }
        self.group_ids = Some(group_ids);
        Ok(self)
    }

    pub(crate) fn with_informative(mut self, informative: Vec<usize>) -> Self {
        self.informative = Some(informative);
        self
    }

    pub(crate) fn push_warning(&mut self, w: impl Into<String>) {
        self.warnings.push(w.into());
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    /// Class labels, or an error for regression datasets.
    pub fn class_labels(&self) -> Result<&[usize]> {
        self.labels.as_class().ok_or_else(|| Error::invalid("operation requires a classification dataset"))
    }

    pub fn column_meta(&self) -> &[ColumnMeta] {
        &self.column_meta
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn group_ids(&self) -> Option<&[String]> {
        self.group_ids.as_deref()
    }

    /// Ground-truth informative columns (synthetic datasets only).
    pub fn informative(&self) -> Option<&[usize]> {
        self.informative.as_deref()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn is_preprocessed(&self) -> bool {
        self.preprocessed
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn missing_mask(&self) -> Array2<bool> {
        self.features.mapv(f64::is_nan)
    }

    pub fn class_counts(&self) -> Result<Vec<usize>> {
        let labels = self.class_labels()?;
        let mut counts = vec![0; self.task.n_classes().unwrap_or(0)];
        for &y in labels {
            counts[y] += 1;
        }
        Ok(counts)
    }

    /// New dataset holding `rows` in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> TabularDataset {
        TabularDataset {
            features: standard(self.features.select(Axis(0), rows)),
            labels: self.labels.select(rows),
            column_meta: self.column_meta.clone(),
            task: self.task,
            group_ids: self.group_ids.as_ref().map(|g| rows.iter().map(|&i| g[i].clone()).collect()),
            informative: self.informative.clone(),
            warnings: self.warnings.clone(),
            preprocessed: self.preprocessed,
        }
    }

    /// New dataset holding `cols` (ascending) of this one. Informative column
    /// indices are remapped to the new positions.
    pub(crate) fn select_columns(&self, cols: &[usize]) -> TabularDataset {
        let informative = self
            .informative
            .as_ref()
            .map(|inf| cols.iter().enumerate().filter(|(_, c)| inf.contains(c)).map(|(new, _)| new).collect());
        TabularDataset {
            features: standard(self.features.select(Axis(1), cols)),
            labels: self.labels.clone(),
            column_meta: cols.iter().map(|&c| self.column_meta[c].clone()).collect(),
            task: self.task,
            group_ids: self.group_ids.clone(),
            informative,
            warnings: self.warnings.clone(),
            preprocessed: self.preprocessed,
        }
    }
}

fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

pub(crate) fn check_rows(n: usize, rows: &[usize], what: &str) -> Result<()> {
    if let Some(&bad) = rows.iter().find(|&&i| i >= n) {
        return Err(Error::invalid(format!("{what} index {bad} out of bounds for {n} rows")));
    }
    Ok(())
}
