//! Exact nearest-neighbor retrieval over a frozen embedding matrix.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, Labels};
use crate::distance::{self, DistanceKind};
use crate::error::{Error, Result};

/// Context size used when none is given.
pub const DEFAULT_CONTEXT_SIZE: usize = 1024;

pub const INDEX_FORMAT_VERSION: u32 = 1;

/// One retrieved row. `position` is the row's place in the index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub row_id: usize,
    pub position: usize,
    pub distance: f64,
}

fn rank(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance.total_cmp(&b.distance).then(a.row_id.cmp(&b.row_id)).then(a.position.cmp(&b.position))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingIndex {
    vectors: Array2<f64>,
    /// Unit-normalized copy for cosine retrieval; zero rows stay zero.
    unit: Option<Array2<f64>>,
    zero_rows: Vec<bool>,
    labels: Labels,
    row_ids: Vec<usize>,
    kind: DistanceKind,
}

/// Builds an index over `embeddings` (N × m). Inputs are stored verbatim;
/// cosine mode additionally keeps normalized rows, and rows of zero norm
/// rank after every other row for every query.
pub fn build_index(
    embeddings: Array2<f64>,
    labels: Labels,
    row_ids: Vec<usize>,
    kind: DistanceKind,
) -> Result<EmbeddingIndex> {
    let n = embeddings.nrows();
    if n == 0 || embeddings.ncols() == 0 {
        return Err(Error::invalid("cannot build an index over no vectors"));
    }
    if labels.len() != n || row_ids.len() != n {
        return Err(Error::shape(format!("{n} vectors, {} labels, {} row ids", labels.len(), row_ids.len())));
    }
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("index vectors must be finite"));
    }
    let vectors = embeddings.as_standard_layout().into_owned();
    let zero_rows: Vec<bool> = vectors.outer_iter().map(|r| r.iter().all(|&v| v == 0.0)).collect();
    let unit = (kind == DistanceKind::Cosine).then(|| {
        let mut u = vectors.clone();
        for mut row in u.outer_iter_mut() {
            let norm = distance::norm(row.as_slice().expect("standard layout"));
            if norm > 0.0 {
                row /= norm;
            }
        }
        u
    });
    Ok(EmbeddingIndex { vectors, unit, zero_rows, labels, row_ids, kind })
}

impl EmbeddingIndex {
    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn kind(&self) -> DistanceKind {
        self.kind
    }

    /// Distance from every indexed row to `query`, in index order.
    pub fn distances(&self, query: ArrayView1<f64>) -> Result<Vec<f64>> {
        if query.len() != self.dim() {
            return Err(Error::shape(format!("query has {} values, index has {}", query.len(), self.dim())));
        }
        let q = query.to_vec();
        Ok(match &self.unit {
            None => self
                .vectors
                .outer_iter()
                .map(|r| distance::squared_euclidean(r.as_slice().expect("standard layout"), &q))
                .collect(),
            Some(unit) => {
                let qn = distance::norm(&q);
                unit.outer_iter()
                    .zip(&self.zero_rows)
                    .map(|(r, &zero)| {
                        if zero {
                            f64::INFINITY
                        } else if qn == 0.0 {
                            1.0
                        } else {
                            1.0 - distance::dot(r.as_slice().expect("standard layout"), &q) / qn
                        }
                    })
                    .collect()
            }
        })
    }

    /// The `k` nearest rows, ascending by distance, ties by ascending row id.
    pub fn top_k(&self, query: ArrayView1<f64>, k: usize) -> Result<Vec<Neighbor>> {
        self.top_k_filtered(query, k, |_| true)
    }

    /// As [`top_k`](Self::top_k), skipping rows whose id is `excluded`.
    pub fn top_k_excluding(&self, query: ArrayView1<f64>, k: usize, excluded: usize) -> Result<Vec<Neighbor>> {
        self.top_k_filtered(query, k, |n| n.row_id != excluded)
    }

    fn top_k_filtered(
        &self,
        query: ArrayView1<f64>,
        k: usize,
        keep: impl Fn(&Neighbor) -> bool,
    ) -> Result<Vec<Neighbor>> {
        let dist = self.distances(query)?;
        let mut all: Vec<Neighbor> = dist
            .into_iter()
            .enumerate()
            .map(|(position, distance)| Neighbor { row_id: self.row_ids[position], position, distance })
            .filter(|n| keep(n))
            .collect();
        if k == 0 || k > all.len() {
            return Err(Error::invalid(format!("k = {k} outside [1, {}]", all.len())));
        }
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, rank);
            all.truncate(k);
        }
        all.sort_unstable_by(rank);
        Ok(all)
    }

    /// Top-k for every row of `queries`, fanned out over the thread pool.
    pub fn top_k_batch(&self, queries: ArrayView2<f64>, k: usize) -> Result<Vec<Vec<Neighbor>>> {
        (0..queries.nrows()).into_par_iter().map(|i| self.top_k(queries.row(i), k)).collect()
    }

    /// Fraction of the `k` retrieved rows whose class equals `query_label`.
    pub fn precision_at_k(&self, query: ArrayView1<f64>, query_label: usize, k: usize) -> Result<f64> {
        let labels = self.labels.as_class().ok_or_else(|| Error::invalid("precision@k needs class labels"))?;
        let hits = self.top_k(query, k)?.iter().filter(|n| labels[n.position] == query_label).count();
        Ok(hits as f64 / k as f64)
    }

    /// Retrieved context for prompt assembly, in `top_k` order. `k` defaults
    /// to [`DEFAULT_CONTEXT_SIZE`] clipped to the index size; an explicit `k`
    /// is not clipped.
    pub fn retrieve_context(&self, query: ArrayView1<f64>, k: Option<usize>) -> Result<Context> {
        let k = k.unwrap_or(DEFAULT_CONTEXT_SIZE.min(self.len()));
        Ok(self.context_from(&self.top_k(query, k)?))
    }

    /// Embeddings and labels of the given neighbors.
    pub fn context_from(&self, neighbors: &[Neighbor]) -> Context {
        let positions: Vec<usize> = neighbors.iter().map(|n| n.position).collect();
        Context {
            row_ids: neighbors.iter().map(|n| n.row_id).collect(),
            embeddings: self.vectors.select(Axis(0), &positions),
            labels: self.labels.select(&positions),
            distances: neighbors.iter().map(|n| n.distance).collect(),
        }
    }

    pub fn label(&self, position: usize) -> Label {
        self.labels.get(position)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = IndexFile {
            format_version: INDEX_FORMAT_VERSION,
            distance_kind: self.kind,
            n: self.len(),
            m: self.dim(),
            vectors: self.vectors.iter().copied().collect(),
            labels: self.labels.clone(),
            row_ids: self.row_ids.clone(),
        };
        fs::write(path, serde_json::to_string(&file)?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: IndexFile = serde_json::from_str(&text)?;
        if file.format_version != INDEX_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "index format version {} (expected {INDEX_FORMAT_VERSION})",
                file.format_version
            )));
        }
        let vectors = Array2::from_shape_vec((file.n, file.m), file.vectors)
            .map_err(|e| Error::Format(format!("index vectors: {e}")))?;
        build_index(vectors, file.labels, file.row_ids, file.distance_kind)
    }
}

/// Retrieved rows as consumed by prompt assembly.
#[derive(Clone, Debug, PartialEq)]
pub struct Context {
    pub row_ids: Vec<usize>,
    pub embeddings: Array2<f64>,
    pub labels: Labels,
    pub distances: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexFile {
    format_version: u32,
    distance_kind: DistanceKind,
    n: usize,
    m: usize,
    vectors: Vec<f64>,
    labels: Labels,
    row_ids: Vec<usize>,
}
