use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{KnnVote, Prompt};
use crate::dataset::Labels;
use crate::distance::DistanceKind;
use crate::error::{Error, Result};
use crate::index::{EmbeddingIndex, DEFAULT_CONTEXT_SIZE};
use crate::optim::{AdamW, AdamWConfig, ParamBlock, ParamBlockMut, Parameters};

/// Training sets larger than this bootstrap prompts by retrieval; smaller
/// ones by random subsets.
pub const BOOTSTRAP_THRESHOLD: usize = 3000;

pub const ADAPTER_FORMAT_VERSION: u32 = 1;

/// Affine map `v -> A v + bias` applied to the query and every context row.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterParams {
    pub a: Array2<f64>,
    pub bias: Array1<f64>,
}

impl AdapterParams {
    pub fn identity(m: usize) -> Self {
        AdapterParams { a: Array2::eye(m), bias: Array1::zeros(m) }
    }

    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    pub fn apply_vector(&self, v: ArrayView1<f64>) -> Array1<f64> {
        self.a.dot(&v) + &self.bias
    }

    /// Row-wise map of a B × m matrix.
    pub fn apply_rows(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.a.t());
        y += &self.bias;
        y
    }

    pub fn apply(&self, prompt: &Prompt) -> Result<Prompt> {
        if prompt.query.len() != self.dim() {
            return Err(Error::shape(format!("adapter width {} but prompt width {}", self.dim(), prompt.query.len())));
        }
        Ok(Prompt {
            context: self.apply_rows(prompt.context.view()),
            query: self.apply_vector(prompt.query.view()),
            ..prompt.clone()
        })
    }

    /// `-ln p_y` of the adapted prompt under `vote`.
    pub fn prompt_nll(&self, prompt: &Prompt, vote: &KnnVote) -> Result<f64> {
        Ok(vote.nll_and_distance_grad(&self.apply(prompt)?)?.0)
    }

    /// NLL of the adapted prompt and its gradient with respect to `A` and the
    /// bias. Distances are squared Euclidean, so the bias cancels and its
    /// gradient is zero.
    pub fn prompt_nll_grad(&self, prompt: &Prompt, vote: &KnnVote) -> Result<(f64, AdapterParams)> {
        if vote.distance_kind != DistanceKind::SquaredEuclidean {
            return Err(Error::invalid("adapter gradients require squared-Euclidean votes"));
        }
        let adapted = self.apply(prompt)?;
        let (nll, d_grad) = vote.nll_and_distance_grad(&adapted)?;
        // d_k = |r_k|^2 with r_k = A (q - c_k), so dd_k/dA = 2 r_k (q - c_k)^T.
        let mut r = adapted.context.clone();
        r.mapv_inplace(|v| -v);
        r += &adapted.query;
        let mut delta = prompt.context.clone();
        delta.mapv_inplace(|v| -v);
        delta += &prompt.query;
        for (mut row, g) in r.outer_iter_mut().zip(&d_grad) {
            row *= 2.0 * g;
        }
        let grad = AdapterParams { a: r.t().dot(&delta), bias: Array1::zeros(self.dim()) };
        Ok((nll, grad))
    }

    pub fn n_params(&self) -> usize {
        Parameters::n_params(self)
    }
}

impl Parameters for AdapterParams {
    fn blocks(&self) -> Vec<ParamBlock<'_>> {
        vec![
            ParamBlock { name: "adapter.a".into(), values: self.a.as_slice().expect("standard layout"), decay: true },
            ParamBlock { name: "adapter.bias".into(), values: self.bias.as_slice().expect("contiguous"), decay: false },
        ]
    }

    fn blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>> {
        vec![
            ParamBlockMut {
                name: "adapter.a".into(),
                values: self.a.as_slice_mut().expect("standard layout"),
                decay: true,
            },
            ParamBlockMut {
                name: "adapter.bias".into(),
                values: self.bias.as_slice_mut().expect("contiguous"),
                decay: false,
            },
        ]
    }
}

/// On-disk adapter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterFile {
    pub format_version: u32,
    pub m: usize,
    /// Row-major m × m.
    pub a: Vec<f64>,
    pub bias: Vec<f64>,
}

impl AdapterFile {
    pub fn new(adapter: &AdapterParams) -> Self {
        AdapterFile {
            format_version: ADAPTER_FORMAT_VERSION,
            m: adapter.dim(),
            a: adapter.a.iter().copied().collect(),
            bias: adapter.bias.to_vec(),
        }
    }

    pub fn params(&self) -> Result<AdapterParams> {
        if self.format_version != ADAPTER_FORMAT_VERSION {
            return Err(Error::Format(format!("adapter format version {}", self.format_version)));
        }
        let a = Array2::from_shape_vec((self.m, self.m), self.a.clone())
            .map_err(|e| Error::Format(format!("adapter matrix: {e}")))?;
        if self.bias.len() != self.m {
            return Err(Error::Format("adapter bias length differs from m".into()));
        }
        if a.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::Format("adapter contains non-finite values".into()));
        }
        Ok(AdapterParams { a, bias: Array1::from(self.bias.clone()) })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: AdapterFile = serde_json::from_str(&text)?;
        file.params()?;
        Ok(file)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Context size `B` of bootstrapped prompts.
    pub context_size: usize,
    pub bootstrap_threshold: usize,
    pub seed: u64,
    pub vote: KnnVote,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            epochs: 5,
            learning_rate: 1e-4,
            weight_decay: 0.0,
            context_size: DEFAULT_CONTEXT_SIZE,
            bootstrap_threshold: BOOTSTRAP_THRESHOLD,
            seed: 0,
            vote: KnnVote::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedAdapter {
    pub params: AdapterParams,
    /// Mean prompt NLL of each epoch.
    pub trace: Vec<f64>,
}

fn check_inputs(embeddings: ArrayView2<f64>, labels: &Labels, index: &EmbeddingIndex) -> Result<()> {
    let n = embeddings.nrows();
    if labels.len() != n || index.len() != n {
        return Err(Error::shape(format!("{n} embeddings, {} labels, {} indexed rows", labels.len(), index.len())));
    }
    if n < 2 {
        return Err(Error::invalid("bootstrapping prompts needs at least two training rows"));
    }
    Ok(())
}

/// The prompt whose query is training position `anchor`.
///
/// Above `threshold` rows the context is the `b` nearest indexed rows other
/// than the anchor; otherwise it is a uniform subset of `min(b, n - 1)`
/// other rows.
fn prompt_for<R: Rng>(
    anchor: usize,
    embeddings: ArrayView2<f64>,
    labels: &Labels,
    index: &EmbeddingIndex,
    b: usize,
    threshold: usize,
    rng: &mut R,
) -> Result<Prompt> {
    let n = embeddings.nrows();
    let size = b.min(n - 1);
    let query = embeddings.row(anchor).to_owned();
    let anchor_id = index.row_ids()[anchor];
    let positions: Vec<usize> = if n > threshold {
        index.top_k_excluding(query.view(), size, anchor_id)?.iter().map(|nb| nb.position).collect()
    } else {
        rand::seq::index::sample(rng, n - 1, size).into_iter().map(|p| if p < anchor { p } else { p + 1 }).collect()
    };
    Ok(Prompt {
        context: embeddings.select(Axis(0), &positions),
        context_labels: labels.select(&positions),
        query,
        query_label: Some(labels.get(anchor)),
        context_row_ids: positions.iter().map(|&p| index.row_ids()[p]).collect(),
        query_row_id: Some(anchor_id),
    })
}

/// One bootstrapped training prompt: a uniformly drawn anchor becomes the
/// query and its context is drawn as in [`train_adapter`]. `embeddings`,
/// `labels` and `index` describe the same rows in the same order.
pub fn bootstrap_prompt(
    embeddings: ArrayView2<f64>,
    labels: &Labels,
    index: &EmbeddingIndex,
    b: usize,
    seed: u64,
) -> Result<Prompt> {
    check_inputs(embeddings, labels, index)?;
    if b == 0 {
        return Err(Error::invalid("context size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchor = rng.random_range(0..embeddings.nrows());
    prompt_for(anchor, embeddings, labels, index, b, BOOTSTRAP_THRESHOLD, &mut rng)
}

/// Fits the adapter by minimizing the vote NLL of bootstrapped prompts.
///
/// Each epoch visits every training row once as the query, in an order
/// shuffled by the run's generator, and takes one optimizer step per
/// prompt. Encoder, index and backbone stay frozen.
pub fn train_adapter(
    embeddings: ArrayView2<f64>,
    labels: &Labels,
    index: &EmbeddingIndex,
    config: &AdapterConfig,
) -> Result<TrainedAdapter> {
    check_inputs(embeddings, labels, index)?;
    if labels.as_class().is_none() {
        return Err(Error::invalid("adapter training needs class labels"));
    }
    if config.epochs == 0 || config.context_size == 0 {
        return Err(Error::invalid("adapter epochs and context size must be at least 1"));
    }
    let n = embeddings.nrows();
    let mut params = AdapterParams::identity(embeddings.ncols());
    let mut opt = AdamW::new(AdamWConfig {
        learning_rate: config.learning_rate,
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &anchor in &order {
            let prompt = prompt_for(
                anchor,
                embeddings,
                labels,
                index,
                config.context_size,
                config.bootstrap_threshold,
                &mut rng,
            )?;
            let (nll, grad) = params.prompt_nll_grad(&prompt, &config.vote)?;
            if !nll.is_finite() {
                return Err(Error::NonFiniteLoss(format!("adapter epoch {epoch}")));
            }
            total += nll;
            opt.step(&mut params, &grad)?;
        }
        trace.push(total / n as f64);
    }
    Ok(TrainedAdapter { params, trace })
}
