use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sampler::{balanced_batches, uniform_batches};
use super::snnl::snnl_grad;
use super::{Arch, Dense, Dims, Embedder, EncoderParams};
use crate::dataset::{Labels, TabularDataset};
use crate::distance::DistanceKind;
use crate::error::{Error, Result};
use crate::optim::{AdamW, AdamWConfig, ParamBlock, ParamBlockMut, Parameters};

/// Number of quantile bins regression targets are cut into for training.
pub const REGRESSION_BINS: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    #[default]
    Balanced,
    Uniform,
}

/// Training signal for the encoder.
///
/// `CrossEntropy` trains a gate-only encoder through a linear softmax probe
/// that is discarded afterwards; retrieval then runs on the gated input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    #[default]
    Snnl,
    CrossEntropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub temperature: f64,
    pub distance_kind: DistanceKind,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Gate hidden width.
    pub hidden: usize,
    /// Embedding network hidden width.
    pub embed_hidden: usize,
    /// Embedding width.
    pub embed_dim: usize,
    pub gated: bool,
    pub sampling: Sampling,
    pub objective: Objective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 1e-3,
            batch_size: 128,
            temperature: 1.0,
            distance_kind: DistanceKind::SquaredEuclidean,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            hidden: 64,
            embed_hidden: 64,
            embed_dim: 32,
            gated: true,
            sampling: Sampling::Balanced,
            objective: Objective::Snnl,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be positive and finite"));
        }
        if self.batch_size < 4 {
            return Err(Error::invalid("batch size must be at least 4"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::invalid("learning rate must be positive and weight decay non-negative"));
        }
        if self.hidden == 0 || self.embed_hidden == 0 || self.embed_dim == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn arch(&self) -> Arch {
        Arch { gated: self.gated, embedding: self.objective == Objective::Snnl }
    }

    pub fn dims(&self, d: usize) -> Dims {
        Dims { d, h: self.hidden, h_e: self.embed_hidden, m: self.embed_dim }
    }
}

/// One line of the loss trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean batch loss over batches with at least one usable anchor.
    pub mean_loss: f64,
    pub skipped_anchor_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedEncoder {
    pub params: EncoderParams,
    pub trace: Vec<EpochStats>,
}

/// Quantile bin (0..REGRESSION_BINS) of every target. Edges are the
/// `q/REGRESSION_BINS` order statistics of `targets`; a target equal to an
/// edge falls in the upper bin.
pub fn quantile_bins(targets: &[f64]) -> Vec<usize> {
    let mut sorted = targets.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let edges: Vec<f64> =
        (1..REGRESSION_BINS).map(|q| sorted[(q * n / REGRESSION_BINS).min(n.saturating_sub(1))]).collect();
    targets.iter().map(|y| edges.partition_point(|e| e <= y)).collect()
}

/// Labels used for training: class indices, or quantile bins for regression.
fn training_labels(labels: &Labels) -> Vec<usize> {
    match labels {
        Labels::Class(v) => v.clone(),
        Labels::Real(v) => quantile_bins(v),
    }
}

impl Parameters for Dense {
    fn blocks(&self) -> Vec<ParamBlock<'_>> {
        vec![
            ParamBlock {
                name: "probe.weight".into(),
                values: self.weight.as_slice().expect("standard layout"),
                decay: true,
            },
            ParamBlock { name: "probe.bias".into(), values: self.bias.as_slice().expect("contiguous"), decay: false },
        ]
    }

    fn blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>> {
        vec![
            ParamBlockMut {
                name: "probe.weight".into(),
                values: self.weight.as_slice_mut().expect("standard layout"),
                decay: true,
            },
            ParamBlockMut {
                name: "probe.bias".into(),
                values: self.bias.as_slice_mut().expect("contiguous"),
                decay: false,
            },
        ]
    }
}

/// Softmax cross-entropy of `logits` against `y`, with its gradient.
fn cross_entropy(logits: &Array2<f64>, y: &[usize]) -> (f64, Array2<f64>) {
    let b = logits.nrows() as f64;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (mut row, &label) in grad.outer_iter_mut().zip(y) {
        let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
        loss -= row[label].ln();
        row[label] -= 1.0;
    }
    grad /= b;
    (loss / b, grad)
}

/// Trains one encoder on `train_idx` of a preprocessed dataset.
///
/// A single generator seeded with `config.seed` drives, in order, parameter
/// initialization (gate, embedding layers, then the probe for the
/// cross-entropy objective) and the batch draws of every epoch.
pub fn train_encoder(ds: &TabularDataset, train_idx: &[usize], config: &TrainConfig) -> Result<TrainedEncoder> {
    config.validate()?;
    crate::dataset::check_rows(ds.n_rows(), train_idx, "training")?;
    let x = ds.features().select(Axis(0), train_idx);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("features contain missing or non-finite values; preprocess first"));
    }
    let y = training_labels(&ds.labels().select(train_idx));
    train_on(x.view(), &y, config)
}

fn train_on(x: ArrayView2<f64>, y: &[usize], config: &TrainConfig) -> Result<TrainedEncoder> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = EncoderParams::init(config.dims(x.ncols()), config.arch(), &mut rng);
    let n_classes = y.iter().max().map_or(1, |&c| c + 1);
    let mut probe = (config.objective == Objective::CrossEntropy).then(|| Dense::init(n_classes, x.ncols(), &mut rng));
    let mut opt = AdamW::new(config.optimizer());
    let mut probe_opt = AdamW::new(config.optimizer());
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let batches = match config.sampling {
            Sampling::Balanced => balanced_batches(y, config.batch_size, &mut rng)?,
            Sampling::Uniform => uniform_batches(y.len(), config.batch_size, &mut rng)?,
        };
        let (mut loss_sum, mut counted, mut skipped, mut anchors) = (0.0, 0usize, 0usize, 0usize);
        for batch in &batches {
            let xb = x.select(Axis(0), batch);
            let yb: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            let cache = params.forward(xb.view());
            let (loss, grad_z, degenerate) = match probe.as_mut() {
                None => {
                    let (v, g) = snnl_grad(cache.z.view(), &yb, config.temperature, config.distance_kind);
                    skipped += v.skipped;
                    (v.loss, g, v.degenerate)
                }
                Some(head) => {
                    let logits = head.forward(cache.z.view());
                    let (loss, g_logits) = cross_entropy(&logits, &yb);
                    let head_grad = Dense { weight: g_logits.t().dot(&cache.z), bias: g_logits.sum_axis(Axis(0)) };
                    let g_z = g_logits.dot(&head.weight);
                    probe_opt.step(head, &head_grad)?;
                    (loss, g_z, false)
                }
            };
            anchors += batch.len();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(format!("epoch {epoch}")));
            }
            if !degenerate {
                loss_sum += loss;
                counted += 1;
                let grads = params.backward(&cache, grad_z.view());
                opt.step(&mut params, &grads)?;
            }
        }
        trace.push(EpochStats {
            epoch,
            mean_loss: if counted == 0 { 0.0 } else { loss_sum / counted as f64 },
            skipped_anchor_fraction: skipped as f64 / anchors.max(1) as f64,
        });
    }
    Ok(TrainedEncoder { params, trace })
}

/// Fold index (0..k) for every position of `labels`.
///
/// Rows of each class are shuffled and dealt round-robin; the deal position
/// carries over from one class to the next so fold sizes differ by at most
/// one. Classes are visited in ascending order.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::invalid("number of folds must be at least 1"));
    }
    let mut folds = vec![0; labels.len()];
    if k == 1 {
        return Ok(folds);
    }
    let n_classes = labels.iter().max().map_or(0, |&c| c + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut next = 0;
    for (class, mut rows) in by_class.into_iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        if rows.len() < k {
            return Err(Error::ClassTooSmall { class, count: rows.len(), partitions: k });
        }
        rows.shuffle(&mut rng);
        for i in rows {
            folds[i] = next % k;
            next += 1;
        }
    }
    Ok(folds)
}

/// K encoders, member `k` trained on every fold but `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderEnsemble {
    pub members: Vec<EncoderParams>,
    /// Fold of each training position (empty when loaded without it).
    pub folds: Vec<usize>,
    pub traces: Vec<Vec<EpochStats>>,
}

impl EncoderEnsemble {
    pub fn single(params: EncoderParams) -> Self {
        EncoderEnsemble { members: vec![params], folds: Vec::new(), traces: Vec::new() }
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.members.first().ok_or_else(|| Error::invalid("ensemble has no members"))?;
        for m in &self.members {
            if m.dims != first.dims || m.arch() != first.arch() {
                return Err(Error::shape("ensemble members disagree on dims"));
            }
            m.validate()?;
        }
        Ok(())
    }

    /// Per-feature mean gate weight, averaged over members.
    pub fn mean_attention(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let mut acc = Array1::zeros(x.ncols());
        for m in &self.members {
            acc += &m.mean_attention(x);
        }
        acc / self.members.len() as f64
    }
}

/// Trains a `k`-member ensemble. Member `i` uses seed `config.seed ^ i`;
/// members train in parallel and the result does not depend on scheduling.
pub fn train_ensemble(
    ds: &TabularDataset,
    train_idx: &[usize],
    config: &TrainConfig,
    k: usize,
) -> Result<EncoderEnsemble> {
    config.validate()?;
    crate::dataset::check_rows(ds.n_rows(), train_idx, "training")?;
    let y = training_labels(&ds.labels().select(train_idx));
    let folds = stratified_folds(&y, k, config.seed)?;
    let results: Vec<Result<TrainedEncoder>> = (0..k)
        .into_par_iter()
        .map(|member| {
            let rows: Vec<usize> = if k == 1 {
                train_idx.to_vec()
            } else {
                train_idx.iter().zip(&folds).filter(|&(_, &f)| f != member).map(|(&r, _)| r).collect()
            };
            let cfg = TrainConfig { seed: config.seed ^ member as u64, ..config.clone() };
            train_encoder(ds, &rows, &cfg)
        })
        .collect();
    let mut members = Vec::with_capacity(k);
    let mut traces = Vec::with_capacity(k);
    for r in results {
        let t = r?;
        members.push(t.params);
        traces.push(t.trace);
    }
    Ok(EncoderEnsemble { members, folds, traces })
}

/// Mean of the member embeddings of every row of `x`, accumulated as a
/// running mean so that identical members reproduce the member exactly.
pub fn ensemble_embed(ensemble: &EncoderEnsemble, x: ArrayView2<f64>) -> Array2<f64> {
    let mut members = ensemble.members.iter();
    let mut mean = members.next().expect("non-empty ensemble").embed_batch(x);
    for (i, m) in members.enumerate() {
        let z = m.embed_batch(x);
        let count = (i + 2) as f64;
        ndarray::Zip::from(&mut mean).and(&z).for_each(|a, &b| *a += (b - *a) / count);
    }
    mean
}

impl Embedder for EncoderEnsemble {
    fn input_dim(&self) -> usize {
        self.members[0].dims.d
    }

    fn output_dim(&self) -> usize {
        self.members[0].dims.m
    }

    fn embed_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        ensemble_embed(self, x)
    }
}
