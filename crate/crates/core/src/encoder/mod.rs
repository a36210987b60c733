//! The retrieval encoder: a per-instance attention gate followed by a small
//! embedding network, trained with the soft nearest neighbor loss.
//!
//! For an input `x` of width `d` the gate computes
//! `alpha = sigmoid(W2 relu(W1 x + b1) + b2)`, the input is rescaled to
//! `x * alpha`, and a two-layer ramp network maps it to an embedding of width
//! `m`. Gradients are derived by hand for this fixed architecture.

mod io;
mod sampler;
mod snnl;
mod train;

pub use io::{write_trace, ModelFile, MODEL_FORMAT_VERSION};
pub use sampler::{balanced_batches, uniform_batches};
pub use snnl::{snnl, snnl_grad, SnnlValue};
pub use train::{
    ensemble_embed, quantile_bins, stratified_folds, train_encoder, train_ensemble, EncoderEnsemble, EpochStats,
    Objective, Sampling, TrainConfig, TrainedEncoder, REGRESSION_BINS,
};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{ParamBlock, ParamBlockMut, Parameters};

/// Output bias of the gate at initialization; `sigmoid(2) ≈ 0.88`, so the
/// gate starts close to the identity.
pub const GATE_INIT_BIAS: f64 = 2.0;

/// Widths of the encoder: input `d`, gate hidden `h`, embedding hidden `h_e`,
/// embedding `m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d: usize,
    pub h: usize,
    pub h_e: usize,
    pub m: usize,
}

/// Which parts of the encoder exist. Without the embedding network the
/// output is the gated input itself (`m = d`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub gated: bool,
    pub embedding: bool,
}

/// Affine layer `y = W x + b` with `W` of shape (out, in).
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Dense { weight: Array2::zeros((out, inp)), bias: Array1::zeros(out) }
    }

    /// Weights and biases uniform in `±1/sqrt(in)`.
    pub fn init<R: Rng>(out: usize, inp: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inp as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((out, inp), || rng.random_range(-bound..bound));
        let bias = Array1::from_shape_simple_fn(out, || rng.random_range(-bound..bound));
        Dense { weight, bias }
    }

    /// Row-wise `x W^T + b` for a batch `x` of shape (B, in).
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }
}

/// Attention gate parameters: `W1` (h × d), `b1` (h), `W2` (d × h), `b2` (d).
#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub dims: Dims,
    pub gate: Option<Gate>,
    /// Empty, or the two layers d → h_e → m.
    pub layers: Vec<Dense>,
}

#[inline]
fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn ramp(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Intermediate values of a batch forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub x: Array2<f64>,
    pub gate_pre: Option<Array2<f64>>,
    pub gate_hidden: Option<Array2<f64>>,
    pub alpha: Option<Array2<f64>>,
    pub gated: Array2<f64>,
    /// Pre-activations of every embedding layer.
    pub layer_pre: Vec<Array2<f64>>,
    pub z: Array2<f64>,
}

impl ForwardCache {
    /// Sign pattern of every ramp pre-activation. Finite-difference checks use
    /// it to detect steps that cross a kink.
    pub fn ramp_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        if let Some(g) = &self.gate_pre {
            out.extend(g.iter().map(|&v| v > 0.0));
        }
        let n = self.layer_pre.len();
        for pre in self.layer_pre.iter().take(n.saturating_sub(1)) {
            out.extend(pre.iter().map(|&v| v > 0.0));
        }
        out
    }
}

impl EncoderParams {
    pub fn arch(&self) -> Arch {
        Arch { gated: self.gate.is_some(), embedding: !self.layers.is_empty() }
    }

    /// Random initialization. Draw order: W1, b1, W2 (gate, if present), then
    /// each embedding layer's weight and bias. The gate output bias is fixed
    /// at [`GATE_INIT_BIAS`].
    pub fn init<R: Rng>(dims: Dims, arch: Arch, rng: &mut R) -> Self {
        let dims = if arch.embedding { dims } else { Dims { m: dims.d, ..dims } };
        let gate = arch.gated.then(|| {
            let l1 = Dense::init(dims.h, dims.d, rng);
            let bound = 1.0 / (dims.h as f64).sqrt();
            let w2 = Array2::from_shape_simple_fn((dims.d, dims.h), || rng.random_range(-bound..bound));
            Gate { w1: l1.weight, b1: l1.bias, w2, b2: Array1::from_elem(dims.d, GATE_INIT_BIAS) }
        });
        let layers = if arch.embedding {
            vec![Dense::init(dims.h_e, dims.d, rng), Dense::init(dims.m, dims.h_e, rng)]
        } else {
            Vec::new()
        };
        EncoderParams { dims, gate, layers }
    }

    /// Same shapes, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            dims: self.dims,
            gate: self.gate.as_ref().map(|g| Gate {
                w1: Array2::zeros(g.w1.raw_dim()),
                b1: Array1::zeros(g.b1.raw_dim()),
                w2: Array2::zeros(g.w2.raw_dim()),
                b2: Array1::zeros(g.b2.raw_dim()),
            }),
            layers: self.layers.iter().map(|l| Dense::zeros(l.weight.nrows(), l.weight.ncols())).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Dims { d, h, h_e, m } = self.dims;
        if let Some(g) = &self.gate {
            if g.w1.dim() != (h, d) || g.b1.len() != h || g.w2.dim() != (d, h) || g.b2.len() != d {
                return Err(Error::shape("gate shapes disagree with dims"));
            }
        }
        match self.layers.len() {
            0 => {
                if m != d {
                    return Err(Error::shape("encoder without embedding layers must have m = d"));
                }
            }
            2 => {
                let (a, b) = (&self.layers[0], &self.layers[1]);
                if a.weight.dim() != (h_e, d) || a.bias.len() != h_e || b.weight.dim() != (m, h_e) || b.bias.len() != m
                {
                    return Err(Error::shape("embedding layer shapes disagree with dims"));
                }
            }
            n => return Err(Error::shape(format!("expected 0 or 2 embedding layers, found {n}"))),
        }
        if self.blocks().iter().any(|b| b.values.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("encoder parameters contain non-finite values"));
        }
        Ok(())
    }

    /// Gate weights for one row; all ones when the encoder has no gate.
    pub fn attention_gate(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let batch = x.insert_axis(Axis(0));
        match self.gate_forward(batch) {
            Some((_, _, alpha)) => alpha.row(0).to_owned(),
            None => Array1::ones(x.len()),
        }
    }

    fn gate_forward(&self, x: ArrayView2<f64>) -> Option<(Array2<f64>, Array2<f64>, Array2<f64>)> {
        let g = self.gate.as_ref()?;
        let mut pre = x.dot(&g.w1.t());
        pre += &g.b1;
        let hidden = pre.mapv(ramp);
        let mut s = hidden.dot(&g.w2.t());
        s += &g.b2;
        s.mapv_inplace(sigmoid);
        Some((pre, hidden, s))
    }

    /// Batch forward pass retaining intermediates.
    pub fn forward(&self, x: ArrayView2<f64>) -> ForwardCache {
        let (gate_pre, gate_hidden, alpha, gated) = match self.gate_forward(x) {
            Some((pre, hidden, alpha)) => {
                let gated = &x * &alpha;
                (Some(pre), Some(hidden), Some(alpha), gated)
            }
            None => (None, None, None, x.to_owned()),
        };
        let mut layer_pre = Vec::with_capacity(self.layers.len());
        let mut act = gated.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(act.view());
            act = if l + 1 < self.layers.len() { pre.mapv(ramp) } else { pre.clone() };
            layer_pre.push(pre);
        }
        ForwardCache { x: x.to_owned(), gate_pre, gate_hidden, alpha, gated, layer_pre, z: act }
    }

    /// Embeddings of a batch of rows, shape (B, m).
    pub fn embed_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward(x).z
    }

    /// Embedding of one row.
    pub fn embed(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.embed_batch(x.insert_axis(Axis(0))).row(0).to_owned()
    }

    /// Parameter gradients given `dL/dz` for the cached batch.
    pub fn backward(&self, cache: &ForwardCache, grad_z: ArrayView2<f64>) -> EncoderParams {
        let mut grads = self.zeros_like();
        let n = self.layers.len();
        let mut d_out = grad_z.to_owned();
        for l in (0..n).rev() {
            let input = if l == 0 { cache.gated.clone() } else { cache.layer_pre[l - 1].mapv(ramp) };
            grads.layers[l].weight = d_out.t().dot(&input);
            grads.layers[l].bias = d_out.sum_axis(Axis(0));
            let mut d_in = d_out.dot(&self.layers[l].weight);
            if l > 0 {
                ndarray::Zip::from(&mut d_in).and(&cache.layer_pre[l - 1]).for_each(|g, &p| {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            d_out = d_in;
        }
        // d_out is now dL/d(gated input).
        if let (Some(g), Some(gg)) = (&self.gate, grads.gate.as_mut()) {
            let alpha = cache.alpha.as_ref().expect("gate cache");
            let hidden = cache.gate_hidden.as_ref().expect("gate cache");
            let pre = cache.gate_pre.as_ref().expect("gate cache");
            let mut d_s = &d_out * &cache.x;
            ndarray::Zip::from(&mut d_s).and(alpha).for_each(|v, &a| *v *= a * (1.0 - a));
            gg.w2 = d_s.t().dot(hidden);
            gg.b2 = d_s.sum_axis(Axis(0));
            let mut d_h = d_s.dot(&g.w2);
            ndarray::Zip::from(&mut d_h).and(pre).for_each(|v, &p| {
                if p <= 0.0 {
                    *v = 0.0;
                }
            });
            gg.w1 = d_h.t().dot(&cache.x);
            gg.b1 = d_h.sum_axis(Axis(0));
        }
        grads
    }

    /// Mean gate weight per feature over the rows of `x`.
    pub fn mean_attention(&self, x: ArrayView2<f64>) -> Array1<f64> {
        match self.gate_forward(x) {
            Some((_, _, alpha)) => alpha.mean_axis(Axis(0)).unwrap_or_else(|| Array1::ones(x.ncols())),
            None => Array1::ones(x.ncols()),
        }
    }

    /// All parameters in block order, row-major.
    pub fn flatten(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.values.iter().copied()).collect()
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn unflatten(dims: Dims, arch: Arch, values: &[f64]) -> Result<Self> {
        let mut p = EncoderParams {
            dims,
            gate: arch.gated.then(|| Gate {
                w1: Array2::zeros((dims.h, dims.d)),
                b1: Array1::zeros(dims.h),
                w2: Array2::zeros((dims.d, dims.h)),
                b2: Array1::zeros(dims.d),
            }),
            layers: if arch.embedding {
                vec![Dense::zeros(dims.h_e, dims.d), Dense::zeros(dims.m, dims.h_e)]
            } else {
                Vec::new()
            },
        };
        if p.n_params() != values.len() {
            return Err(Error::shape(format!("expected {} encoder parameters, found {}", p.n_params(), values.len())));
        }
        let mut offset = 0;
        for b in p.blocks_mut() {
            let n = b.values.len();
            b.values.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        p.validate()?;
        Ok(p)
    }
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

impl Parameters for EncoderParams {
    fn blocks(&self) -> Vec<ParamBlock<'_>> {
        let mut out = Vec::new();
        if let Some(g) = &self.gate {
            out.push(ParamBlock { name: "gate.w1".into(), values: slice(&g.w1), decay: true });
            out.push(ParamBlock { name: "gate.b1".into(), values: g.b1.as_slice().unwrap(), decay: false });
            out.push(ParamBlock { name: "gate.w2".into(), values: slice(&g.w2), decay: true });
            out.push(ParamBlock { name: "gate.b2".into(), values: g.b2.as_slice().unwrap(), decay: false });
        }
        for (i, l) in self.layers.iter().enumerate() {
            out.push(ParamBlock { name: format!("embed.{i}.weight"), values: slice(&l.weight), decay: true });
            out.push(ParamBlock { name: format!("embed.{i}.bias"), values: l.bias.as_slice().unwrap(), decay: false });
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>> {
        let mut out = Vec::new();
        if let Some(g) = &mut self.gate {
            out.push(ParamBlockMut { name: "gate.w1".into(), values: slice_mut(&mut g.w1), decay: true });
            out.push(ParamBlockMut { name: "gate.b1".into(), values: g.b1.as_slice_mut().unwrap(), decay: false });
            out.push(ParamBlockMut { name: "gate.w2".into(), values: slice_mut(&mut g.w2), decay: true });
            out.push(ParamBlockMut { name: "gate.b2".into(), values: g.b2.as_slice_mut().unwrap(), decay: false });
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push(ParamBlockMut {
                name: format!("embed.{i}.weight"),
                values: slice_mut(&mut l.weight),
                decay: true,
            });
            out.push(ParamBlockMut {
                name: format!("embed.{i}.bias"),
                values: l.bias.as_slice_mut().unwrap(),
                decay: false,
            });
        }
        out
    }
}

/// Maps feature rows to retrieval vectors.
pub trait Embedder: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn embed_batch(&self, x: ArrayView2<f64>) -> Array2<f64>;

    fn embed_row(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.embed_batch(x.insert_axis(Axis(0))).row(0).to_owned()
    }
}

impl Embedder for EncoderParams {
    fn input_dim(&self) -> usize {
        self.dims.d
    }

    fn output_dim(&self) -> usize {
        self.dims.m
    }

    fn embed_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        EncoderParams::embed_batch(self, x)
    }
}

/// Identity embedding: retrieval in the raw (preprocessed) feature space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawFeatures {
    pub dim: usize,
}

impl Embedder for RawFeatures {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.to_owned()
    }
}
