//! In-context predictors over retrieved prompts.
//!
//! A [`Backbone`] maps a [`Prompt`] (labeled context rows plus one query) to
//! class probabilities or a regression value without any weight update. The
//! built-in [`KnnVote`] is a distance-weighted vote that is differentiable in
//! the prompt representation, which is what the [`AdapterParams`] training
//! relies on. [`SubprocessBackbone`] delegates to an external program.

mod adapter;
mod pipeline;
mod subprocess;

pub use adapter::{
    bootstrap_prompt, train_adapter, AdapterConfig, AdapterFile, AdapterParams, TrainedAdapter, BOOTSTRAP_THRESHOLD,
};
pub use pipeline::{predict_batch, predict_with_pipeline};
pub use subprocess::SubprocessBackbone;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, Labels};
use crate::distance::{self, DistanceKind};
use crate::error::{Error, Result};

/// Default additive smoothing of the vote.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Retrieved context plus one query, in a shared representation.
#[derive(Clone, Debug, PartialEq)]
pub struct Prompt {
    /// B × m.
    pub context: Array2<f64>,
    pub context_labels: Labels,
    pub query: Array1<f64>,
    /// Known only for training prompts.
    pub query_label: Option<Label>,
    /// Source row ids of the context, when known.
    pub context_row_ids: Vec<usize>,
    pub query_row_id: Option<usize>,
}

impl Prompt {
    pub fn new(context: Array2<f64>, context_labels: Labels, query: Array1<f64>) -> Result<Self> {
        let p = Prompt {
            context,
            context_labels,
            query,
            query_label: None,
            context_row_ids: Vec::new(),
            query_row_id: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.context.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.context.nrows() == 0 {
            return Err(Error::Backbone("empty context".into()));
        }
        if self.context_labels.len() != self.context.nrows() {
            return Err(Error::shape("context rows and labels differ in number"));
        }
        if self.query.len() != self.context.ncols() {
            return Err(Error::shape("query and context widths differ"));
        }
        if let Some(q) = self.query_row_id {
            if self.context_row_ids.contains(&q) {
                return Err(Error::invalid(format!("query row {q} appears in its own context")));
            }
        }
        Ok(())
    }

    /// Distance from the query to every context row.
    pub fn distances(&self, kind: DistanceKind) -> Vec<f64> {
        let q = self.query.to_vec();
        self.context.outer_iter().map(|r| distance::distance(kind, &r.to_vec(), &q)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneOutput {
    /// Class probabilities, summing to one.
    Probs(Vec<f64>),
    Value(f64),
}

impl BackboneOutput {
    pub fn probs(&self) -> Option<&[f64]> {
        match self {
            BackboneOutput::Probs(p) => Some(p),
            BackboneOutput::Value(_) => None,
        }
    }
}

/// An in-context predictor. Implementations must be pure functions of the
/// prompt and their own configuration.
pub trait Backbone: Send + Sync {
    fn name(&self) -> &str;
    fn predict(&self, prompt: &Prompt) -> Result<BackboneOutput>;
}

/// Vote temperature: the mean query-context distance of each prompt, or a
/// fixed value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tau {
    #[default]
    Auto,
    Fixed(f64),
}

impl Tau {
    pub fn resolve(self, distances: &[f64]) -> f64 {
        match self {
            Tau::Fixed(t) => t,
            Tau::Auto => {
                let mean = distances.iter().sum::<f64>() / distances.len() as f64;
                if mean > 0.0 && mean.is_finite() {
                    mean
                } else {
                    1.0
                }
            }
        }
    }
}

/// Distance-weighted vote: `w_j = exp(-(d_j - d_min) / tau)` and
/// `p_c = (sum_{y_j = c} w_j + eps) / (sum_j w_j + C eps)`. Regression
/// prompts return the weighted mean label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnVote {
    pub tau: Tau,
    pub epsilon: f64,
    /// Number of classes `C`; ignored for regression prompts.
    pub n_classes: usize,
    pub distance_kind: DistanceKind,
}

impl Default for KnnVote {
    fn default() -> Self {
        KnnVote {
            tau: Tau::Auto,
            epsilon: DEFAULT_EPSILON,
            n_classes: 2,
            distance_kind: DistanceKind::SquaredEuclidean,
        }
    }
}

/// Vote weights of a prompt with the quantities the gradient needs.
struct Votes {
    weights: Vec<f64>,
    distances: Vec<f64>,
    tau: f64,
    argmin: usize,
}

impl KnnVote {
    pub fn new(n_classes: usize) -> Self {
        KnnVote { n_classes, ..Default::default() }
    }

    fn check(&self) -> Result<()> {
        if let Tau::Fixed(t) = self.tau {
            if !(t > 0.0) {
                return Err(Error::invalid("vote temperature must be positive"));
            }
        }
        if self.epsilon < 0.0 {
            return Err(Error::invalid("vote smoothing must be non-negative"));
        }
        Ok(())
    }

    fn votes(&self, distances: Vec<f64>) -> Votes {
        let tau = self.tau.resolve(&distances);
        let (argmin, d_min) =
            distances.iter().copied().enumerate().min_by(|a, b| a.1.total_cmp(&b.1)).expect("non-empty context");
        let weights = distances.iter().map(|d| (-(d - d_min) / tau).exp()).collect();
        Votes { weights, distances, tau, argmin }
    }

    fn class_sums(&self, weights: &[f64], labels: &[usize]) -> Result<Vec<f64>> {
        let mut sums = vec![0.0; self.n_classes];
        for (&w, &y) in weights.iter().zip(labels) {
            *sums
                .get_mut(y)
                .ok_or_else(|| Error::invalid(format!("context label {y} outside [0, {})", self.n_classes)))? += w;
        }
        Ok(sums)
    }

    fn probs_from(&self, sums: &[f64]) -> Vec<f64> {
        let total: f64 = sums.iter().sum();
        let denom = total + self.n_classes as f64 * self.epsilon;
        sums.iter().map(|s| (s + self.epsilon) / denom).collect()
    }

    /// `-ln p_y` for the prompt's query label and its derivative with respect
    /// to every query-context distance.
    pub fn nll_and_distance_grad(&self, prompt: &Prompt) -> Result<(f64, Vec<f64>)> {
        self.check()?;
        prompt.validate()?;
        let labels = prompt.context_labels.as_class().ok_or_else(|| Error::invalid("NLL needs class labels"))?;
        let Some(Label::Class(y)) = prompt.query_label else {
            return Err(Error::invalid("NLL needs a class query label"));
        };
        if y >= self.n_classes {
            return Err(Error::invalid(format!("query label {y} outside [0, {})", self.n_classes)));
        }
        let v = self.votes(prompt.distances(self.distance_kind));
        let sums = self.class_sums(&v.weights, labels)?;
        let total: f64 = sums.iter().sum();
        let c_eps = self.n_classes as f64 * self.epsilon;
        let nll = -((sums[y] + self.epsilon) / (total + c_eps)).ln();
        // g_j = dNLL/dw_j
        let g: Vec<f64> = labels
            .iter()
            .map(|&l| if l == y { -1.0 / (sums[y] + self.epsilon) } else { 0.0 } + 1.0 / (total + c_eps))
            .collect();
        let gw: Vec<f64> = g.iter().zip(&v.weights).map(|(g, w)| g * w).collect();
        let sum_gw: f64 = gw.iter().sum();
        let d_min = v.distances[v.argmin];
        let tau_term = match self.tau {
            Tau::Auto if v.distances.iter().sum::<f64>() > 0.0 => {
                let b = v.distances.len() as f64;
                gw.iter().zip(&v.distances).map(|(gw, d)| gw * (d - d_min)).sum::<f64>() / (b * v.tau * v.tau)
            }
            _ => 0.0,
        };
        let mut grad: Vec<f64> = gw.iter().map(|gw| -gw / v.tau + tau_term).collect();
        grad[v.argmin] += sum_gw / v.tau;
        Ok((nll, grad))
    }
}

impl Backbone for KnnVote {
    fn name(&self) -> &str {
        "knn-vote"
    }

    fn predict(&self, prompt: &Prompt) -> Result<BackboneOutput> {
        self.check()?;
        prompt.validate()?;
        let v = self.votes(prompt.distances(self.distance_kind));
        match &prompt.context_labels {
            Labels::Class(labels) => {
                let sums = self.class_sums(&v.weights, labels)?;
                Ok(BackboneOutput::Probs(self.probs_from(&sums)))
            }
            Labels::Real(y) => {
                let total: f64 = v.weights.iter().sum();
                let value = v.weights.iter().zip(y).map(|(w, y)| w * y).sum::<f64>() / total;
                Ok(BackboneOutput::Value(value))
            }
        }
    }
}
