//! Task-aligned retrieval embeddings for retrieval-augmented tabular
//! in-context learning.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`dataset`]: CSV loading, train-split preprocessing, stratified splits,
//!   the synthetic generator and the stress-protocol transforms.
//! * [`encoder`]: the attention-gated embedding network, the soft nearest
//!   neighbor loss, balanced sampling, AdamW and K-fold ensembles.
//! * [`index`]: exact top-k retrieval over frozen embeddings.
//! * [`backbone`]: prompts, the kNN-vote in-context predictor, the affine
//!   adapter and the end-to-end prediction pipeline.
//! * [`metrics`]: AUROC, AUPRC, F1, MAE, RMSE.
//! * [`harness`]: data-scale, heterogeneity, rarity and ablation protocols.

pub mod backbone;
pub mod dataset;
pub mod distance;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod index;
pub mod metrics;
pub mod optim;

pub use distance::DistanceKind;
pub use error::{Error, Result};
