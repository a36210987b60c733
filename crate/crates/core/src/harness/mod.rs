//! Stress protocols (data scale, feature heterogeneity, outcome rarity) and
//! the cumulative ablation ladder, run over a fixed held-out test set.

mod report;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use report::{emit_report, emit_timings, AggregateRow, JobFailure, Provenance, ReportRow, StressReport};

use crate::backbone::{predict_batch, train_adapter, AdapterConfig, AdapterParams, BackboneOutput, KnnVote};
use crate::dataset::{
    apply_heterogeneity, apply_rarity, load_csv, make_synthetic, preprocess, rank_feature_importance, rarity_counts,
    stratified_split, Manifest, SyntheticSpec, TabularDataset,
};
use crate::distance::DistanceKind;
use crate::encoder::{train_ensemble, Embedder, EncoderEnsemble, Objective, RawFeatures, Sampling, TrainConfig};
use crate::error::{Error, Result};
use crate::index::{build_index, DEFAULT_CONTEXT_SIZE};
use crate::metrics;

/// Neighbors inspected by the `precision_at_10` metric.
pub const PRECISION_K: usize = 10;

/// Metric names, in report order.
pub const METRICS: [&str; 4] = ["auroc", "auprc", "f1", "precision_at_10"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    DataScale,
    Heterogeneity,
    Rarity,
    Ablation,
    #[default]
    Single,
}

impl Protocol {
    pub const ALL: [Protocol; 5] =
        [Protocol::DataScale, Protocol::Heterogeneity, Protocol::Rarity, Protocol::Ablation, Protocol::Single];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::DataScale => "data_scale",
            Protocol::Heterogeneity => "heterogeneity",
            Protocol::Rarity => "rarity",
            Protocol::Ablation => "ablation",
            Protocol::Single => "single",
        }
    }

    /// Sweep used when the configuration leaves it empty.
    pub fn default_sweep(self) -> Vec<f64> {
        match self {
            Protocol::DataScale => vec![1000.0, 2000.0, 5000.0, 10000.0, 20000.0, 50000.0],
            Protocol::Heterogeneity => vec![10.0, 25.0, 50.0, 100.0, 200.0, 500.0],
            Protocol::Rarity => vec![5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0],
            Protocol::Ablation | Protocol::Single => vec![0.0],
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('-', "_");
        Protocol::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<_> = Protocol::ALL.iter().map(|p| p.name()).collect();
            Error::invalid(format!("unknown protocol `{s}`; expected one of {}", names.join(", ")))
        })
    }
}

/// Stages of the retrieval pipeline that can be switched on independently.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct StageFlags {
    pub attention: bool,
    pub snnl: bool,
    pub balanced: bool,
    pub ensemble: bool,
    pub adapter: bool,
}

impl StageFlags {
    fn learns_encoder(self) -> bool {
        self.attention || self.snnl
    }

    fn without_adapter(self) -> StageFlags {
        StageFlags { adapter: false, ..self }
    }
}

/// Cumulative ablation stages; each enables every stage before it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "baseline_raw_knn")]
    Baseline,
    #[serde(rename = "+attention")]
    Attention,
    #[serde(rename = "+snnl")]
    Snnl,
    #[serde(rename = "+balanced")]
    Balanced,
    #[serde(rename = "+ensemble")]
    Ensemble,
    #[serde(rename = "+adapter", alias = "aware")]
    Adapter,
}

impl Variant {
    pub const LADDER: [Variant; 6] =
        [Variant::Baseline, Variant::Attention, Variant::Snnl, Variant::Balanced, Variant::Ensemble, Variant::Adapter];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline_raw_knn",
            Variant::Attention => "+attention",
            Variant::Snnl => "+snnl",
            Variant::Balanced => "+balanced",
            Variant::Ensemble => "+ensemble",
            Variant::Adapter => "+adapter",
        }
    }

    pub fn flags(self) -> StageFlags {
        let level = self as usize;
        StageFlags {
            attention: level >= 1,
            snnl: level >= 2,
            balanced: level >= 3,
            ensemble: level >= 4,
            adapter: level >= 5,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => return Ok(Variant::Baseline),
            "aware" => return Ok(Variant::Adapter),
            _ => {}
        }
        Variant::LADDER.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let names: Vec<_> = Variant::LADDER.iter().map(|v| v.name()).collect();
            Error::invalid(format!("unknown variant `{s}`; expected one of {}, baseline, aware", names.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv { path: PathBuf, manifest: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec {
            n_rows: 15000,
            n_informative: 5,
            n_noise: 95,
            n_classes: 2,
            class_sep: 3.0,
            imbalance_ratio: 10.0,
            seed: 0,
        })
    }
}

impl DataSource {
    pub fn load(&self) -> Result<TabularDataset> {
        match self {
            DataSource::Synthetic(spec) => make_synthetic(spec),
            DataSource::Csv { path, manifest } => load_csv(path, &Manifest::read(manifest)?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub source: DataSource,
    /// Training sizes, feature counts or imbalance ratios; empty selects the
    /// protocol default.
    pub sweep: Vec<f64>,
    /// Empty selects the full ladder for ablations and
    /// `[baseline_raw_knn, +adapter]` otherwise.
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    /// Context size; clipped to the training size of each run.
    pub k: usize,
    pub test_fraction: f64,
    pub split_seed: u64,
    /// Training rows per run; the rarity protocol defaults to 10000, the
    /// others to the whole pool. Ignored by the data-scale protocol.
    pub train_size: Option<usize>,
    pub retrieval_distance: DistanceKind,
    pub encoder: TrainConfig,
    pub ensemble_k: usize,
    pub adapter: AdapterConfig,
    #[serde(skip)]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            protocol: Protocol::Single,
            source: DataSource::default(),
            sweep: Vec::new(),
            variants: Vec::new(),
            seeds: vec![0, 1, 2],
            k: DEFAULT_CONTEXT_SIZE,
            test_fraction: 0.2,
            split_seed: 0,
            train_size: None,
            retrieval_distance: DistanceKind::SquaredEuclidean,
            encoder: TrainConfig::default(),
            ensemble_k: 5,
            adapter: AdapterConfig::default(),
            output_dir: None,
        }
    }
}

/// Rarity training size when none is configured.
pub const RARITY_TRAIN_SIZE: usize = 10000;

impl ExperimentConfig {
    /// Fills protocol defaults so that equal experiments serialize equally.
    pub fn resolved(&self) -> ExperimentConfig {
        let mut c = self.clone();
        if c.sweep.is_empty() {
            c.sweep = c.protocol.default_sweep();
        }
        if c.variants.is_empty() {
            c.variants = match c.protocol {
                Protocol::Ablation => Variant::LADDER.to_vec(),
                _ => vec![Variant::Baseline, Variant::Adapter],
            };
        }
        if c.protocol == Protocol::Rarity && c.train_size.is_none() {
            c.train_size = Some(RARITY_TRAIN_SIZE);
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::invalid("seeds must be distinct"));
        }
        if self.sweep.iter().any(|v| !v.is_finite()) || self.sweep.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("sweep values must be finite and strictly increasing"));
        }
        let mut variants = self.variants.clone();
        variants.sort_unstable();
        variants.dedup();
        if variants.len() != self.variants.len() {
            return Err(Error::invalid("variants must be distinct"));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be positive"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::invalid("test_fraction must lie in (0, 1)"));
        }
        if self.ensemble_k == 0 {
            return Err(Error::invalid("ensemble_k must be positive"));
        }
        if self.train_size == Some(0) {
            return Err(Error::invalid("train_size must be positive"));
        }
        match self.protocol {
            Protocol::DataScale | Protocol::Heterogeneity => {
                if self.sweep.iter().any(|&v| v < 1.0 || v.fract() != 0.0) {
                    return Err(Error::invalid(format!("{} sweep values must be positive integers", self.protocol)));
                }
            }
            Protocol::Rarity => {
                if self.sweep.iter().any(|&v| v < 1.0) {
                    return Err(Error::invalid("imbalance ratios must be >= 1"));
                }
            }
            Protocol::Ablation | Protocol::Single => {}
        }
        self.encoder.validate()
    }

    /// SHA-256 of the resolved configuration; the output directory is excluded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.resolved()).expect("config serializes");
        hex(&Sha256::digest(json))
    }

    fn encoder_config(&self, flags: StageFlags, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            gated: flags.attention,
            objective: if flags.snnl { Objective::Snnl } else { Objective::CrossEntropy },
            sampling: if flags.balanced { Sampling::Balanced } else { Sampling::Uniform },
            ..self.encoder.clone()
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over sorted row indices.
pub fn hash_rows(rows: &[usize]) -> String {
    let mut h = Sha256::new();
    for &r in rows {
        h.update((r as u64).to_le_bytes());
    }
    hex(&h.finalize())
}

/// Stratified subsample of `size` rows of `pool` (largest-remainder class
/// quotas, at least one row per class present). Returns sorted indices.
pub fn stratified_subsample(labels: &[usize], pool: &[usize], size: usize, seed: u64) -> Result<Vec<usize>> {
    if size > pool.len() {
        return Err(Error::invalid(format!("cannot draw {size} rows from a pool of {}", pool.len())));
    }
    if size == pool.len() {
        let mut rows = pool.to_vec();
        rows.sort_unstable();
        return Ok(rows);
    }
    let n_classes = pool.iter().map(|&i| labels[i] + 1).max().unwrap_or(0);
    let mut by_class = vec![Vec::new(); n_classes];
    for &i in pool {
        by_class[labels[i]].push(i);
    }
    let exact: Vec<f64> = by_class.iter().map(|c| c.len() as f64 * size as f64 / pool.len() as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..n_classes).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut missing = size - quota.iter().sum::<usize>();
    for &c in order.iter().cycle().take(n_classes * 2) {
        if missing == 0 {
            break;
        }
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
            missing -= 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(size);
    for (c, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        rows.extend_from_slice(&members[..quota[c]]);
    }
    rows.sort_unstable();
    Ok(rows)
}

/// Rows of one run: the (preprocessed) dataset, its training rows and the
/// shared test rows.
pub struct RunData {
    pub ds: TabularDataset,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Encoder trained for one set of stage flags, shared between variants of a
/// run that differ only in the adapter.
struct EncoderCache(Vec<(StageFlags, EncoderEnsemble)>);

/// Fits the pipeline selected by `flags` on the training rows and scores it on
/// the test rows. Returns one value per entry of [`METRICS`].
pub fn evaluate(run: &RunData, flags: StageFlags, config: &ExperimentConfig, seed: u64) -> Result<Vec<f64>> {
    evaluate_cached(run, flags, config, seed, &mut EncoderCache(Vec::new()))
}

fn evaluate_cached(
    run: &RunData,
    flags: StageFlags,
    config: &ExperimentConfig,
    seed: u64,
    cache: &mut EncoderCache,
) -> Result<Vec<f64>> {
    let ds = &run.ds;
    let n_classes = ds.task().n_classes().ok_or_else(|| Error::invalid("stress runs need class labels"))?;
    let y = ds.class_labels()?;
    let x_train = ds.features().select(Axis(0), &run.train_idx);
    let x_test = ds.features().select(Axis(0), &run.test_idx);
    let raw = RawFeatures { dim: ds.n_features() };

    let key = flags.without_adapter();
    let ensemble = if flags.learns_encoder() {
        let pos = match cache.0.iter().position(|(k, _)| *k == key) {
            Some(p) => p,
            None => {
                let k = if flags.ensemble { config.ensemble_k } else { 1 };
                let e = train_ensemble(ds, &run.train_idx, &config.encoder_config(flags, seed), k)?;
                cache.0.push((key, e));
                cache.0.len() - 1
            }
        };
        Some(&cache.0[pos].1)
    } else {
        None
    };
    let embedder: &dyn Embedder = match ensemble {
        Some(e) => e,
        None => &raw,
    };

    let z_train = embedder.embed_batch(x_train.view());
    let train_labels = ds.labels().select(&run.train_idx);
    let index = build_index(z_train.clone(), train_labels.clone(), run.train_idx.clone(), config.retrieval_distance)?;
    let vote = KnnVote { n_classes, ..config.adapter.vote };
    let adapter: Option<AdapterParams> = if flags.adapter {
        let cfg = AdapterConfig { seed, vote, ..config.adapter.clone() };
        Some(train_adapter(z_train.view(), &train_labels, &index, &cfg)?.params)
    } else {
        None
    };
    let k = config.k.min(run.train_idx.len());
    let outputs = predict_batch(embedder, adapter.as_ref(), &index, x_test.view(), Some(k), &vote)?;

    let test_y: Vec<usize> = run.test_idx.iter().map(|&i| y[i]).collect();
    let mut class_scores = vec![Vec::with_capacity(outputs.len()); n_classes];
    for o in &outputs {
        let BackboneOutput::Probs(p) = o else {
            return Err(Error::invalid("backbone returned a regression value for a classification task"));
        };
        for (c, s) in class_scores.iter_mut().enumerate() {
            s.push(p[c]);
        }
    }
    let auroc = metrics::one_vs_rest(&class_scores, &test_y, metrics::auroc)?;
    let auprc = metrics::one_vs_rest(&class_scores, &test_y, metrics::auprc)?;
    let f1 = if n_classes == 2 {
        metrics::f1(&class_scores[1], &test_y, 0.5)?
    } else {
        let pred: Vec<usize> = (0..test_y.len())
            .map(|i| {
                (0..n_classes).fold(0, |best, c| if class_scores[c][i] > class_scores[best][i] { c } else { best })
            })
            .collect();
        metrics::f1_macro(&pred, &test_y, n_classes)?
    };

    // Neighbourhood quality of the encoder alone; binary tasks use positive queries.
    let z_test = embedder.embed_batch(x_test.view());
    let queries: Vec<usize> = (0..test_y.len()).filter(|&i| n_classes != 2 || test_y[i] == 1).collect();
    if queries.is_empty() {
        return Err(Error::UndefinedMetric("precision@k has no queries".into()));
    }
    let kp = PRECISION_K.min(run.train_idx.len());
    let p_at_k = queries
        .par_iter()
        .map(|&i| index.precision_at_k(z_test.row(i), test_y[i], kp))
        .collect::<Result<Vec<f64>>>()?;
    let p_at_k = p_at_k.iter().sum::<f64>() / queries.len() as f64;

    Ok(vec![auroc, auprc, f1, p_at_k])
}

/// Dataset split once per experiment.
struct Experiment {
    ds: TabularDataset,
    pool: Vec<usize>,
    test: Vec<usize>,
}

impl Experiment {
    fn load(config: &ExperimentConfig) -> Result<Self> {
        let ds = config.source.load()?;
        if !ds.task().is_classification() {
            return Err(Error::invalid("stress protocols need a classification dataset"));
        }
        let split = stratified_split(&ds, &[1.0 - config.test_fraction, config.test_fraction], config.split_seed)?;
        Ok(Experiment { ds, pool: split.train_idx, test: split.test_idx })
    }

    fn labels(&self) -> &[usize] {
        self.ds.class_labels().expect("classification checked on load")
    }

    fn subsample(&self, size: Option<usize>, seed: u64) -> Result<Vec<usize>> {
        match size {
            Some(s) if s < self.pool.len() => stratified_subsample(self.labels(), &self.pool, s, seed),
            Some(s) if s > self.pool.len() => Err(Error::invalid(format!(
                "train_size {s} exceeds the {} rows available for training",
                self.pool.len()
            ))),
            _ => Ok(self.pool.clone()),
        }
    }

    fn run_on(&self, train_idx: Vec<usize>) -> Result<RunData> {
        Ok(RunData { ds: preprocess(&self.ds, &train_idx)?, train_idx, test_idx: self.test.clone() })
    }
}

/// Seed of the training-row draw for sweep point `point`.
fn draw_seed(seed: u64, point: usize) -> u64 {
    seed ^ ((point as u64 + 1) << 32)
}

/// Runs the protocol named in `config`.
pub fn run(config: &ExperimentConfig) -> Result<StressReport> {
    let config = config.resolved();
    config.validate()?;
    let exp = Experiment::load(&config)?;
    match config.protocol {
        Protocol::DataScale => {
            let max = config.sweep.last().copied().unwrap_or(0.0) as usize;
            if max > exp.pool.len() {
                let feasible: Vec<f64> =
                    config.sweep.iter().copied().filter(|&v| v as usize <= exp.pool.len()).collect();
                return Err(Error::invalid(format!(
                    "training pool has {} rows (test set {}); feasible sweep prefix: {feasible:?}",
                    exp.pool.len(),
                    exp.test.len()
                )));
            }
            execute(&config, &exp, |point, size, seed| {
                exp.run_on(exp.subsample(Some(size as usize), draw_seed(seed, point))?)
            })
        }
        Protocol::Heterogeneity => {
            let pre = preprocess(&exp.ds, &exp.pool)?;
            let pool_ds = pre.select_rows(&exp.pool);
            let fit = stratified_split(&pool_ds, &[0.75, 0.25], config.split_seed)?;
            let map = |rows: &[usize]| rows.iter().map(|&i| exp.pool[i]).collect::<Vec<_>>();
            let importance =
                rank_feature_importance(&pre, &map(&fit.train_idx), &map(&fit.test_idx), config.split_seed)?;
            execute(&config, &exp, |point, n_features, seed| {
                let train_idx = exp.subsample(config.train_size, draw_seed(seed, point))?;
                let ds = apply_heterogeneity(&pre, n_features as usize, &importance.order)?;
                Ok(RunData { ds, train_idx, test_idx: exp.test.clone() })
            })
        }
        Protocol::Rarity => {
            let train_size = config.train_size.unwrap_or(RARITY_TRAIN_SIZE);
            let y = exp.labels();
            let pos = exp.pool.iter().filter(|&&i| y[i] == 1).count();
            let neg = exp.pool.len() - pos;
            for &ir in &config.sweep {
                let (n_pos, n_neg) = rarity_counts(train_size, ir);
                if n_pos > pos {
                    return Err(Error::InsufficientRows { class: 1, required: n_pos, available: pos });
                }
                if n_neg > neg {
                    return Err(Error::InsufficientRows { class: 0, required: n_neg, available: neg });
                }
            }
            execute(&config, &exp, |point, ir, seed| {
                exp.run_on(apply_rarity(&exp.ds, &exp.pool, train_size, ir, draw_seed(seed, point))?)
            })
        }
        Protocol::Ablation | Protocol::Single => execute(&config, &exp, |point, _, seed| {
            exp.run_on(exp.subsample(config.train_size, draw_seed(seed, point))?)
        }),
    }
}

/// Shorthand for [`run`] with the protocol overridden.
pub fn run_data_scale(config: &ExperimentConfig) -> Result<StressReport> {
    run(&ExperimentConfig { protocol: Protocol::DataScale, ..config.clone() })
}

pub fn run_heterogeneity(config: &ExperimentConfig) -> Result<StressReport> {
    run(&ExperimentConfig { protocol: Protocol::Heterogeneity, ..config.clone() })
}

pub fn run_rarity(config: &ExperimentConfig) -> Result<StressReport> {
    run(&ExperimentConfig { protocol: Protocol::Rarity, ..config.clone() })
}

pub fn run_ablation(config: &ExperimentConfig) -> Result<StressReport> {
    run(&ExperimentConfig { protocol: Protocol::Ablation, ..config.clone() })
}

type JobResult = Vec<(Variant, f64, Result<Vec<f64>>)>;

/// Runs every (sweep point, seed) job and assembles rows in
/// (sweep, variant, seed, metric) order regardless of scheduling.
fn execute<F>(config: &ExperimentConfig, exp: &Experiment, prepare: F) -> Result<StressReport>
where
    F: Fn(usize, f64, u64) -> Result<RunData> + Sync,
{
    let test_set_hash = hash_rows(&exp.test);
    let jobs: Vec<(usize, usize)> =
        (0..config.sweep.len()).flat_map(|p| (0..config.seeds.len()).map(move |s| (p, s))).collect();
    let results: Vec<JobResult> = jobs
        .par_iter()
        .map(|&(p, s)| {
            let seed = config.seeds[s];
            let run = match prepare(p, config.sweep[p], seed) {
                Ok(run) => run,
                Err(e) => {
                    let msg = e.to_string();
                    return config.variants.iter().map(|&v| (v, 0.0, Err(Error::invalid(msg.clone())))).collect();
                }
            };
            if hash_rows(&run.test_idx) != test_set_hash {
                let msg = "test rows differ from the experiment's test set";
                return config.variants.iter().map(|&v| (v, 0.0, Err(Error::invalid(msg)))).collect();
            }
            let mut cache = EncoderCache(Vec::new());
            config
                .variants
                .iter()
                .map(|&v| {
                    let start = Instant::now();
                    let r = evaluate_cached(&run, v.flags(), config, seed, &mut cache);
                    (v, start.elapsed().as_secs_f64(), r)
                })
                .collect()
        })
        .collect();

    let protocol = config.protocol.name().to_string();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (p, &sweep_value) in config.sweep.iter().enumerate() {
        for (vi, variant) in config.variants.iter().enumerate() {
            for (s, &seed) in config.seeds.iter().enumerate() {
                let (v, wall_time, result) = &results[p * config.seeds.len() + s][vi];
                debug_assert_eq!(v, variant);
                match result {
                    Ok(values) => {
                        for (metric, &value) in METRICS.iter().zip(values) {
                            rows.push(ReportRow {
                                protocol: protocol.clone(),
                                sweep_value,
                                variant: variant.name().to_string(),
                                seed,
                                metric: metric.to_string(),
                                value,
                                wall_time: *wall_time,
                            });
                        }
                    }
                    Err(e) => failures.push(JobFailure {
                        sweep_value,
                        variant: variant.name().to_string(),
                        seed,
                        error: e.to_string(),
                    }),
                }
            }
        }
    }
    Ok(StressReport {
        rows,
        failures,
        provenance: Provenance {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            protocol,
            seeds: config.seeds.clone(),
            test_set_hash,
            config: config.clone(),
        },
    })
}
