//! `aware`: train retrieval encoders, build indexes, fit adapters, predict and
//! run stress experiments from the command line.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use aware_core::backbone::{
    predict_batch, train_adapter, AdapterConfig, AdapterFile, Backbone, BackboneOutput, KnnVote, Prompt,
    SubprocessBackbone, Tau, BOOTSTRAP_THRESHOLD, DEFAULT_EPSILON,
};
use aware_core::dataset::{
    apply_statistics, filter_features, load_csv, make_synthetic, preprocess, stratified_split, write_csv, Labels,
    Manifest, SyntheticSpec, TabularDataset,
};
use aware_core::encoder::{train_ensemble, write_trace, Embedder, ModelFile, Sampling, TrainConfig};
use aware_core::harness::{emit_report, emit_timings, ExperimentConfig, Protocol, StressReport, Variant};
use aware_core::index::{build_index, EmbeddingIndex, DEFAULT_CONTEXT_SIZE};
use aware_core::{DistanceKind, Error};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_PARTIAL: u8 = 4;
const EXIT_INTERNAL: u8 = 5;

#[derive(Parser)]
#[command(name = "aware", version, about = "Task-aligned retrieval for tabular in-context prediction")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its manifest.
    Synth(SynthArgs),
    /// Impute and standardize a dataset with training-split statistics.
    Preprocess(PreprocessArgs),
    /// Train an encoder ensemble and write the model file.
    TrainEncoder(TrainEncoderArgs),
    /// Embed a dataset with a model and write a retrieval index.
    BuildIndex(BuildIndexArgs),
    /// Fit a prompt adapter on bootstrapped prompts from an index.
    TrainAdapter(TrainAdapterArgs),
    /// Write per-row class probabilities for a query file.
    Predict(PredictArgs),
    /// Run a stress protocol and write a report directory.
    Stress(StressArgs),
    /// Run the cumulative ablation ladder and write a report directory.
    Ablate(StressArgs),
    /// Summarize a model, index, adapter, manifest or report file.
    Inspect(InspectArgs),
    /// Answer prompts read from stdin with a distance-weighted vote.
    #[command(hide = true)]
    ServeBackbone(ServeArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    /// Output manifest (default: OUT with extension .manifest.json).
    #[arg(long)]
    manifest_out: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    rows: usize,
    #[arg(long, default_value_t = 5)]
    informative: usize,
    #[arg(long, default_value_t = 95)]
    noise: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// Distance between class means.
    #[arg(long, default_value_t = 3.0)]
    class_sep: f64,
    /// Majority rows per minority row.
    #[arg(long, default_value_t = 10.0)]
    ir: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV.
    #[arg(long)]
    data: PathBuf,
    /// Manifest naming the label and categorical columns.
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    #[command(flatten)]
    input: DataArgs,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    /// Output split file (row indices per partition).
    #[arg(long)]
    split_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Keep at most this many columns after dropping constant and rare ones.
    #[arg(long)]
    max_features: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainEncoderArgs {
    #[command(flatten)]
    input: DataArgs,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Output loss trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    /// Loss temperature.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    /// Ensemble members (cross-validation folds).
    #[arg(long = "ensemble-k", default_value_t = 5)]
    ensemble_k: usize,
    #[arg(long, default_value_t = 32)]
    embed_dim: usize,
    /// Draw batches uniformly instead of class-balanced.
    #[arg(long)]
    uniform_sampling: bool,
    /// Drop the attention gate.
    #[arg(long)]
    no_gate: bool,
    /// Fraction held out to report Precision@k.
    #[arg(long, default_value_t = 0.2)]
    valid_fraction: f64,
    /// Neighbors for the validation Precision@k.
    #[arg(long, default_value_t = 10)]
    precision_k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct BuildIndexArgs {
    #[command(flatten)]
    input: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Output index file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainAdapterArgs {
    #[arg(long)]
    index: PathBuf,
    /// Output adapter file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    /// Context size of bootstrapped prompts.
    #[arg(long, default_value_t = DEFAULT_CONTEXT_SIZE)]
    context_size: usize,
    /// Above this many rows prompts come from retrieval, else random subsets.
    #[arg(long, default_value_t = BOOTSTRAP_THRESHOLD)]
    bootstrap_threshold: usize,
    #[command(flatten)]
    vote: VoteArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct VoteArgs {
    /// Vote temperature; `auto` uses the mean context distance.
    #[arg(long, default_value = "auto")]
    tau: String,
    /// Additive class smoothing.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
}

impl VoteArgs {
    fn vote(&self, n_classes: usize) -> Result<KnnVote, Error> {
        let tau = match self.tau.as_str() {
            "auto" => Tau::Auto,
            t => Tau::Fixed(t.parse().map_err(|_| Error::InvalidArgument(format!("--tau `{t}` is not a number")))?),
        };
        Ok(KnnVote { tau, epsilon: self.epsilon, n_classes, distance_kind: DistanceKind::SquaredEuclidean })
    }
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    index: PathBuf,
    /// Query CSV (same schema as the training data).
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    adapter: Option<PathBuf>,
    /// Context size.
    #[arg(long, default_value_t = DEFAULT_CONTEXT_SIZE)]
    k: usize,
    #[command(flatten)]
    vote: VoteArgs,
    /// External backbone program speaking line-delimited JSON.
    #[arg(long)]
    backbone_cmd: Option<String>,
    /// Argument passed to the backbone program (repeatable).
    #[arg(long = "backbone-arg", allow_hyphen_values = true)]
    backbone_args: Vec<String>,
    /// Seconds to wait for each backbone answer.
    #[arg(long, default_value_t = 30.0)]
    backbone_timeout: f64,
    /// Output CSV: row_id, p_0 .. p_{C-1}.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct StressArgs {
    /// JSON experiment configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// data_scale, heterogeneity, rarity, ablation or single.
    #[arg(long)]
    protocol: Option<String>,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<f64>,
    /// Imbalance ratios (rarity sweep).
    #[arg(long, value_delimiter = ',')]
    ir: Vec<f64>,
    /// Training sizes (data-scale sweep).
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<f64>,
    /// Feature counts (heterogeneity sweep).
    #[arg(long, value_delimiter = ',')]
    features: Vec<f64>,
    /// Comma-separated variants, e.g. baseline_raw_knn,+snnl,aware.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    /// Comma-separated seeds [default: 0,1,2].
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Single seed; shorthand for --seeds SEED.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Context size [default: 1024].
    #[arg(long)]
    k: Option<usize>,
    /// Training rows per run.
    #[arg(long)]
    train_size: Option<usize>,
    /// Encoder epochs [default: 50].
    #[arg(long)]
    epochs: Option<usize>,
    /// Ensemble members [default: 5].
    #[arg(long = "ensemble-k")]
    ensemble_k: Option<usize>,
    /// Adapter epochs [default: 5].
    #[arg(long)]
    adapter_epochs: Option<usize>,
    /// Use a CSV dataset instead of the synthetic generator.
    #[arg(long, requires = "manifest")]
    data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    manifest: Option<PathBuf>,
    /// Report directory [default: $AWARE_OUTPUT_ROOT or ./aware-runs, then PROTOCOL-HASH].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-run wall times to timings.csv.
    #[arg(long)]
    timings: bool,
    /// Reuse a non-empty report directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct InspectArgs {
    /// Model, index, adapter, manifest or report directory.
    path: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[command(flatten)]
    vote: VoteArgs,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidArgument(_) | Error::Schema(_) | Error::Json(_) => EXIT_USAGE,
            Error::Parse { .. }
            | Error::EmptyDataset
            | Error::Shape(_)
            | Error::ClassTooSmall { .. }
            | Error::InsufficientRows { .. }
            | Error::UndefinedMetric(_)
            | Error::Format(_)
            | Error::Io { .. } => EXIT_DATA,
            Error::NonFiniteGradient(_) | Error::NonFiniteLoss(_) | Error::Backbone(_) => EXIT_INTERNAL,
        };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(EXIT_INTERNAL);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess_cmd(a),
        Command::TrainEncoder(a) => train_encoder(a),
        Command::BuildIndex(a) => build_index_cmd(a),
        Command::TrainAdapter(a) => train_adapter_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Stress(a) => stress(a, None),
        Command::Ablate(a) => stress(a, Some(Protocol::Ablation)),
        Command::Inspect(a) => inspect(a),
        Command::ServeBackbone(a) => serve_backbone(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Refuses to replace an existing file unless `force` is set.
fn check_output(path: &Path, force: bool) -> Outcome {
    if path.exists() && !force {
        return Err(usage(format!("{} exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}

fn check_inputs(paths: &[&Path]) -> Outcome {
    for p in paths {
        if !p.is_file() {
            return Err(usage(format!("{} is not a readable file", p.display())));
        }
    }
    Ok(())
}

fn load(input: &DataArgs) -> Result<(TabularDataset, Manifest), Failure> {
    check_inputs(&[&input.data, &input.manifest])?;
    let manifest = Manifest::read(&input.manifest)?;
    Ok((load_csv(&input.data, &manifest)?, manifest))
}

fn n_classes_of(labels: &Labels) -> Result<usize, Failure> {
    let y = labels.as_class().ok_or_else(|| usage("this command needs a classification dataset"))?;
    Ok(y.iter().copied().max().map_or(2, |m| (m + 1).max(2)))
}

fn write_json(path: &Path, value: &Value) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)? + "\n";
    std::fs::write(path, text).map_err(|e| Failure::from(Error::Io { path: path.to_path_buf(), source: e }))
}

fn synth(a: SynthArgs) -> Outcome {
    let manifest_out = a.manifest_out.clone().unwrap_or_else(|| a.out.with_extension("manifest.json"));
    check_output(&a.out, a.force)?;
    check_output(&manifest_out, a.force)?;
    let spec = SyntheticSpec {
        n_rows: a.rows,
        n_informative: a.informative,
        n_noise: a.noise,
        n_classes: a.classes,
        class_sep: a.class_sep,
        imbalance_ratio: a.ir,
        seed: a.seed,
    };
    let ds = make_synthetic(&spec)?;
    write_csv(&ds, &a.out, "label")?;
    let manifest = Manifest {
        label_column: "label".into(),
        task: if a.classes == 2 {
            aware_core::dataset::TaskKind::Binary
        } else {
            aware_core::dataset::TaskKind::Multiclass
        },
        group_column: None,
        categorical_columns: Vec::new(),
        informative_columns: ds
            .informative()
            .unwrap_or(&[])
            .iter()
            .map(|&c| ds.column_meta()[c].name.clone())
            .collect(),
    };
    manifest.write(&manifest_out)?;
    for w in ds.warnings() {
        eprintln!("warning: {w}");
    }
    println!("wrote {} rows x {} columns to {}", ds.n_rows(), ds.n_features(), a.out.display());
    Ok(())
}

fn preprocess_cmd(a: PreprocessArgs) -> Outcome {
    if !(a.test_fraction > 0.0 && a.test_fraction < 1.0) {
        return Err(usage("--test-fraction must lie in (0, 1)"));
    }
    if a.max_features == Some(0) {
        return Err(usage("--max-features must be at least 1"));
    }
    check_output(&a.out, a.force)?;
    if let Some(p) = &a.split_out {
        check_output(p, a.force)?;
    }
    let (ds, manifest) = load(&a.input)?;
    let split = stratified_split(&ds, &[1.0 - a.test_fraction, a.test_fraction], a.seed)?;
    let ds = match a.max_features {
        Some(m) => filter_features(&ds, &split.train_idx, m)?,
        None => ds,
    };
    let out = preprocess(&ds, &split.train_idx)?;
    for w in out.warnings() {
        eprintln!("warning: {w}");
    }
    write_csv(&out, &a.out, &manifest.label_column)?;
    if let Some(p) = &a.split_out {
        write_json(p, &serde_json::to_value(&split).map_err(Error::from)?)?;
    }
    println!(
        "wrote {} rows x {} columns ({} train, {} test) to {}",
        out.n_rows(),
        out.n_features(),
        split.train_idx.len(),
        split.test_idx.len(),
        a.out.display()
    );
    Ok(())
}

fn train_encoder(a: TrainEncoderArgs) -> Outcome {
    if a.ensemble_k == 0 {
        return Err(usage("--ensemble-k must be at least 1"));
    }
    if !(a.valid_fraction > 0.0 && a.valid_fraction < 1.0) {
        return Err(usage("--valid-fraction must lie in (0, 1)"));
    }
    if a.precision_k == 0 {
        return Err(usage("--precision-k must be at least 1"));
    }
    let config = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        temperature: a.temperature,
        weight_decay: a.weight_decay,
        embed_dim: a.embed_dim,
        gated: !a.no_gate,
        sampling: if a.uniform_sampling { Sampling::Uniform } else { Sampling::Balanced },
        seed: a.seed,
        ..TrainConfig::default()
    };
    config.validate()?;
    check_output(&a.out, a.force)?;
    if let Some(p) = &a.trace {
        check_output(p, a.force)?;
    }
    let (raw, _) = load(&a.input)?;
    let split = stratified_split(&raw, &[1.0 - a.valid_fraction, a.valid_fraction], a.seed)?;
    let ds = preprocess(&raw, &split.train_idx)?;
    for w in ds.warnings() {
        eprintln!("warning: {w}");
    }
    let ensemble = train_ensemble(&ds, &split.train_idx, &config, a.ensemble_k)?;
    ModelFile::new(&ensemble, &config, ds.column_meta().to_vec())?.write(&a.out)?;
    if let Some(p) = &a.trace {
        write_trace(&ensemble.traces, p)?;
    }

    let final_loss: Vec<String> =
        ensemble.traces.iter().map(|t| t.last().map_or("-".into(), |s| format!("{:.6}", s.mean_loss))).collect();
    println!("final loss per member: {}", final_loss.join(" "));
    if let Labels::Class(y) = ds.labels() {
        let x = |rows: &[usize]| ds.features().select(ndarray::Axis(0), rows);
        let index = build_index(
            ensemble.embed_batch(x(&split.train_idx).view()),
            ds.labels().select(&split.train_idx),
            split.train_idx.clone(),
            DistanceKind::SquaredEuclidean,
        )?;
        let k = a.precision_k.min(split.train_idx.len());
        let zv = ensemble.embed_batch(x(&split.test_idx).view());
        let mut total = 0.0;
        for (i, &row) in split.test_idx.iter().enumerate() {
            total += index.precision_at_k(zv.row(i), y[row], k)?;
        }
        println!("validation precision@{k}: {:.4}", total / split.test_idx.len() as f64);
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn read_model(path: &Path) -> Result<ModelFile, Failure> {
    check_inputs(&[path])?;
    Ok(ModelFile::read(path)?)
}

fn build_index_cmd(a: BuildIndexArgs) -> Outcome {
    check_output(&a.out, a.force)?;
    let model = read_model(&a.model)?;
    let (raw, _) = load(&a.input)?;
    let ds = apply_statistics(&raw, &model.columns)?;
    let ensemble = model.ensemble()?;
    let index = build_index(
        ensemble.embed_batch(ds.features().view()),
        ds.labels().clone(),
        (0..ds.n_rows()).collect(),
        DistanceKind::SquaredEuclidean,
    )?;
    index.write(&a.out)?;
    println!("indexed {} rows in {} dimensions to {}", index.len(), index.dim(), a.out.display());
    Ok(())
}

fn read_index(path: &Path) -> Result<EmbeddingIndex, Failure> {
    check_inputs(&[path])?;
    Ok(EmbeddingIndex::read(path)?)
}

fn train_adapter_cmd(a: TrainAdapterArgs) -> Outcome {
    check_output(&a.out, a.force)?;
    let index = read_index(&a.index)?;
    let vote = a.vote.vote(n_classes_of(index.labels())?)?;
    let config = AdapterConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        weight_decay: a.weight_decay,
        context_size: a.context_size,
        bootstrap_threshold: a.bootstrap_threshold,
        seed: a.seed,
        vote,
    };
    let trained = train_adapter(index.vectors().view(), index.labels(), &index, &config)?;
    AdapterFile::new(&trained.params).write(&a.out)?;
    let trace: Vec<String> = trained.trace.iter().map(|v| format!("{v:.6}")).collect();
    println!("prompt NLL per epoch: {}", trace.join(" "));
    println!("wrote {}", a.out.display());
    Ok(())
}

fn predict(a: PredictArgs) -> Outcome {
    if a.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    if !(a.backbone_timeout > 0.0) {
        return Err(usage("--backbone-timeout must be positive"));
    }
    check_output(&a.out, a.force)?;
    let model = read_model(&a.model)?;
    let index = read_index(&a.index)?;
    let adapter = match &a.adapter {
        Some(p) => {
            check_inputs(&[p])?;
            Some(AdapterFile::read(p)?.params()?)
        }
        None => None,
    };
    let n_classes = n_classes_of(index.labels())?;
    let vote = a.vote.vote(n_classes)?;
    let external = match &a.backbone_cmd {
        Some(cmd) => Some(SubprocessBackbone::spawn(
            cmd,
            &a.backbone_args,
            n_classes,
            Duration::from_secs_f64(a.backbone_timeout),
        )?),
        None => None,
    };
    let backbone: &dyn Backbone = match &external {
        Some(b) => b,
        None => &vote,
    };
    let ensemble = model.ensemble()?;
    if ensemble.output_dim() != index.dim() {
        return Err(Error::Shape(format!(
            "model embeds into {} dimensions, index holds {}",
            ensemble.output_dim(),
            index.dim()
        ))
        .into());
    }
    let input = DataArgs { data: a.queries.clone(), manifest: a.manifest.clone() };
    let (raw, _) = load(&input)?;
    let ds = apply_statistics(&raw, &model.columns)?;
    let outputs = predict_batch(&ensemble, adapter.as_ref(), &index, ds.features().view(), Some(a.k), backbone)?;

    let mut w = csv::Writer::from_path(&a.out)
        .map_err(|e| Failure::from(Error::Io { path: a.out.clone(), source: e.into() }))?;
    let io = |e: csv::Error| Failure::from(Error::Io { path: a.out.clone(), source: e.into() });
    let mut header = vec!["row_id".to_string()];
    header.extend((0..n_classes).map(|c| format!("p_{c}")));
    w.write_record(&header).map_err(io)?;
    for (i, o) in outputs.iter().enumerate() {
        let BackboneOutput::Probs(p) = o else {
            return Err(Failure { code: EXIT_INTERNAL, message: "backbone returned a non-probability output".into() });
        };
        let mut rec = vec![i.to_string()];
        rec.extend(p.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Failure::from(Error::Io { path: a.out.clone(), source: e }))?;
    println!("wrote {} predictions to {}", outputs.len(), a.out.display());
    Ok(())
}

fn experiment_config(a: &StressArgs, forced: Option<Protocol>) -> Result<ExperimentConfig, Failure> {
    let mut c = match &a.config {
        Some(p) => {
            check_inputs(&[p])?;
            let text =
                std::fs::read_to_string(p).map_err(|e| Failure::from(Error::Io { path: p.clone(), source: e }))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(p) = &a.protocol {
        c.protocol = p.parse()?;
    }
    if let Some(p) = forced {
        if a.protocol.is_some() && c.protocol != p {
            return Err(usage(format!("ablate always runs the {p} protocol")));
        }
        c.protocol = p;
    }
    let sweeps = [&a.sweep, &a.ir, &a.sizes, &a.features];
    if sweeps.iter().filter(|s| !s.is_empty()).count() > 1 {
        return Err(usage("give at most one of --sweep, --ir, --sizes, --features"));
    }
    let implied = [
        (&a.ir, Protocol::Rarity, "--ir"),
        (&a.sizes, Protocol::DataScale, "--sizes"),
        (&a.features, Protocol::Heterogeneity, "--features"),
    ];
    for (values, protocol, flag) in implied {
        if !values.is_empty() && c.protocol != protocol {
            return Err(usage(format!("{flag} applies to the {protocol} protocol only")));
        }
    }
    if let Some(s) = sweeps.iter().find(|s| !s.is_empty()) {
        c.sweep = s.to_vec();
    }
    if !a.variants.is_empty() {
        c.variants = a.variants.iter().map(|v| v.parse::<Variant>()).collect::<Result<_, _>>()?;
    }
    if let Some(s) = a.seed {
        c.seeds = vec![s];
    }
    if !a.seeds.is_empty() {
        c.seeds = a.seeds.clone();
    }
    if let Some(k) = a.k {
        c.k = k;
    }
    if a.train_size.is_some() {
        c.train_size = a.train_size;
    }
    if let Some(e) = a.epochs {
        c.encoder.epochs = e;
    }
    if let Some(k) = a.ensemble_k {
        c.ensemble_k = k;
    }
    if let Some(e) = a.adapter_epochs {
        c.adapter.epochs = e;
    }
    if let (Some(data), Some(manifest)) = (&a.data, &a.manifest) {
        c.source = aware_core::harness::DataSource::Csv { path: data.clone(), manifest: manifest.clone() };
    }
    let c = c.resolved();
    c.validate()?;
    Ok(c)
}

fn stress(a: StressArgs, forced: Option<Protocol>) -> Outcome {
    let config = experiment_config(&a, forced)?;
    let dir = match &a.out {
        Some(d) => d.clone(),
        None => {
            let root = std::env::var_os("AWARE_OUTPUT_ROOT").map_or_else(|| PathBuf::from("aware-runs"), PathBuf::from);
            root.join(format!("{}-{}", config.protocol, &config.hash()[..12]))
        }
    };
    if dir.is_file() {
        return Err(usage(format!("{} is a file", dir.display())));
    }
    let non_empty = dir.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false);
    if non_empty && !a.force {
        return Err(usage(format!("{} is not empty; pass --force to reuse it", dir.display())));
    }
    let report: StressReport = aware_core::harness::run(&config)?;
    emit_report(&report, &dir)?;
    if a.timings {
        emit_timings(&report, &dir)?;
    }
    print!("{}", std::fs::read_to_string(dir.join("summary.txt")).unwrap_or_default());
    println!("report written to {}", dir.display());
    if !report.failures.is_empty() {
        return Err(Failure {
            code: EXIT_PARTIAL,
            message: format!("{} run(s) failed; see {}", report.failures.len(), dir.join("failures.json").display()),
        });
    }
    Ok(())
}

fn inspect(a: InspectArgs) -> Outcome {
    let path = &a.path;
    if path.is_dir() {
        let prov = path.join("provenance.json");
        check_inputs(&[&prov])?;
        let text =
            std::fs::read_to_string(&prov).map_err(|e| Failure::from(Error::Io { path: prov.clone(), source: e }))?;
        let v: Value = serde_json::from_str(&text).map_err(Error::from)?;
        let summary = json!({
            "kind": "report",
            "protocol": v["protocol"],
            "seeds": v["seeds"],
            "config_hash": v["config_hash"],
            "test_set_hash": v["test_set_hash"],
        });
        println!("{}", serde_json::to_string_pretty(&summary).map_err(Error::from)?);
        if let Ok(s) = std::fs::read_to_string(path.join("summary.txt")) {
            print!("{s}");
        }
        return Ok(());
    }
    check_inputs(&[path])?;
    let summary = if let Ok(m) = ModelFile::read(path) {
        json!({
            "kind": "model",
            "members": m.members.len(),
            "input_dim": m.dims.d,
            "embed_dim": m.dims.m,
            "gated": m.arch.gated,
            "columns": m.columns.len(),
            "train_config": m.train_config,
        })
    } else if let Ok(i) = EmbeddingIndex::read(path) {
        let counts: Vec<usize> = match i.labels() {
            Labels::Class(y) => {
                let mut c = vec![0; y.iter().max().map_or(0, |m| m + 1)];
                y.iter().for_each(|&l| c[l] += 1);
                c
            }
            Labels::Real(_) => Vec::new(),
        };
        json!({ "kind": "index", "rows": i.len(), "dim": i.dim(), "distance": i.kind(), "class_counts": counts })
    } else if let Ok(f) = AdapterFile::read(path) {
        let p = f.params()?;
        let identity = aware_core::backbone::AdapterParams::identity(p.dim());
        let shift: f64 = (&p.a - &identity.a).iter().map(|v| v * v).sum::<f64>().sqrt();
        json!({ "kind": "adapter", "dim": p.dim(), "frobenius_distance_from_identity": shift })
    } else if let Ok(m) = Manifest::read(path) {
        json!({ "kind": "manifest", "manifest": m })
    } else {
        return Err(Failure {
            code: EXIT_DATA,
            message: format!("{}: not a model, index, adapter or manifest", path.display()),
        });
    };
    println!("{}", serde_json::to_string_pretty(&summary).map_err(Error::from)?);
    Ok(())
}

fn serve_backbone(a: ServeArgs) -> Outcome {
    let vote = a.vote.vote(a.classes)?;
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line.map_err(|e| Failure { code: EXIT_DATA, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let req: Value = serde_json::from_str(&line).map_err(Error::from)?;
        let rows: Vec<Vec<f64>> = serde_json::from_value(req["context"].clone()).map_err(Error::from)?;
        let labels: Vec<usize> = serde_json::from_value(req["labels"].clone()).map_err(Error::from)?;
        let query: Vec<f64> = serde_json::from_value(req["query"].clone()).map_err(Error::from)?;
        let m = query.len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let context = ndarray::Array2::from_shape_vec((rows.len(), m), flat)
            .map_err(|e| Failure::from(Error::Shape(e.to_string())))?;
        let prompt = Prompt::new(context, Labels::Class(labels), ndarray::Array1::from(query))?;
        let probs = vote.predict(&prompt)?;
        writeln!(stdout, "{}", json!({ "probs": probs.probs() }))
            .and_then(|_| stdout.flush())
            .map_err(|e| Failure { code: EXIT_DATA, message: e.to_string() })?;
    }
    Ok(())
}
