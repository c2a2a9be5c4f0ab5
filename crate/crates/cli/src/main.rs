use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use sml::classifier::{EnsembleConfig, EnsembleMode};
use sml::dataset::{read_manifest, write_synth_cohort, Label, SynthParams};
use sml::pipeline::{
    cross_validate, evaluate, load_model, mask_stats, predict_source, resolve_threads, roc_for, run_selection,
    save_model, train_pipeline, with_threads, write_predictions, write_roc, CvConfig, FeatureKind, ManifestSource,
    PipelineError, TrainConfig, DEFAULT_BLOCK_SIZE,
};
use sml::selection::{alpha_grid, GramPixels, SelectionConfig, DEFAULT_RESTARTS};

const USAGE_ERROR: u8 = 1;
const DATA_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "sml", version, about = "Spectral slice selection, pixel screening and tree ensembles for image stacks")]
struct Cli {
    /// Worker threads (overrides SML_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort and its manifest.
    Synth(SynthArgs),
    /// Grid-search the quantile level and emit the misclustering curve.
    Select(SelectArgs),
    /// Train a model on a labelled manifest.
    Train(TrainArgs),
    /// Score a manifest with a trained model.
    Predict(PredictArgs),
    /// Repeated stratified train/test splits.
    Crossval(CrossvalArgs),
    /// Percentages of constant, indistinguishable and relevant pixels.
    MaskStats(MaskStatsArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    normal: usize,
    #[arg(long)]
    abnormal: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Slice side length in pixels.
    #[arg(long, default_value_t = 128)]
    p: usize,
    #[arg(long, default_value_t = 40)]
    m_min: usize,
    #[arg(long, default_value_t = 400)]
    m_max: usize,
    #[arg(long, default_value_t = SynthParams::default().cluster_fraction)]
    cluster_fraction: f64,
    #[arg(long, default_value_t = SynthParams::default().base_level)]
    base_level: f64,
    #[arg(long, default_value_t = SynthParams::default().mean_shift)]
    mean_shift: f64,
    #[arg(long, default_value_t = SynthParams::default().label_signal)]
    label_signal: f64,
    #[arg(long, default_value_t = SynthParams::default().noise_sd)]
    noise_sd: f64,
    #[arg(long, default_value_t = SynthParams::default().signal_pixel_fraction)]
    signal_fraction: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum GramSet {
    A3,
    A2,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Sml,
    RandomImage,
    MeanImage,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Gbrf,
    Rf,
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Resize every slice to this side; defaults to the first stack's side.
    #[arg(long)]
    side: Option<usize>,
    /// Patients held in memory at once.
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    block_size: usize,
}

#[derive(Args)]
struct SelectionArgs {
    #[arg(long, default_value_t = 0.02)]
    grid_step: f64,
    /// Quantile levels averaged per scan (5 or 9).
    #[arg(long, default_value_t = 9)]
    quantiles: usize,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    kmeans_restarts: usize,
    /// Pixel set the patient Gram matrix is built on.
    #[arg(long, value_enum, default_value = "a3")]
    gram_pixels: GramSet,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SelectionArgs {
    fn config(&self) -> Result<SelectionConfig, CliError> {
        let config = SelectionConfig {
            grid: alpha_grid(self.grid_step).map_err(usage)?,
            quantile_count: self.quantiles,
            restarts: self.kmeans_restarts,
            gram_pixels: match self.gram_pixels {
                GramSet::A3 => GramPixels::A3,
                GramSet::A2 => GramPixels::A2,
            },
            seed: self.seed,
        };
        config.validate().map_err(usage)?;
        Ok(config)
    }
}

#[derive(Args)]
struct ModelArgs {
    #[command(flatten)]
    selection: SelectionArgs,
    #[arg(long, value_enum, default_value = "sml")]
    method: Method,
    #[arg(long, default_value_t = EnsembleConfig::default().n_trees)]
    trees: usize,
    /// Features sampled per tree.
    #[arg(long, default_value_t = EnsembleConfig::default().features_per_tree)]
    features: usize,
    #[arg(long, default_value_t = EnsembleConfig::default().max_depth)]
    depth: usize,
    #[arg(long, default_value_t = EnsembleConfig::default().learning_rate)]
    learning_rate: f64,
    #[arg(long, value_enum, default_value = "gbrf")]
    mode: Mode,
    /// Resample the feature subset at every split.
    #[arg(long)]
    per_split_features: bool,
}

impl ModelArgs {
    fn config(&self, input: &InputArgs) -> Result<TrainConfig, CliError> {
        let ensemble = EnsembleConfig {
            n_trees: self.trees,
            features_per_tree: self.features,
            max_depth: self.depth,
            learning_rate: self.learning_rate,
            mode: match self.mode {
                Mode::Gbrf => EnsembleMode::Gbrf,
                Mode::Rf => EnsembleMode::Rf,
            },
            seed: self.selection.seed,
            per_split_features: self.per_split_features,
        };
        ensemble.validate().map_err(usage)?;
        if input.block_size == 0 || input.side == Some(0) {
            return Err(usage("block size and side must be positive"));
        }
        Ok(TrainConfig {
            features: match self.method {
                Method::Sml => FeatureKind::QuantileMean,
                Method::RandomImage => FeatureKind::RandomImage,
                Method::MeanImage => FeatureKind::MeanImage,
            },
            selection: self.selection.config()?,
            ensemble,
            side: input.side,
            block_size: input.block_size,
        })
    }
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    selection: SelectionArgs,
    /// CSV of `ell,alpha,misclustering_error`.
    #[arg(long)]
    out: PathBuf,
    /// Also write the chosen selection as JSON here (it always goes to stdout).
    #[arg(long)]
    selection_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    model_out: PathBuf,
    /// In-sample report as JSON.
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// CSV of `patient_id,score,predicted_label[,true_label]`.
    #[arg(long)]
    out: PathBuf,
    /// ROC curve CSV; needs both labels in the manifest.
    #[arg(long)]
    roc: Option<PathBuf>,
    /// Evaluation report as JSON; needs labels in the manifest.
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Args)]
struct CrossvalArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 50)]
    repeats: usize,
    #[arg(long, default_value_t = 50)]
    train_normal: usize,
    #[arg(long, default_value_t = 200)]
    train_abnormal: usize,
    /// Skip the random-image and mean-image baselines.
    #[arg(long)]
    no_baselines: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MaskStatsArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Which spike eigenvector orders the slices.
    #[arg(long, default_value_t = 2)]
    ell: usize,
    #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6,0.8,1")]
    alphas: Vec<f64>,
    /// CSV of `alpha,pct_A1,pct_A2,pct_A3`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) => CliError::Usage(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<sml::dataset::DatasetError> for CliError {
    fn from(e: sml::dataset::DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn manifest_source(input: &InputArgs) -> Result<ManifestSource, CliError> {
    Ok(ManifestSource::new(read_manifest(&input.manifest)?))
}

fn labelled(input: &InputArgs) -> Result<(ManifestSource, Vec<Label>), CliError> {
    let source = manifest_source(input)?;
    let labels = source.labels()?;
    Ok((source, labels))
}

fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let params = SynthParams {
        n_normal: args.normal,
        n_abnormal: args.abnormal,
        m_range: (args.m_min, args.m_max),
        p: args.p,
        cluster_fraction: args.cluster_fraction,
        base_level: args.base_level,
        mean_shift: args.mean_shift,
        label_signal: args.label_signal,
        noise_sd: args.noise_sd,
        signal_pixel_fraction: args.signal_fraction,
    };
    params.validate().map_err(usage)?;
    let entries = write_synth_cohort(&params, args.seed, &args.out)?;
    info!("wrote {} stacks to {}", entries.len(), args.out.display());
    Ok(())
}

fn select(args: &SelectArgs) -> Result<(), CliError> {
    let config = args.selection.config()?;
    if args.input.block_size == 0 {
        return Err(usage("block size must be positive"));
    }
    let (source, labels) = labelled(&args.input)?;
    let run = run_selection(&source, &labels, &config, args.input.side, args.input.block_size)?;
    let mut csv = String::from("ell,alpha,misclustering_error\n");
    for s in &run.selection.errors {
        writeln!(csv, "{},{},{}", s.ell, s.alpha, s.misclustering_error).unwrap();
    }
    write_text(&args.out, &csv)?;
    let json = to_json(&run.selection);
    if let Some(path) = &args.selection_out {
        write_text(path, &json)?;
    }
    print!("{json}");
    info!("selection took {:.3}s", run.seconds);
    Ok(())
}

fn train(args: &TrainArgs) -> Result<(), CliError> {
    let config = args.model.config(&args.input)?;
    let (source, labels) = labelled(&args.input)?;
    let outcome = train_pipeline(&source, &labels, &config)?;
    save_model(&outcome.model, &args.model_out)?;
    if let Some(path) = &args.report_out {
        write_text(path, &to_json(&outcome.report))?;
    }
    info!(
        "in-sample accuracy {:?}, trained in {:.3}s",
        outcome.report.accuracy,
        outcome.report.train_seconds.unwrap_or(0.0)
    );
    Ok(())
}

fn predict(args: &PredictArgs) -> Result<(), CliError> {
    if args.input.block_size == 0 {
        return Err(usage("block size must be positive"));
    }
    let model = load_model(&args.model)?;
    let source = manifest_source(&args.input)?;
    let truth: Vec<Option<Label>> = source.entries().iter().map(|e| e.label).collect();
    let has_truth = truth.iter().any(Option::is_some);
    let (predictions, compute) = predict_source(&model, &source, args.input.block_size);
    for p in predictions.iter().filter(|p| p.score.is_none()) {
        warn!("{} undiagnosed: {}", p.patient_id, p.error.as_deref().unwrap_or("unknown error"));
    }
    write_predictions(&args.out, &predictions, has_truth.then_some(truth.as_slice()))?;
    if let Some(path) = &args.roc {
        let roc = roc_for(&predictions, &truth)
            .ok_or_else(|| CliError::Data("ROC needs diagnosed patients of both labels".into()))?;
        write_roc(path, &roc)?;
    }
    if let Some(path) = &args.report_out {
        if !has_truth {
            return Err(CliError::Data("report needs labels in the manifest".into()));
        }
        let mut report = evaluate(&predictions, &truth);
        report.test_seconds = Some(compute.as_secs_f64());
        write_text(path, &to_json(&report))?;
    }
    info!("scored {} patients in {:.3}s", predictions.len(), compute.as_secs_f64());
    Ok(())
}

fn crossval(args: &CrossvalArgs) -> Result<(), CliError> {
    let train = args.model.config(&args.input)?;
    if args.repeats == 0 {
        return Err(usage("repeats must be positive"));
    }
    let (source, labels) = labelled(&args.input)?;
    let config = CvConfig {
        repeats: args.repeats,
        train_normal: args.train_normal,
        train_abnormal: args.train_abnormal,
        seed: args.model.selection.seed,
        train,
        baselines: !args.no_baselines,
    };
    let report = cross_validate(&source, &labels, &config)?;
    write_text(&args.out, &to_json(&report))?;
    for s in &report.summary {
        info!("{}: accuracy {:?}", s.method, s.accuracy.map(|a| a.mean));
    }
    Ok(())
}

fn mask_stats_cmd(args: &MaskStatsArgs) -> Result<(), CliError> {
    if args.input.block_size == 0 {
        return Err(usage("block size must be positive"));
    }
    if !(args.ell == 1 || args.ell == 2) || args.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(usage("--ell must be 1 or 2 and --alphas within [0, 1]"));
    }
    let (source, labels) = labelled(&args.input)?;
    let rows = mask_stats(&source, &labels, args.ell, &args.alphas, args.input.side, args.input.block_size)?;
    let mut csv = String::from("alpha,pct_A1,pct_A2,pct_A3\n");
    for r in rows {
        writeln!(csv, "{},{},{},{}", r.alpha, r.pct_a1, r.pct_a2, r.pct_a3).unwrap();
    }
    write_text(&args.out, &csv)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = resolve_threads(cli.threads)?;
    with_threads(threads, || match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Select(a) => select(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Crossval(a) => crossval(a),
        Command::MaskStats(a) => mask_stats_cmd(a),
    })?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(USAGE_ERROR)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(DATA_ERROR)
        }
    }
}
