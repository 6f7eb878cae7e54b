use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "sourcebias", version, about = "Measure and remove source bias in dual-encoder retrieval")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus with a watermarked copy of every real item.
    Synth(SynthArgs),
    /// Measure source bias of a dataset, optionally through a trained model.
    Eval(EvalArgs),
    /// Train a dual encoder, optionally with the debiasing penalty.
    Train(TrainCmdArgs),
    /// Train one model per contamination ratio and report bias on held-out data.
    SweepAlpha(SweepAlphaArgs),
    /// Train one model per sampling probability and report bias on held-out data.
    SweepBeta(SweepBetaArgs),
    /// Compare an original and a debiased model: transformation vectors,
    /// their aggregation and the reverse-transformation experiment.
    Analyze(AnalyzeArgs),
    /// Compare retrieval on a real-only corpus with a generated-only corpus.
    Parity(ParityArgs),
    /// Pick the candidate embedding most similar to a real one.
    Select(SelectArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of queries; the corpus holds one real and one generated item per query.
    #[arg(long, default_value_t = 500)]
    pub queries: usize,
    /// Embedding dimension (at least 4).
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Watermark strength added to generated items before normalization.
    #[arg(long, default_value_t = 0.15, allow_negative_numbers = true)]
    pub lambda: f64,
    /// Share of the watermark along the mean query direction, in [0, 1].
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub gamma: f64,
    /// Noise scale separating a real item from its query.
    #[arg(long, default_value_t = 1.4, allow_negative_numbers = true)]
    pub noise: f64,
    /// Weight of the direction shared by all queries; 0 gives isotropic queries.
    #[arg(long, default_value_t = 0.3, allow_negative_numbers = true)]
    pub anchor: f64,
    /// Keep every query orthogonal to the random watermark direction.
    #[arg(long)]
    pub orthogonal_queries: bool,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for images.emb, queries.emb, meta.jsonl and watermark.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MetricArgs {
    /// Cutoffs; NDCG and Recall are reported at each.
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    pub k: Vec<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Model checkpoint; identity heads when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub metrics: MetricArgs,
    /// Number of histogram bins for the score distribution.
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Output directory for report.json, metrics.csv, scores.csv and scores.svg.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum Preset {
    /// Identity heads, frozen biases, temperature 0.05.
    Finetune,
    /// Random heads, trainable biases, temperature 0.02.
    Scratch,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum PenaltyModeArg {
    /// max(0, Δs) per sampled triple.
    Hinge,
    /// Δs per sampled triple.
    Raw,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum PenaltyTargetArg {
    /// Penalty gradient reaches the image head only.
    Image,
    /// Penalty gradient reaches both heads.
    Both,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum InitArg {
    Random,
    Identity,
}

/// Training settings. Unset flags come from `--config` or the preset.
#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON file with training settings; explicit flags take precedence.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Base settings when no config file is given.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Passes over the training pairs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Pairs per mini-batch (at least 2).
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Momentum coefficient in [0, 1).
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Softmax temperature of the contrastive loss.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Form of the debiasing penalty.
    #[arg(long, value_enum)]
    pub penalty_mode: Option<PenaltyModeArg>,
    /// Multiplier on the summed penalty.
    #[arg(long)]
    pub penalty_weight: Option<f64>,
    /// Parameters that receive the penalty gradient.
    #[arg(long, value_enum)]
    pub penalty_target: Option<PenaltyTargetArg>,
    /// Whether head biases are trained.
    #[arg(long)]
    pub train_bias: Option<bool>,
    /// Head initialization.
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// Output dimension of both heads; defaults to the input dimension.
    #[arg(long)]
    pub d_out: Option<usize>,
    /// Random seed for initialization, shuffling, sampling and mixing.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainCmdArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Percentage of captions paired with their generated item.
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    /// Probability of keeping each eligible triple in the penalty set.
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    /// Hold out the last N queries and evaluate on them after every epoch.
    #[arg(long)]
    pub holdout: Option<usize>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub metrics: MetricArgs,
    /// Output directory for model.dem, trace.json and trace.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepAlphaArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Contamination ratios in percent.
    #[arg(long, value_delimiter = ',', default_value = "0,20,40,60,80,100")]
    pub alphas: Vec<f64>,
    /// Number of trailing queries held out for evaluation; a third by default.
    #[arg(long)]
    pub holdout: Option<usize>,
    /// Worker threads across independent runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub metrics: MetricArgs,
    /// Output directory for sweep_alpha.json and sweep_alpha.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepBetaArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Sampling probabilities in [0, 1].
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,0.6,0.7,0.8,0.9,1")]
    pub betas: Vec<f64>,
    /// Contamination ratio of the shared training pairs, in percent.
    #[arg(long, default_value_t = 100.0)]
    pub alpha: f64,
    /// Number of trailing queries held out for evaluation; a third by default.
    #[arg(long)]
    pub holdout: Option<usize>,
    /// Worker threads across independent runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Number of histogram bins for each score distribution.
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Also write one checkpoint per β.
    #[arg(long)]
    pub save_models: bool,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub metrics: MetricArgs,
    /// Output directory for sweep_beta.json, sweep_beta.csv and per-β histograms.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum ModeArg {
    /// Shift every real item by the mean transformation.
    Mean,
    /// Shift each real item by the transformation of its generated pair.
    Paired,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum SignArg {
    /// Subtract the transformation.
    Minus,
    /// Add the transformation.
    Plus,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint of the original model.
    #[arg(long)]
    pub original: PathBuf,
    /// Checkpoint of the debiased model.
    #[arg(long)]
    pub debiased: PathBuf,
    /// Restrict the analysis to the last N queries.
    #[arg(long)]
    pub holdout: Option<usize>,
    /// Transformation applied to real items in the reverse experiment.
    #[arg(long, value_enum, default_value = "mean")]
    pub mode: ModeArg,
    /// Direction of the shift in the reverse experiment.
    #[arg(long, value_enum, default_value = "minus")]
    pub sign: SignArg,
    /// Minimum gap between transformation and baseline dispersion.
    #[arg(long, default_value_t = 0.2)]
    pub threshold: f64,
    /// watermark.json written by `synth`, for the alignment check.
    #[arg(long)]
    pub watermark: Option<PathBuf>,
    #[command(flatten)]
    pub metrics: MetricArgs,
    /// Output directory for analysis.json and projection.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ParityArgs {
    /// Dataset directory holding both provenances.
    #[arg(long)]
    pub data: PathBuf,
    /// Model checkpoint; identity heads when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Largest acceptable gap in metric points.
    #[arg(long, default_value_t = 1.0)]
    pub threshold: f64,
    #[command(flatten)]
    pub metrics: MetricArgs,
    /// Output directory for parity.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    /// Real item as FILE:ROW into an .emb file.
    #[arg(long)]
    pub real: String,
    /// .emb file of candidate embeddings.
    #[arg(long)]
    pub candidates: PathBuf,
    /// Candidate rows to consider; all rows when omitted.
    #[arg(long, value_delimiter = ',')]
    pub rows: Option<Vec<usize>>,
    /// Also write the selection to this JSON file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
