use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use memlab_core::GradientMethod;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "memlab", version, about = "Transformer memory laboratory")]
pub struct Cli {
    /// Worker threads (0 uses every core). Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a word-level vocabulary from corpus text.
    BuildVocab(BuildVocabArgs),
    /// Forward pass over a stimulus, with optional bias and attention dump.
    Run(RunArgs),
    /// Attention taxonomy per layer and head, plus induction scores.
    Taxonomy(TaxonomyArgs),
    /// Fit per-head recency bias parameters of one layer to behavioral targets.
    Optimize(OptimizeArgs),
    /// Accuracy, correlation, taxonomy shift and perplexity cost of a fitted bias.
    Evaluate(EvaluateArgs),
    /// Per-presentation perplexity for repeated corpus spans of varying length.
    Sweep(SweepArgs),
    /// Repeat the fit on every layer and compare the outcomes.
    LayerSweep(LayerSweepArgs),
    /// Write a behavioral file with synthetic targets at sampled prompt positions.
    SynthTargets(SynthTargetsArgs),
    /// Write a randomly initialized weight manifest.
    RandomWeights(RandomWeightsArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ModelInputs {
    /// Weight manifest (JSON header next to its f32 blob).
    #[arg(long)]
    pub weights: PathBuf,
    /// Vocabulary file.
    #[arg(long)]
    pub vocab: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct OutDir {
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildVocabArgs {
    /// Corpus text files.
    #[arg(long, required = true)]
    pub corpus: Vec<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutDir,
}

#[derive(Debug, Args, Serialize)]
pub struct RunArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelInputs,
    /// Stimulus file: `{stimulus_id, span, repeats}` (behavioral files work too).
    #[arg(long)]
    pub stimulus: PathBuf,
    /// `zero` for an all-zero bias, or a fitted-params file.
    #[arg(long)]
    pub bias: Option<String>,
    /// Layer for `--bias zero`.
    #[arg(long, default_value_t = 1)]
    pub layer: usize,
    /// Also write the attention trace.
    #[arg(long)]
    pub trace: bool,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutDir,
}

#[derive(Debug, Args, Serialize)]
pub struct TaxonomyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelInputs,
    /// Stimulus files; summaries are combined weighted by token count.
    #[arg(long, required = true)]
    pub stimulus: Vec<PathBuf>,
    /// Fitted-params file applied during the forward pass.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutDir,
}

#[derive(Debug, Args, Serialize)]
pub struct OptimFlags {
    /// 1-based layer to bias.
    #[arg(long)]
    pub layer: usize,
    #[arg(long, default_value_t = 5e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0.30)]
    pub val_frac: f64,
    #[arg(long, default_value_t = GradientMethod::CentralFd)]
    pub grad: GradientMethod,
    #[arg(long, default_value_t = 1e-3)]
    pub fd_step: f64,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct OptimizeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelInputs,
    #[arg(long)]
    pub behavioral: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub optim: OptimFlags,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutDir,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelInputs,
    /// Held-out behavioral files.
    #[arg(long, required = true)]
    pub behavioral: Vec<PathBuf>,
    /// Fitted-params file; without it only the baseline is reported.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Unseen text for the perplexity cost (texts separated by blank lines).
    #[arg(long)]
    pub corpus: Vec<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutDir,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelInputs,
    #[arg(long, required = true)]
    pub corpus: Vec<PathBuf>,
    /// Span lengths as `A:B:STEP` (inclusive).
    #[arg(long, default_value = "10:570:40")]
    pub lengths: String,
    /// Spans sampled per length.
    #[arg(long, default_value_t = 100)]
    pub spans: usize,
    /// Maximum presentations per span.
    #[arg(long, default_value_t = 15)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1024)]
    pub max_tokens: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutDir,
}

#[derive(Debug, Args, Serialize)]
pub struct LayerSweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelInputs,
    /// Behavioral files; the first is fitted, the rest are held out.
    #[arg(long, required = true)]
    pub behavioral: Vec<PathBuf>,
    #[arg(long)]
    pub corpus: Vec<PathBuf>,
    #[arg(long, default_value_t = 5e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0.30)]
    pub val_frac: f64,
    #[arg(long, default_value_t = GradientMethod::CentralFd)]
    pub grad: GradientMethod,
    #[arg(long, default_value_t = 1e-3)]
    pub fd_step: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutDir,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthTargetsArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub stimulus: PathBuf,
    /// Prompts per presentation.
    #[arg(long, default_value_t = 10)]
    pub per_presentation: usize,
    /// Fraction of prompt offsets shared by every presentation.
    #[arg(long, default_value_t = 0.5)]
    pub shared_frac: f64,
    /// Accuracy in the first presentation.
    #[arg(long, default_value_t = 0.3)]
    pub base: f64,
    /// Accuracy grows as `base * r^exponent`.
    #[arg(long, default_value_t = 1.0)]
    pub exponent: f64,
    #[arg(long, default_value_t = 10)]
    pub subjects: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutDir,
}

#[derive(Debug, Args, Serialize)]
pub struct RandomWeightsArgs {
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 16)]
    pub d_model: usize,
    /// Vocabulary size; taken from `--vocab` when omitted.
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub max_context: usize,
    /// Standard deviation of the random matrices.
    #[arg(long, default_value_t = 0.02)]
    pub std: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutDir,
}
