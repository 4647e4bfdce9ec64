use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "maginet", version, about = "Mask-aware graph imputation for traffic series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic series and its road graph.
    Generate(GenerateArgs),
    /// Draw a hold-out mask for a series.
    Mask(MaskArgs),
    /// Train the network and write a checkpoint and history.
    Train(TrainArgs),
    /// Fill the missing readings of a series.
    Impute(ImputeArgs),
    /// Score one method on held-out readings.
    Eval(EvalArgs),
    /// Score methods across missing ratios.
    Sweep(SweepArgs),
    /// Train the network with components switched off.
    Ablate(AblateArgs),
}

/// Flags shared by every data-consuming command.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Series CSV (`node<i>_f<j>` columns, one row per step).
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// Edge list CSV (`src,dst,weight`).
    #[arg(long)]
    pub adj: Option<PathBuf>,
    /// Hold-out mask file; drawn from --ratio and --seed when absent.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Fraction of observed readings to hold out.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Seed for mask drawing.
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset tag for reports.
    #[arg(long)]
    pub dataset: Option<String>,
}

/// Overrides for the model and optimizer settings.
#[derive(Args, Debug, Clone, Default)]
pub struct Tuning {
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub head_dim: Option<usize>,
    #[arg(long)]
    pub spatial_dim: Option<usize>,
    #[arg(long)]
    pub cheb_order: Option<usize>,
    /// Gated convolution widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub kernels: Option<Vec<usize>>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long, value_enum)]
    pub mask_mode: Option<MaskModeArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub clip: Option<f64>,
    /// Seed for initialization and batch order.
    #[arg(long)]
    pub train_seed: Option<u64>,
    #[arg(long)]
    pub knn_k: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum MaskModeArg {
    NegInf,
    Multiply,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Test,
    All,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub nodes: u64,
    #[arg(long, default_value_t = 2016)]
    pub steps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Directory for `series.csv` and `adj.csv`.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Explicit series path (overrides --out).
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// Explicit edge list path (overrides --out).
    #[arg(long)]
    pub adj: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MaskArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub tuning: Tuning,
    /// Component to switch off (repeatable).
    #[arg(long)]
    pub ablate: Vec<String>,
}

#[derive(Args, Debug)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub common: Common,
    /// mean, knn or maginet.
    #[arg(long, default_value = "maginet")]
    pub method: String,
    /// Trained checkpoint (required for maginet).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "maginet")]
    pub method: String,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Score the test windows or every held-out reading.
    #[arg(long, value_enum, default_value = "test")]
    pub on: Split,
    /// Node whose imputation trace is written next to the report.
    #[arg(long)]
    pub trace_node: Option<usize>,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.2, 0.3, 0.4, 0.5, 0.6, 0.7])]
    pub ratios: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec!["mean".to_string(), "knn".to_string(), "maginet".to_string()])]
    pub methods: Vec<String>,
    /// Parallel cells.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Variants, comma separated (`no_mastdec` or `w/o MASTdec` style).
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub tuning: Tuning,
}
