use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "rulefuse", version, about = "Fit, sample, apply and evaluate modality combining rules")]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// JSON file with defaults for evaluation, sampling and phantom settings.
    #[arg(long, global = true, value_name = "JSON")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit linear and/or stacking rules to decision vectors.
    Fit(FitArgs),
    /// Fit every decision vector and keep the stacking rules that reproduce it.
    Sample(SampleArgs),
    /// Apply a rule to three modality volumes.
    Combine(CombineArgs),
    /// Score masks, or score a rule over a dataset.
    Evaluate(EvaluateArgs),
    /// Grid search over linear rules or sampled stacking rules.
    Search(SearchArgs),
    /// Voxel-wise and per-case variance under a rule distribution.
    McUncertainty(McArgs),
    /// Generate a synthetic dataset.
    Phantom(PhantomArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitKind {
    Linear,
    Stacking,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SearchKind {
    Linear,
    Stacking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ZoneArg {
    Wg,
    Tz,
    Pz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RankArg {
    Dsc,
    Hd95,
    Recall,
    Precision,
}

#[derive(Debug, Args)]
pub struct StackingArgs {
    /// Gradient-descent learning rate for stacking fits.
    #[arg(long)]
    pub lr: Option<f64>,

    /// Gradient-descent iterations for stacking fits.
    #[arg(long)]
    pub iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Rule numbers (0–255) to fit.
    #[arg(long = "rule", value_name = "N")]
    pub rules: Vec<i64>,

    /// PI-RADS zones whose decision vectors to fit.
    #[arg(long = "zone", value_enum)]
    pub zones: Vec<ZoneArg>,

    #[arg(long, value_enum, default_value = "both")]
    pub kind: FitKind,

    #[command(flatten)]
    pub stacking: StackingArgs,

    /// Output JSON report.
    #[arg(long)]
    pub out: PathBuf,

    /// Optional CSV table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Decision vectors 0..n-rules are visited.
    #[arg(long, default_value_t = 256)]
    pub n_rules: usize,

    /// Acceptance tolerance; rules with ‖d − d̂‖² ≤ η²/8 are kept.
    #[arg(long)]
    pub eta: Option<f64>,

    #[command(flatten)]
    pub stacking: StackingArgs,

    #[arg(long)]
    pub out: PathBuf,

    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CombineArgs {
    #[arg(long)]
    pub t2w: PathBuf,
    #[arg(long)]
    pub dwi: PathBuf,
    #[arg(long)]
    pub adc: PathBuf,

    /// Rule as inline JSON (`[a1,a2,a3]`, `[b1,b2,b3,b0]`, `{"linear":[..]}`) or a JSON file.
    #[arg(long)]
    pub rule: String,

    /// Output mask volume (sidecar path).
    #[arg(long)]
    pub out: PathBuf,

    /// Also write the combined probability volume.
    #[arg(long)]
    pub probability_out: Option<PathBuf>,

    #[arg(long)]
    pub threshold: Option<f64>,

    #[arg(long)]
    pub min_region: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted mask (pairwise mode).
    #[arg(long, requires = "truth", conflicts_with = "manifest")]
    pub pred: Option<PathBuf>,

    /// Ground-truth mask (pairwise mode).
    #[arg(long, requires = "pred")]
    pub truth: Option<PathBuf>,

    /// Zone mask restricting pairwise scoring.
    #[arg(long, requires = "pred")]
    pub zone_mask: Option<PathBuf>,

    /// Dataset manifest (dataset mode).
    #[arg(long, required_unless_present = "pred")]
    pub manifest: Option<PathBuf>,

    /// Rule to score over the dataset.
    #[arg(long, requires = "manifest", required_unless_present_any = ["pred", "availability"])]
    pub rule: Option<String>,

    /// Modality availability table against this base linear rule.
    #[arg(long, requires = "manifest", conflicts_with = "rule")]
    pub availability: Option<String>,

    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitArg,

    #[arg(long, value_enum)]
    pub zone: Option<ZoneArg>,

    #[command(flatten)]
    pub lesion: LesionArgs,

    #[arg(long)]
    pub out: PathBuf,

    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LesionArgs {
    /// Overlap fraction a ground-truth lesion needs to count as detected.
    #[arg(long)]
    pub s_gt: Option<f64>,

    /// Overlap fraction a predicted lesion needs to count as correct.
    #[arg(long)]
    pub s_pred: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub manifest: PathBuf,

    #[arg(long, value_enum, default_value = "linear")]
    pub kind: SearchKind,

    /// Sampled rule set (from `sample`) for stacking searches.
    #[arg(long, required_if_eq("kind", "stacking"))]
    pub rules: Option<PathBuf>,

    #[arg(long, default_value_t = 0.1)]
    pub step: f64,

    #[arg(long, value_enum, default_value = "dsc")]
    pub rank_by: RankArg,

    /// Split used for ranking.
    #[arg(long, value_enum, default_value = "validation")]
    pub split: SplitArg,

    /// Held-out split on which the ranked rules are re-evaluated.
    #[arg(long, value_enum)]
    pub test_split: Option<SplitArg>,

    #[arg(long, value_enum)]
    pub zone: Option<ZoneArg>,

    /// Rows kept in the top-k tables.
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,

    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[arg(long)]
    pub manifest: PathBuf,

    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitArg,

    /// Dirichlet concentration `a1,a2,a3`.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["rules", "rule"])]
    pub dirichlet: Option<Vec<f64>>,

    /// Sampled rule set; rules are drawn uniformly from it.
    #[arg(long, conflicts_with = "rule")]
    pub rules: Option<PathBuf>,

    /// Single rule (point mass).
    #[arg(long)]
    pub rule: Option<String>,

    #[arg(long, default_value_t = 100)]
    pub draws: usize,

    #[arg(long, value_enum)]
    pub zone: Option<ZoneArg>,

    /// Write per-case voxel variance volumes.
    #[arg(long)]
    pub volumes: bool,

    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Phantom spec JSON file; overrides the `phantom` section of --config.
    #[arg(long)]
    pub spec: Option<PathBuf>,

    #[arg(long, default_value_t = 10)]
    pub n_cases: usize,

    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}
