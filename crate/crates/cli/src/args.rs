use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ctf", version, about = "Two-flow registration and completion of partial point clouds")]
pub struct Cli {
    /// Only log warnings and errors.
    #[arg(long, global = true)]
    pub quiet: bool,

    /// Emit logs as JSON lines.
    #[arg(long, global = true)]
    pub json_logs: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write procedural canonical shapes as .xyz files.
    GenShapes(GenShapesArgs),
    /// Crop, transform and store scan pairs from canonical shapes.
    GenData(GenDataArgs),
    /// Train both networks on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Evaluate under input noise, outliers and outlier filtering.
    Stress(StressArgs),
    /// Chart training logs or stress sweeps and merge them into one CSV.
    Plot(PlotArgs),
    /// Re-execute the command recorded in a run manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BudgetArg {
    Full,
    Small,
    Mini,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FlowArg {
    Cr,
    Rc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    TinyOverfit,
}

#[derive(Debug, Args)]
pub struct GenShapesArgs {
    /// Directory for the generated .xyz files.
    #[arg(long)]
    pub out: PathBuf,
    /// Shape families, comma separated (box, cylinder, table, chair, lamp, composite).
    #[arg(long, value_delimiter = ',', default_value = "box,cylinder,table,chair,lamp,composite")]
    pub families: Vec<String>,
    /// Shapes per family.
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Points sampled per shape.
    #[arg(long, default_value_t = 16_384)]
    pub points: usize,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Directory of canonical .xyz or .pcf clouds.
    #[arg(long)]
    pub shapes: PathBuf,
    /// Dataset directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Category label stored with every sample.
    #[arg(long)]
    pub category: String,
    /// Number of scan pairs.
    #[arg(long)]
    pub count: usize,
    /// Seed; sample k uses stream k of this seed.
    #[arg(long)]
    pub seed: u64,
    /// Target crop overlap (voxel IoU); pairs land within 10% of it.
    #[arg(long)]
    pub overlap: Option<f64>,
    /// Point budget: full (2048 per part), small (256) or mini (32).
    #[arg(long, value_enum, default_value_t = BudgetArg::Full)]
    pub budget: BudgetArg,
    /// Fraction of samples assigned to the train split.
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Fraction of samples assigned to the val split; the rest is test.
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON training config; missing fields take their defaults.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in config.
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// Run directory for logs and checkpoints.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint directory.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Override the configured iteration count.
    #[arg(long)]
    pub iterations: Option<u64>,
    /// Override the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Split to train on; val is used for validation when this is train.
    #[arg(long, default_value = "train")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct EvalTarget {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory for the result CSVs.
    #[arg(long)]
    pub out: PathBuf,
    /// Flow whose outputs are scored.
    #[arg(long, value_enum, default_value_t = FlowArg::Cr)]
    pub flow: FlowArg,
    /// Use ground-truth transforms in place of predicted ones.
    #[arg(long)]
    pub oracle_registration: bool,
    /// Split to evaluate: train, val, test or all.
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub target: EvalTarget,
}

#[derive(Debug, Args)]
pub struct StressArgs {
    #[command(flatten)]
    pub target: EvalTarget,
    /// Noise levels; each coordinate gets U[0, level] added.
    #[arg(long, num_args = 1.., default_values_t = [0.0])]
    pub noise: Vec<f64>,
    /// Outlier counts per part.
    #[arg(long, num_args = 1.., default_values_t = [0usize])]
    pub outliers: Vec<usize>,
    /// Also run every setting with radius outlier removal.
    #[arg(long)]
    pub filter: bool,
    /// Filter radius; defaults to one scaled to the part size.
    #[arg(long)]
    pub filter_radius: Option<f64>,
    /// Neighbors a point needs within the radius to survive the filter.
    #[arg(long, default_value_t = 4)]
    pub filter_min_neighbors: usize,
    /// Seed for the injected noise and outliers.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// CSV files, or run directories containing stress.csv or train_log.csv.
    #[arg(long, num_args = 1..)]
    pub runs: Vec<PathBuf>,
    /// Output chart (.svg); the merged CSV is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// X column; defaults by schema.
    #[arg(long)]
    pub x: Option<String>,
    /// Y column; defaults by schema.
    #[arg(long)]
    pub y: Option<String>,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    /// A run_manifest.json written by an earlier command.
    #[arg(long)]
    pub manifest: PathBuf,
}
