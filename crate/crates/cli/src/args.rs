use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "thermobnn", version, about = "Thermometer-encoded binary neural networks")]
pub struct Cli {
    #[command(flatten)]
    pub globals: Globals,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Globals {
    /// Seed for every random stream (overrides the config file's `seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Real-valued pretraining followed by binary training.
    Train(TrainArgs),
    /// Gradual block pruning of a trained model, or its competitors.
    Prune(PruneArgs),
    /// Encode an image into binary input planes.
    Encode(EncodeArgs),
    /// Write the per-channel ADC threshold codes of a model.
    ExportThresholds(ExportArgs),
    /// Write the encoding curves (level vs threshold) of a model.
    Curves(CurvesArgs),
    /// Accuracy, model size and BOPs of a checkpoint.
    Eval(EvalArgs),
    /// Generate the synthetic texture dataset.
    Synth(SynthArgs),
    /// Run an image through the ramp-ADC model with a threshold table.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset file or class-folder tree.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path, rewritten after every epoch. The finished
    /// pretraining stage is also kept as `<stem>.pretrain.<ext>`.
    #[arg(long)]
    pub out: PathBuf,
    /// Epoch log (JSON lines); defaults to `<out>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Continue from the checkpoint at `--out`.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many epochs in this invocation.
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PruneMode {
    Gradual,
    Oneshot,
    Scratch,
    All,
}

#[derive(Debug, Clone, Args)]
pub struct PruneArgs {
    /// Trained, binarized model to prune.
    #[arg(long)]
    pub baseline: PathBuf,
    /// Distillation teacher; defaults to the baseline. `train` writes the
    /// real-valued pretrained model next to its output for this purpose.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for stage checkpoints, the log and `tradeoff.csv`.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "gradual")]
    pub mode: PruneMode,
    /// Reuse finished stages and continue partial ones found in `--out-dir`.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many epochs in this invocation.
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("encoder").required(true).args(["checkpoint", "ft", "base2"])))]
pub struct EncodeArgs {
    /// PNG or PNM image.
    #[arg(long)]
    pub image: PathBuf,
    /// Use the input encoder of this checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Fixed thermometer with this many planes per channel.
    #[arg(long)]
    pub ft: Option<usize>,
    /// Base-2 bit planes.
    #[arg(long)]
    pub base2: bool,
    /// Pixel depth for `--ft` / `--base2`.
    #[arg(long, default_value_t = 8)]
    pub bits: u32,
    /// Raise normalized pixels to this power before encoding.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a text dump of the planes.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Text,
    Binary,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// DAC resolution; defaults to the encoder's pixel depth.
    #[arg(long)]
    pub bits: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    pub format: TableFormat,
}

#[derive(Debug, Clone, Args)]
pub struct CurvesArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to the gamma the checkpoint was trained with.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Print one JSON object instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 5000)]
    pub train: usize,
    #[arg(long, default_value_t = 1000)]
    pub test: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    /// Image height and width.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Threshold table (text or binary).
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Comparator input noise, in units of full scale.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    /// Probability that a comparator output flips.
    #[arg(long, default_value_t = 0.0)]
    pub flip_prob: f64,
    #[arg(long)]
    pub out: PathBuf,
}
