//! Command-line surface. Every value flag can also come from a
//! `key=value` file given by `--config` (keys are the flag names without
//! `--`); flags win on conflict.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ttd", version, about = "Test-time dynamic image fusion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse every item of an input set into `<out>/<id>.png`.
    Fuse(FuseArgs),
    /// Stage 1 only: export per-source weight and loss maps.
    Weights(InputArgs),
    /// Score fused images against their sources into a CSV.
    Eval(EvalArgs),
    /// Train the toy codec on an input set.
    Train(TrainArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Bound decomposition report for static, RD and PC weights.
    Theory(InputArgs),
    /// Sweep weight forms and normalizations.
    Ablate(InputArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// `key=value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["constant", "pyramid", "toynet"])]
    pub codec: Option<String>,
    /// Toy-net parameter file.
    #[arg(long, global = true)]
    pub params: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["rd", "plain", "sigmoid", "static", "pc", "grad"])]
    pub form: Option<String>,
    #[arg(long, global = true, value_parser = ["softmax", "prop", "none"])]
    pub norm: Option<String>,
    /// Feature-gradient channel for `--form grad` (default: calibrated).
    #[arg(long, global = true)]
    pub grad_channel: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub csv: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Allow fusion with weights that do not sum to one.
    #[arg(long, global = true)]
    pub force_unnormalized: bool,
    /// Pyramid levels.
    #[arg(long, global = true)]
    pub levels: Option<usize>,
    /// Pyramid quantization step.
    #[arg(long, global = true)]
    pub step: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Directory of items, one sub-directory per item.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct FuseArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Also write weight/loss maps and heatmaps to `<out>/<id>/`.
    #[arg(long)]
    pub export_weights: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Directory holding `<id>.png` fused images.
    #[arg(long)]
    pub fused: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Feature channels K.
    #[arg(long)]
    pub features: Option<usize>,
    /// Kernel size k (odd).
    #[arg(long)]
    pub kernel: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub count: Option<usize>,
    /// Side length of the square scenes.
    #[arg(long)]
    pub size: Option<usize>,
    /// Texture density in [0, 1].
    #[arg(long)]
    pub density: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}
