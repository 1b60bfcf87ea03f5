//! Command-line front end: training, evaluation, parsed-graph export and
//! synthetic dataset generation.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stigpn::config::{Preset, StreamSelection};
use stigpn::data::SyntheticTask;
use stigpn::model::StreamKind;

#[derive(Parser)]
#[command(name = "stigpn", version, about = "Spatio-temporal interaction graph parsing for human-object interaction recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write its best checkpoint and a per-epoch loss log.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Write the parsed graph of one video as DOT and JSON.
    ExportGraph(ExportArgs),
    /// Generate a synthetic tracklet dataset.
    SynthGen(SynthArgs),
}

#[derive(Args)]
struct ModelOverrides {
    /// Flat JSON config; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset used for keys the config file leaves out.
    #[arg(long, default_value = "desk")]
    preset: Preset,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated: none, no-te, intra-only, inter-only, dense-baseline.
    #[arg(long, value_delimiter = ',')]
    ablation: Vec<String>,
    #[arg(long)]
    stream: Option<StreamSelection>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Disable batch normalization in the spatial encoder and heads.
    #[arg(long)]
    no_norm: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelOverrides,
    /// Training dataset (JSON array or JSON lines).
    #[arg(long)]
    data: PathBuf,
    /// Validation dataset; when absent a stratified `val_fraction` split of
    /// the training data is held out.
    #[arg(long)]
    val_data: Option<PathBuf>,
    /// Precomputed visual features; the config's synthetic source otherwise.
    #[arg(long)]
    visual_features: Option<PathBuf>,
    /// Output checkpoint (JSON).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Loss log (CSV); defaults to the checkpoint path with a `.loss.csv` suffix.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    visual_features: Option<PathBuf>,
    /// Metrics JSON output; the table always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    video_id: String,
    /// Output prefix; writes `<out>.dot` and `<out>.json`.
    #[arg(long)]
    out: PathBuf,
    /// Inter-frame edges drawn into each human node.
    #[arg(long, default_value_t = 3)]
    top_n: usize,
    #[arg(long, default_value = "visual")]
    stream: StreamKind,
    #[arg(long)]
    visual_features: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "activities")]
    task: SyntheticTask,
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    clip_frames: usize,
    #[arg(long, default_value_t = 2)]
    min_objects: usize,
    #[arg(long, default_value_t = 3)]
    max_objects: usize,
    /// Gaussian jitter on box coordinates, in pixels.
    #[arg(long, default_value_t = 2.0)]
    jitter: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::ExportGraph(a) => commands::export_graph(a),
        Command::SynthGen(a) => commands::synth_gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
