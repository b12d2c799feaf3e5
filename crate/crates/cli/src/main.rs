mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use regionsep::dataset::{Split, Variant};
use regionsep::objectives::Regime;

#[derive(Parser, Debug)]
#[command(name = "regionsep", version, about = "Region-based multichannel speech separation workbench")]
pub struct Cli {
    /// TOML file with optional [dataset], [model] and [train] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Leave wall-clock times out of logs and manifests.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate (or load from cache) every array response the dataset config can use.
    SimulateRirs,
    /// Draw, render and write a dataset.
    SynthDataset,
    /// Train a separator on a dataset directory.
    Train(TrainArgs),
    /// Score a checkpoint on one split and variant.
    Evaluate(EvalArgs),
    /// Census of best output permutations for saved estimates.
    AnalyzePermutations(PermArgs),
    /// Per-position mean SI-SDRi from an evaluation log.
    ScatterSisdri(ScatterArgs),
    /// Average inter-channel attention for single-talker examples.
    InspectAttention(AttentionArgs),
}

#[derive(Args, Debug)]
pub struct DataSel {
    /// Dataset directory written by synth-dataset.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    #[arg(long, default_value = "FC")]
    pub variant: Variant,
    /// Use only the first N examples.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Overrides the config's loss regime.
    #[arg(long)]
    pub regime: Option<Regime>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Use only the first N training examples.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub sel: DataSel,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Model name in the table; the checkpoint's file stem when absent.
    #[arg(long)]
    pub name: Option<String>,
    /// Also write every estimate as a WAV under `estimates/`.
    #[arg(long)]
    pub save_estimates: bool,
}

#[derive(Args, Debug)]
pub struct PermArgs {
    #[command(flatten)]
    pub sel: DataSel,
    /// Directory of `<id>.wav` estimates from `evaluate --save-estimates`.
    #[arg(long)]
    pub estimates: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScatterArgs {
    /// `eval_log.jsonl` written by evaluate.
    #[arg(long)]
    pub eval_log: PathBuf,
    /// Also draw an SVG.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Args, Debug)]
pub struct AttentionArgs {
    #[command(flatten)]
    pub sel: DataSel,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub block: usize,
    /// Examples averaged per region.
    #[arg(long, default_value_t = regionsep::analysis::DEFAULT_PROBE_EXAMPLES)]
    pub examples: usize,
    /// Split multi-talker examples into one single-talker example per region.
    #[arg(long)]
    pub isolate: bool,
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::ALL
        .into_iter()
        .find(|sp| sp.as_str() == s)
        .ok_or_else(|| format!("unknown split {s:?}; expected train, val or test"))
}

/// Usage and configuration problems exit with 2, everything else with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    use regionsep::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_) | E::Missing(_) | E::Toml(_) | E::Geometry(_) | E::UnachievableT60 { .. } => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
