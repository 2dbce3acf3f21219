//! `zoneforge` command-line front end.
//!
//! Exit codes: 0 on success, 1 on a domain error, 2 on a usage error.

mod cmd;
mod overlay;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "zoneforge",
    version,
    about = "Zonal prostate segmentation pipeline on MRE/MRI maps"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Run single-threaded; outputs are then bit-reproducible.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = "ZONEFORGE_THREADS")]
    pub threads: Option<usize>,
    /// Random seed; overrides the seed in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More progress output on stderr (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic phantom cohort.
    Phantom(PhantomArgs),
    /// Resample and centre-crop every case.
    Prep(DataArgs),
    /// Add elastically deformed copies of the training cases.
    Augment(DataArgs),
    /// Assign train/test splits.
    Split(SplitArgs),
    /// Train a network.
    Train(TrainArgs),
    /// Write predicted masks.
    Predict(PredictArgs),
    /// Compute segmentation metrics and the summary table.
    Eval(EvalArgs),
    /// Tabulate map values inside ground-truth and predicted zones.
    Tabulate(TabulateArgs),
    /// Render per-slice PNGs with zone contours.
    Overlay(OverlayArgs),
}

#[derive(Args, Debug)]
pub struct PhantomArgs {
    /// JSON phantom configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PhantomPreset::Desk)]
    pub preset: PhantomPreset,
    #[arg(long, default_value_t = 25)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PhantomPreset {
    Desk,
    Paper,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// JSON preprocessing configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.75)]
    pub train_fraction: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RegimeArg {
    Im,
    Um,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub regime: RegimeArg,
    /// Input combination such as `mag` or `sws+mag`; repeat for UM subsets.
    #[arg(long)]
    pub combo: Vec<String>,
    /// JSON training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the epoch count of the config.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum WhichCkpt {
    Best,
    Final,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Training run directory or checkpoint file.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = WhichCkpt::Final)]
    pub checkpoint: WhichCkpt,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Input combination; defaults to the model's.
    #[arg(long)]
    pub combo: Vec<String>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum HdArg {
    Slice2d,
    Volume3d,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = HdArg::Slice2d)]
    pub hd_mode: HdArg,
    /// Output directory (default: `<model>/eval`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TestArg {
    Welch,
    Paired,
}

#[derive(Args, Debug)]
pub struct TabulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = TestArg::Welch)]
    pub test: TestArg,
    /// Maps to tabulate.
    #[arg(long, value_delimiter = ',', default_value = "sws,mag,phi")]
    pub maps: Vec<String>,
    /// Output directory (default: `<model>/tabulate`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct OverlayArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long = "case")]
    pub case_id: String,
    /// Background map.
    #[arg(long, default_value = "mag")]
    pub map: String,
    /// Predicted mask file; ground truth is drawn if omitted.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Integer upscaling factor.
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cmd::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
