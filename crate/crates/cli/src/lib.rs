//! The `dda` command line. [`run`] parses argv, dispatches to a subcommand
//! and returns the process exit code; every subcommand leaves a `run.json`
//! next to its outputs.

mod commands;
mod figures;
pub mod record;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use figures::{grid, GRID_GAP, GRID_ROWS};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "DDA_SEED";

#[derive(Debug, Parser)]
#[command(name = "dda", version = record::version(), about = "Fisheye rectification with a dual diffusion architecture")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a dataset directory from a JSON config.
    Synth(SynthArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Correct one PNG or a directory of PNGs.
    Infer(InferArgs),
    /// Score uncorrected, one-pass and iterative outputs on a test split.
    Eval(EvalArgs),
    /// Write a comparison grid: input, one-pass, iterative and target rows.
    Figures(FiguresArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Dataset config (JSON); missing keys take the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset root written by `synth`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Training config (JSON), merged over the toy defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// cdm, cdm-opn or dda.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Onepass,
    Iterative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DomainArg {
    Synthetic,
    Simreal,
}

impl DomainArg {
    fn domain(self) -> dda_core::scenes::Domain {
        match self {
            DomainArg::Synthetic => dda_core::scenes::Domain::Synthetic,
            DomainArg::Simreal => dda_core::scenes::Domain::SimReal,
        }
    }
}

#[derive(Debug, Args)]
struct InferArgs {
    /// Training run or checkpoint directory.
    #[arg(long)]
    ckpt: PathBuf,
    /// A PNG or a directory of PNGs.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long, value_enum, default_value = "synthetic")]
    domain: DomainArg,
    #[arg(long)]
    seed: Option<u64>,
    /// Reverse-chain length for the iterative mode.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset root or one of its split directories; the root means `test`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Images per domain; all by default.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// Skip the iterative scheme.
    #[arg(long)]
    onepass_only: bool,
    #[arg(long, default_value_t = 16)]
    batch: usize,
}

#[derive(Debug, Args)]
struct FiguresArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Columns (images) in the grid.
    #[arg(long, default_value_t = 6)]
    count: usize,
    #[arg(long, value_enum, default_value = "synthetic")]
    domain: DomainArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
}

/// Runs the command line and returns the exit code: 0 on success, 1 when the
/// command fails, 2 for usage errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a, &argv),
        Command::Train(a) => commands::train(a, &argv),
        Command::Infer(a) => commands::infer(a, &argv),
        Command::Eval(a) => commands::eval(a, &argv),
        Command::Figures(a) => commands::figures(a, &argv),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
