//! `ise-lab`: train embedding tables with cluster-contrast objectives and
//! interpolated support samples, sweep ablation arms, and score dataset
//! dumps.
//!
//! Exit codes: 0 success, 2 configuration error (unreadable/invalid config,
//! bad flag values, malformed input files), 3 runtime failure (training
//! invariant violations, output I/O). Every failure also prints a
//! machine-parsable `ERROR code=<n> msg="<text>"` line to standard error.

mod ablate;
mod ops;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "ise-lab",
    version,
    about = "Clustering-based contrastive training laboratory",
    after_help = "run.csv columns: epoch,n_clusters,n_noise,l_se,l_lp,fowlkes_mallows,\
adjusted_rand,adjusted_mutual_info,v_measure,map,cmc1,cmc5,cmc10,lambda\n\
Numbers use '.' decimals at full precision regardless of locale.\n\
ISE_LAB_THREADS caps ablation parallelism."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once; writes run.csv, summary.json, config.txt, final_embeddings.txt.
    Run(RunArgs),
    /// Run a built-in ablation matrix over a seed list (arms share datasets per seed).
    Ablate(AblateArgs),
    /// Score a dataset dump: clustering quality plus retrieval metrics, as JSON on stdout.
    Eval(EvalArgs),
    /// Generate a synthetic dataset dump only.
    Gen(GenArgs),
}

/// Flags shared by every subcommand.
#[derive(Args)]
struct CommonArgs {
    /// Config file of `key = value` lines (`#` comments allowed).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set pli.schedule=LINEAR (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Shorthand for --set seed=N; wins over any other seed setting.
    #[arg(long)]
    seed: Option<u64>,

    /// Suppress progress output (errors still print).
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,

    /// Built-in arm matrix: table1 (components), table2 (schedules),
    /// table3 (directions x base degrees), table4 (neighbor counts).
    #[arg(long, value_name = "NAME")]
    matrix: String,

    /// Seed list, e.g. "0-9" or "0,3,7" (ranges and commas mix).
    #[arg(long, value_name = "LIST", default_value = "0-9")]
    seeds: String,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset dump to score (the text format `gen` and `run` write).
    input: PathBuf,

    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

/// A failure carrying its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub msg: String,
}

impl Failure {
    pub fn config(msg: impl Into<String>) -> Self {
        Failure {
            code: 2,
            msg: msg.into(),
        }
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Failure {
            code: 3,
            msg: msg.into(),
        }
    }
}

impl From<ise_core::Error> for Failure {
    fn from(e: ise_core::Error) -> Self {
        match &e {
            ise_core::Error::Config(_) | ise_core::Error::Parse { .. } => {
                Failure::config(e.to_string())
            }
            _ => Failure::runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = match &cli.command {
        Command::Run(a) => a.common.quiet,
        Command::Ablate(a) => a.common.quiet,
        Command::Eval(a) => a.common.quiet,
        Command::Gen(a) => a.common.quiet,
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if quiet {
        "error"
    } else {
        "warn"
    }))
    .init();

    let result = match cli.command {
        Command::Run(args) => ops::cmd_run(&args.common, &args.out),
        Command::Ablate(args) => ablate::cmd_ablate(&args.common, &args.out, &args.matrix, &args.seeds),
        Command::Eval(args) => ops::cmd_eval(&args.common, &args.input),
        Command::Gen(args) => ops::cmd_gen(&args.common, &args.out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("ERROR code={} msg={:?}", f.code, f.msg);
            ExitCode::from(f.code)
        }
    }
}
