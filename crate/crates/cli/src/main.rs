use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lalr::bench::ThresholdSource;
use lalr_cli::commands::{self, CliError, Common, SeedArg};

/// Train regression networks with Lipschitz adaptive learning rates and
/// compare them against a constant learning rate.
#[derive(Debug, Parser)]
#[command(name = "lalr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one network and write its loss curve (curve.csv) and summary (run.json).
    Train(CommonArgs),
    /// Paired constant-vs-adaptive runs over several seeds, with a report.
    Compare(CommonArgs),
    /// Paired runs for each quantile level under the check loss, with a report.
    Quantiles {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated quantile levels [default: the config's [quantiles].taus]
        #[arg(long, value_delimiter = ',')]
        taus: Option<Vec<f64>>,
    },
    /// Write the synthetic heteroscedastic data set as CSV plus a manifest.
    Synth {
        /// Number of rows to generate
        #[arg(long, default_value_t = 10_000)]
        count: usize,
        /// Generator seed
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output CSV path; the manifest is written next to it with a .json extension
        #[arg(long, default_value = "synthetic.csv")]
        out: PathBuf,
    },
    /// Print the tables for an existing summary.json (or the directory holding it).
    Report {
        /// Summary file or report directory
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Experiment config (TOML)
    #[arg(long, default_value = "lalr.toml")]
    config: PathBuf,
    /// Data set: a bundled name, a manifest .json, a .csv file, or `synthetic` [default: from config]
    #[arg(long)]
    dataset: Option<String>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed count N (seeds 0..N) or a comma-separated list [default: from config]
    #[arg(long)]
    seeds: Option<SeedArg>,
    /// Loss threshold: ols, heuristic, or value:<x> [default: from config]
    #[arg(long)]
    threshold_source: Option<ThresholdSource>,
    /// Worker threads for independent runs
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Zero out wall-clock timings so outputs are byte-identical across runs
    #[arg(long, default_value_t = false)]
    strip_timing: bool,
}

impl From<CommonArgs> for Common {
    fn from(a: CommonArgs) -> Self {
        Common {
            config: a.config,
            dataset: a.dataset,
            out: a.out,
            seeds: a.seeds,
            threshold_source: a.threshold_source,
            jobs: a.jobs,
            strip_timing: a.strip_timing,
        }
    }
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Train(a) => commands::train(&a.into()),
        Command::Compare(a) => commands::compare(&a.into()),
        Command::Quantiles { common, taus } => commands::quantiles(&common.into(), taus),
        Command::Synth { count, seed, out } => commands::synth(count, seed, &out),
        Command::Report { out } => commands::report(&out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
