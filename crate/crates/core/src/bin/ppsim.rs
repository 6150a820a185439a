use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ppsim::cli::{self, CliError, OutputFormat, RunOptions};
use ppsim::PrefetcherKind;

#[derive(Parser)]
#[command(name = "ppsim", version, about = "Two-level (GHB + perceptron) prefetching simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Format {
    /// Emit JSON
    #[arg(long, conflicts_with = "csv")]
    json: bool,
    /// Emit CSV
    #[arg(long)]
    csv: bool,
}

impl Format {
    fn get(&self) -> OutputFormat {
        match (self.json, self.csv) {
            (true, _) => OutputFormat::Json,
            (_, true) => OutputFormat::Csv,
            _ => OutputFormat::Text,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    None,
    S,
    Sp,
    M,
    Mp,
}

impl From<Variant> for PrefetcherKind {
    fn from(v: Variant) -> Self {
        match v {
            Variant::None => PrefetcherKind::None,
            Variant::S => PrefetcherKind::Stride,
            Variant::Sp => PrefetcherKind::StridePerceptron,
            Variant::M => PrefetcherKind::Markov,
            Variant::Mp => PrefetcherKind::MarkovPerceptron,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace from the [trace] section of a config file
    Gen { spec: PathBuf, out: PathBuf },
    /// Simulate one prefetcher over a trace
    Run {
        trace: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the configured prefetcher
        #[arg(long, value_enum)]
        prefetcher: Option<Variant>,
        #[command(flatten)]
        format: Format,
        /// Write the perceptron training log (CSV) to this file
        #[arg(long, value_name = "FILE")]
        debug_perceptron: Option<PathBuf>,
        /// Write per-access demand latencies (CSV) to this file
        #[arg(long, value_name = "FILE")]
        latency_log: Option<PathBuf>,
        /// Write the report here instead of stdout
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run S, SP, M and MP over one trace and tabulate the metrics
    Compare {
        trace: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        format: Format,
    },
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => {
            use std::io::Write;
            std::io::stdout().write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { spec, out } => {
            let n = cli::cmd_gen(&spec, &out)?;
            eprintln!("wrote {n} records to {}", out.display());
        }
        Command::Run { trace, config, prefetcher, format, debug_perceptron, latency_log, out } => {
            let opts = RunOptions {
                format: format.get(),
                prefetcher: prefetcher.map(Into::into),
                debug_perceptron,
                latency_log,
            };
            let report = cli::cmd_run(config.as_deref(), &trace, &opts)?;
            emit(&cli::render_report(&report, opts.format), out.as_ref())?;
            eprintln!("wall time: {:.3}s", report.wall_time.as_secs_f64());
        }
        Command::Compare { trace, config, format } => {
            let table = cli::cmd_compare(config.as_deref(), &trace)?;
            emit(&cli::render_comparison(&table, format.get()), None)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ppsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
