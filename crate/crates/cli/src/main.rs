//! `pcr`: build, inspect and analyze Progressive Compressed Records.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for data errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod analyze;
mod encode;
mod inspect;

#[derive(Parser, Debug)]
#[command(name = "pcr", version, about = "Progressive Compressed Records toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pack a directory of progressive JPEGs into record files.
    Encode(EncodeArgs),
    /// Print a record's header, index and per-group sizes.
    Inspect(InspectArgs),
    /// Write every image of a record at a given fidelity.
    Extract(ExtractArgs),
    /// Per-group cumulative size statistics over records, as CSV.
    Stats(StatsArgs),
    /// Microbenchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Run the loader pipeline simulator.
    Simulate(SimulateArgs),
    /// Run the simulator over a bandwidth x scan-group grid.
    Sweep(SweepArgs),
    /// MS-SSIM of every scan group against full fidelity, as CSV.
    Mssim(MssimArgs),
    /// Train a linear model while tuning the scan group by gradient similarity.
    Autotune(AutotuneArgs),
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    /// Directory of JPEG files, searched recursively.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory for the record files; created if missing.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 1024, value_parser = clap::value_parser!(u32).range(1..))]
    pub images_per_record: u32,
    /// Scan groups per record.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..=64))]
    pub groups: u32,
    /// Labels manifest, one `relative/path<TAB>label` per line. Defaults to
    /// `<input>/labels.tsv` when present, else to top-level subdirectory
    /// names in sorted order.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Command that turns a baseline JPEG into a progressive one; run as
    /// `<transcoder...> <file>` and read from stdout.
    #[arg(long, env = "PCR_TRANSCODER")]
    pub transcoder: Option<String>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    pub file: PathBuf,
    /// Also write `index.csv` and `groups.csv` into this directory.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    pub file: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=64))]
    pub group: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// A record file or a directory of records.
    pub path: PathBuf,
}

#[derive(Subcommand, Debug)]
enum BenchCommand {
    /// Single-process JPEG decode rate at one fidelity.
    Decode(BenchDecodeArgs),
}

#[derive(Args, Debug)]
pub struct BenchDecodeArgs {
    /// A record file or a directory of records.
    pub path: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=64))]
    pub group: u32,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: u32,
    /// Decode at least this many images, cycling through the corpus.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u32).range(1..))]
    pub min_images: u32,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// TOML simulation config.
    #[arg(long)]
    pub config: PathBuf,
    /// Write the per-batch trace CSV here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// TOML simulation config with a `[sweep]` table.
    #[arg(long)]
    pub config: PathBuf,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MssimArgs {
    /// A record file or a directory of records.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub max_images: Option<usize>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Args, Debug)]
pub struct AutotuneArgs {
    /// A record file or a directory of records.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u32).range(1..))]
    pub interval: u32,
    /// Images per trial.
    #[arg(long, default_value_t = 2560, value_parser = clap::value_parser!(u32).range(1..))]
    pub budget: u32,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    pub trials: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// Gradient descent step size.
    #[arg(long, default_value_t = 0.005)]
    pub lr: f64,
    #[arg(long)]
    pub max_images: Option<usize>,
}

/// A bad flag combination detected after parsing; exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Runs `f` on a rayon pool with `threads` workers (0 = default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    Ok(pool.install(f))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Encode(a) => encode::run(&a),
        Command::Inspect(a) => inspect::inspect(&a),
        Command::Extract(a) => inspect::extract(&a),
        Command::Stats(a) => inspect::stats(&a),
        Command::Bench(BenchCommand::Decode(a)) => analyze::bench_decode(&a),
        Command::Simulate(a) => analyze::simulate(&a),
        Command::Sweep(a) => analyze::sweep(&a),
        Command::Mssim(a) => analyze::mssim(&a),
        Command::Autotune(a) => analyze::autotune(&a),
    }
}

/// The error and its causes, skipping causes the message already ends with.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !msg.ends_with(&c) {
            msg = format!("{msg}: {c}");
        }
    }
    msg
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
