use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

use commands::ExitKind;

#[derive(Parser)]
#[command(
    name = "trafficlens",
    version,
    about = "Label encrypted traffic by application category"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ExtractionArgs {
    #[arg(long, default_value_t = 40.96)]
    window_seconds: f64,
    #[arg(long, default_value_t = 0.01)]
    bin_seconds: f64,
    /// Windows with fewer packets are dropped.
    #[arg(long, default_value_t = 20)]
    min_packets: usize,
    /// Gaps longer than this (seconds) end an active period.
    #[arg(long, default_value_t = 1.0)]
    idle_threshold: f64,
    /// Replace every payload size with this many bytes before featurizing.
    #[arg(long, value_name = "BYTES")]
    mask_sizes: Option<u32>,
}

#[derive(Args, Clone)]
struct SynthArgs {
    /// Comma-separated profile names (default: all five).
    #[arg(long, value_delimiter = ',')]
    profiles: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Multiply every packet rate of the profiles.
    #[arg(long, default_value_t = 1.0)]
    rate_scale: f64,
    /// Add up to this many seconds of uniform delay per packet.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long, default_value_t = 20_000)]
    episodes: usize,
    #[arg(long, default_value_t = 512)]
    queries: usize,
    /// Support examples per class and episode.
    #[arg(long, default_value_t = 5)]
    support: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cap on calibration support examples per class.
    #[arg(long, default_value_t = 100)]
    s_cal: usize,
    /// KDE bandwidth rule: silverman or normal-reference.
    #[arg(long, default_value = "silverman")]
    kde_bandwidth: String,
}

#[derive(Subcommand)]
enum Command {
    /// Featurize captures (or synthetic traffic) into a feature file.
    Extract {
        /// PCAP files or directories of them.
        inputs: Vec<PathBuf>,
        /// Output file; `.csv` gives CSV, anything else the binary format.
        #[arg(short, long)]
        output: PathBuf,
        /// keyword=CATEGORY lines mapping file names to labels.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Fail if any input file matches no manifest keyword.
        #[arg(long)]
        require_labels: bool,
        /// Generate this many windows per synthetic profile instead of
        /// reading captures.
        #[arg(long, value_name = "WINDOWS")]
        synth: Option<usize>,
        #[command(flatten)]
        synth_args: SynthArgs,
        #[command(flatten)]
        extraction: ExtractionArgs,
    },
    /// Write one synthetic capture per profile.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        /// Seconds of session time per profile.
        #[arg(long, default_value_t = 600.0)]
        duration: f64,
        #[command(flatten)]
        synth_args: SynthArgs,
    },
    /// Train and calibrate a model on a labeled feature file.
    Train {
        features: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        ood_threshold: f64,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Per-window class, confidence and OOD scores.
    Predict {
        model: PathBuf,
        features: PathBuf,
        #[arg(long)]
        ood_threshold: Option<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// OOD scores, most novel first, with the fraction above threshold.
    OodReport {
        model: PathBuf,
        features: PathBuf,
        #[arg(long)]
        ood_threshold: Option<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// F1, per-class scores, confusion matrix and ECE on labeled features.
    Eval {
        model: PathBuf,
        features: PathBuf,
        #[arg(long)]
        ood_threshold: Option<f64>,
        /// Write the machine-readable report here.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 15)]
        ece_bins: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
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
    if let Err(e) = commands::init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(match commands::classify(&e) {
                ExitKind::Usage => 1,
                ExitKind::Data => 2,
                ExitKind::Numeric => 3,
            })
        }
    }
}
