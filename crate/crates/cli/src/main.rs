//! `iagft` command-line tool.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::Config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] iagft::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "iagft", version, about = "Perceptual image coding with irregularity-aware graph transforms")]
pub struct Cli {
    /// key=value file supplying defaults for flags not given on the command line
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for block-parallel work [default: available cores]
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// RNG seed for codebook training [default: 0x1A6F7]
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Dct,
    Iagft,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TableArg {
    Uniform,
    Nonuniform,
}

macro_rules! from_str_via_value_enum {
    ($($t:ty),*) => {$(
        impl std::str::FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                <$t as ValueEnum>::from_str(s, true)
            }
        }
    )*};
}
from_str_via_value_enum!(ModeArg, TableArg);

/// Flags shared by every command that encodes.
#[derive(Args, Debug, Clone)]
pub struct CodingArgs {
    /// Transform [default: iagft when a codebook is given, else dct]
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Quantization table [default: uniform]
    #[arg(long, value_enum)]
    table: Option<TableArg>,
    /// Codebook file written by `train-vq` (required for --mode iagft)
    #[arg(long)]
    codebook: Option<PathBuf>,
    /// ECVQ rate multiplier λ [default: 0.1]
    #[arg(long)]
    lambda: Option<f64>,
    /// Lower bound on pixel weights [default: 0.05]
    #[arg(long)]
    q_floor: Option<f64>,
    /// Keep the literal Σ|φ|Δ non-uniform table instead of the weighted mean
    #[arg(long)]
    unnormalized_table: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train an ECVQ codebook of weight blocks from one image
    TrainVq {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of codewords [default: 10]
        #[arg(long)]
        k: Option<usize>,
        /// ECVQ rate multiplier λ [default: 0.1]
        #[arg(long)]
        lambda: Option<f64>,
        /// Step at which training weights are computed [default: 16]
        #[arg(long)]
        delta: Option<f64>,
        /// Lower bound on pixel weights [default: 0.05]
        #[arg(long)]
        q_floor: Option<f64>,
    },
    /// Encode an image to a bitstream and report rate and quality
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        coding: CodingArgs,
        /// Uniform step Δ [default: 16]
        #[arg(long, conflicts_with = "quality")]
        delta: Option<f64>,
        /// IJG quality for the non-uniform table [default: 50]
        #[arg(long)]
        quality: Option<f64>,
        /// Also write the reconstruction here
        #[arg(long)]
        recon: Option<PathBuf>,
    },
    /// Decode a bitstream to an image
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        codebook: Option<PathBuf>,
        /// Original image; prints PSNR, SSIM and MS-SSIM when given
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Compare a decoded image against its reference
    Eval {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        decoded: PathBuf,
    },
    /// Sweep quantization levels for the DCT and IAGFT paths and report BD-rates
    RdSweep {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        coding: CodingArgs,
        /// Comma-separated Δ values or qualities, at least four
        /// [default: 6,10,16,26 uniform; 90,75,50,25 non-uniform]
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
    },
    /// Compute the IAGFT of a square grid from a whitespace-separated weight file
    InspectBasis {
        /// s² positive weights in row-major order
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Tabulate the SSIM-optimal weight against local variance
    WeightCurve {
        #[arg(long, default_value_t = 8.0)]
        delta: f64,
        #[arg(long)]
        out: PathBuf,
        /// Largest variance in the table
        #[arg(long, default_value_t = 2000.0)]
        max_variance: f64,
        #[arg(long, default_value_t = 201)]
        points: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(threads) = config.pick(cli.threads, "threads")? {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    }
    let seed = config.pick(cli.seed, "seed")?.unwrap_or(iagft::vq::DEFAULT_SEED);

    match cli.command {
        Command::TrainVq { input, out, k, lambda, delta, q_floor } => commands::train_vq(
            &input,
            &out,
            &commands::TrainSettings {
                k: config.pick(k, "k")?.unwrap_or(iagft::vq::DEFAULT_CODEWORDS),
                lambda: config.pick(lambda, "lambda")?.unwrap_or(iagft::vq::DEFAULT_LAMBDA),
                delta: config.pick(delta, "delta")?.unwrap_or(iagft::vq::DEFAULT_TRAINING_DELTA),
                q_floor: config.pick(q_floor, "q_floor")?.unwrap_or(iagft::weights::DEFAULT_Q_FLOOR),
                seed,
            },
        ),
        Command::Encode { input, out, coding, delta, quality, recon } => {
            let setup = commands::CodingSetup::resolve(&coding, &config)?;
            let level = setup.level(&config, delta, quality)?;
            commands::encode(&input, &out, recon.as_deref(), &setup, level)
        }
        Command::Decode { input, out, codebook, reference } => {
            let codebook = config.pick(codebook, "codebook")?;
            commands::decode(&input, &out, codebook.as_deref(), reference.as_deref())
        }
        Command::Eval { reference, decoded } => commands::eval(&reference, &decoded),
        Command::RdSweep { input, out_dir, coding, levels } => {
            let setup = commands::CodingSetup::resolve(&coding, &config)?;
            let levels = match levels {
                Some(l) => l,
                None => match config.pick::<String>(None, "levels")? {
                    Some(text) => commands::parse_levels(&text)?,
                    None => setup.default_levels(),
                },
            };
            commands::rd_sweep(&input, &out_dir, &setup, &levels)
        }
        Command::InspectBasis { weights, out_dir } => commands::inspect_basis(&weights, &out_dir),
        Command::WeightCurve { delta, out, max_variance, points } => {
            commands::weight_curve(delta, &out, max_variance, points)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
