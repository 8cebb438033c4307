use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use streamreg::{Error, ErrorKind};

mod commands;
mod report;

#[derive(Parser, Debug)]
#[command(
    name = "streamreg",
    version,
    about = "Streaming and out-of-core regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,

    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Machine,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Gaussian,
    Binomial,
}

impl From<FamilyArg> for streamreg::family::Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Gaussian => Self::GaussianIdentity,
            FamilyArg::Binomial => Self::BinomialLogit,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Mean,
    Ols,
}

/// Input file and column mapping shared by the data-driven subcommands.
#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// Delimited text file with a header row; gzip input is detected.
    #[arg(long)]
    input: PathBuf,

    #[arg(long)]
    response: String,

    /// Comma-separated covariate columns. An intercept is always added.
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,

    #[arg(long, default_value = ",")]
    delimiter: char,

    /// Fail on the first unparsable row instead of skipping it.
    #[arg(long)]
    strict: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stream blocks through online updating of every submodel and report
    /// AIC, BIC and DIC.
    SelectStream {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 100)]
        block_size: usize,
        /// Block counts at which to report in addition to the end of input.
        #[arg(long, value_delimiter = ',')]
        checkpoints: Vec<u64>,
        /// Resume from a saved stream state.
        #[arg(long)]
        snapshot_in: Option<PathBuf>,
        /// Save the final stream state.
        #[arg(long)]
        snapshot_out: Option<PathBuf>,
    },
    /// Fit each block separately and combine the fits.
    Dnc {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 5000)]
        block_size: usize,
        #[arg(long, value_enum, default_value_t = FamilyArg::Gaussian)]
        family: FamilyArg,
    },
    /// Bag of little bootstraps (loads the data into memory).
    Blb {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum, default_value_t = EstimatorArg::Ols)]
        estimator: EstimatorArg,
        #[arg(long, default_value_t = 0.7)]
        gamma: f64,
        #[arg(long, default_value_t = 20)]
        s: usize,
        #[arg(long, default_value_t = 100)]
        r: usize,
        #[arg(long, default_value_t = 0.95)]
        ci_level: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Chunked iteratively reweighted least squares.
    Glm {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum, default_value_t = FamilyArg::Binomial)]
        family: FamilyArg,
        #[arg(long, default_value_t = 500_000)]
        chunk_size: usize,
        #[arg(long, default_value_t = 25)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Accumulate an incremental QR factorization.
        #[arg(long)]
        qr: bool,
    },
    /// Monte Carlo study of criterion-based selection.
    Simulate {
        #[arg(long, default_value_t = 1000)]
        replicates: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "2,25,100")]
        checkpoints: Vec<u64>,
        #[arg(long, default_value_t = 100)]
        block_size: usize,
        /// Scenario numbers 1-8 (four coefficient vectors, independent then
        /// AR(1)); all by default.
        #[arg(long, value_delimiter = ',')]
        scenarios: Vec<usize>,
        /// Also write the structured summary here.
        #[arg(long)]
        summary_out: Option<PathBuf>,
    },
    /// Derive the five-column airline design from raw on-time records.
    AirlinePrep {
        #[arg(long)]
        input: PathBuf,
        /// Destination for the prepared rows.
        #[arg(long)]
        prepared: PathBuf,
        #[arg(long, default_value = ",")]
        delimiter: char,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn run(cli: Cli) -> streamreg::Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let report = match cli.command {
        Command::SelectStream {
            input,
            block_size,
            checkpoints,
            snapshot_in,
            snapshot_out,
        } => commands::select_stream(
            &input,
            block_size,
            &checkpoints,
            snapshot_in.as_deref(),
            snapshot_out.as_deref(),
        )?,
        Command::Dnc {
            input,
            block_size,
            family,
        } => commands::dnc(&input, block_size, family.into())?,
        Command::Blb {
            input,
            estimator,
            gamma,
            s,
            r,
            ci_level,
            seed,
        } => commands::blb(
            &input,
            estimator,
            streamreg::blb::BlbConfig {
                gamma,
                s,
                r,
                seed,
                ci_level,
            },
        )?,
        Command::Glm {
            input,
            family,
            chunk_size,
            max_iter,
            tol,
            qr,
        } => commands::glm(
            &input,
            streamreg::chunkglm::GlmConfig {
                family: family.into(),
                max_iter,
                tol,
                chunk_size,
                use_qr: qr,
                ..Default::default()
            },
        )?,
        Command::Simulate {
            replicates,
            seed,
            checkpoints,
            block_size,
            scenarios,
            summary_out,
        } => commands::simulate(
            replicates,
            seed,
            checkpoints,
            block_size,
            &scenarios,
            summary_out.as_deref(),
        )?,
        Command::AirlinePrep {
            input,
            prepared,
            delimiter,
        } => commands::airline_prep(&input, &prepared, delimiter)?,
    };
    let text = report.render(cli.format)?;
    match cli.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    match report.failure() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
