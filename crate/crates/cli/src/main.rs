mod commands;
mod options;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use options::{BackendArgs, TrackerArgs};

#[derive(Debug, Parser)]
#[command(
    name = "tracktor",
    version,
    about = "Online multi-object tracking by bounding-box regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
pub struct SequenceArgs {
    /// Sequence directory with seqinfo.ini (repeatable)
    #[arg(long = "seq", required = true)]
    pub seqs: Vec<PathBuf>,
    /// Ground-truth file replacing <seq>/gt/gt.txt; `{seq}` is replaced by the sequence name
    #[arg(long)]
    pub gt: Option<String>,
    /// Public detections file; `{seq}` is replaced by the sequence name
    #[arg(long)]
    pub dets: Option<String>,
    /// Keep every K-th frame
    #[arg(long, default_value_t = 1)]
    pub decimate: u32,
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub sequences: SequenceArgs,
    #[command(flatten)]
    pub tracker: TrackerArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// TOML file with [tracker] and [noise] tables; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sequences tracked in parallel
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Track sequences and write result files with JSON manifests
    Track {
        #[command(flatten)]
        run: RunArgs,
        /// Components replaced by ground truth: kill, reg, mm, reid, inter, all or none
        #[arg(long, default_value = "none")]
        oracle: String,
        /// Output directory for <name>.txt and <name>.manifest.json
        #[arg(long)]
        out: PathBuf,
        /// Also write each backend's answers to <out>/<name>.backend.log for replay with --backend file
        #[arg(long)]
        record: bool,
    },
    /// Score result files against ground truth
    Evaluate {
        /// Sequence directory (repeatable); optional with --gt
        #[arg(long = "seq")]
        seqs: Vec<PathBuf>,
        /// Ground-truth file; `{seq}` is replaced by the sequence name
        #[arg(long)]
        gt: Option<String>,
        /// Result file, or a directory holding <name>.txt per sequence
        #[arg(long)]
        results: PathBuf,
        /// Also write the table as CSV here
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Failure-mode analyses as CSV
    Analyze {
        #[arg(long, value_enum)]
        kind: AnalysisKind,
        #[command(flatten)]
        run: RunArgs,
        /// Result file or directory (visibility, height and gaps)
        #[arg(long)]
        results: Option<PathBuf>,
        /// Bin edges, comma separated [default: 0,0.1,...,1.0 for visibility; 0,50,...,250,inf for height]
        #[arg(long, value_delimiter = ',')]
        edges: Option<Vec<f64>>,
        /// Minimum visibility of boxes in the height analysis
        #[arg(long, default_value_t = tracktor::analysis::HEIGHT_MIN_VISIBILITY)]
        min_visibility: f64,
        /// Decimation factors of the frame-rate study
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,6,10")]
        factors: Vec<u32>,
        /// CSV output; stdout when absent
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Track with ground-truth components and report metrics
    Oracle {
        #[command(flatten)]
        run: RunArgs,
        /// Components replaced by ground truth: kill, reg, mm, reid, inter, all or none
        #[arg(long, default_value = "all")]
        oracle: String,
        /// Output directory for result files and manifests
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic sequence directory
    Synth(commands::SynthArgs),
    /// Answer backend protocol requests on stdin/stdout
    Serve {
        /// Sequence directory whose ground truth drives the gt backend
        #[arg(long)]
        seq: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        /// TOML file with a [noise] table; flags take precedence
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalysisKind {
    Visibility,
    Height,
    Gaps,
    Framerate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Track {
            run,
            oracle,
            out,
            record,
        } => commands::track(&run, &oracle, Some(&out), record, false),
        Command::Oracle { run, oracle, out } => {
            commands::track(&run, &oracle, out.as_deref(), false, true)
        }
        Command::Evaluate {
            seqs,
            gt,
            results,
            csv,
        } => commands::evaluate(&seqs, gt.as_deref(), &results, csv.as_deref()),
        Command::Analyze {
            kind,
            run,
            results,
            edges,
            min_visibility,
            factors,
            out,
        } => commands::analyze(
            kind,
            &run,
            results.as_deref(),
            edges,
            min_visibility,
            &factors,
            out.as_deref(),
        ),
        Command::Synth(args) => commands::synth(&args),
        Command::Serve {
            seq,
            backend,
            config,
        } => commands::serve(&seq, &backend, config.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<commands::Exit>() {
                Some(commands::Exit(code, _)) => ExitCode::from(*code),
                None => ExitCode::FAILURE,
            }
        }
    }
}

/// Prints a clap-style usage error and exits with status 2.
pub fn usage_error(message: &str) -> ! {
    use clap::CommandFactory;
    Cli::command()
        .error(clap::error::ErrorKind::MissingRequiredArgument, message)
        .exit()
}
