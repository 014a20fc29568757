//! `cdis` command-line front end.
//!
//! Exit codes: 0 success, 2 usage, 3 validation, 4 I/O,
//! 5 undefined AUC or objective fault.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use cdis_core::pipeline::{DEFAULT_OUT_HW, DEFAULT_TARGET_NZ};
use cdis_core::Aggregation;

pub mod commands;
pub mod render;

pub use render::{montage, render_montage, Montage, Window};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_AUC: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] cdis_core::Error),

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use cdis_core::Error as E;
        match self {
            CliError::Core(e) => match e {
                E::Io { .. } | E::CorruptFile { .. } | E::UnsupportedFormat { .. } => EXIT_IO,
                E::UndefinedAuc(_) | E::ObjectiveFault { .. } => EXIT_AUC,
                E::Validation(_)
                | E::BValueNotFound { .. }
                | E::InsufficientSlices { .. }
                | E::EmptyMask => EXIT_VALIDATION,
            },
            CliError::Json { source, .. } if source.is_io() => EXIT_IO,
            CliError::Json { .. } => EXIT_VALIDATION,
            CliError::Write { .. } => EXIT_IO,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "cdis",
    version,
    about = "Synthetic correlated diffusion imaging pipeline"
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

/// Geometry every case is standardized to.
#[derive(Debug, Clone, Args)]
pub struct Geometry {
    /// Slices kept per case.
    #[arg(long, default_value_t = DEFAULT_TARGET_NZ)]
    pub nz: usize,
    /// In-plane size after resizing.
    #[arg(long, default_value_t = DEFAULT_OUT_HW)]
    pub size: usize,
}

#[derive(Debug, Clone, Args)]
pub struct Scoring {
    #[arg(long, default_value_t = cdis_core::diffusion::DEFAULT_R2_MIN)]
    pub r2_min: f64,
    /// `mean_per_case` or `pooled`.
    #[arg(long, default_value = "mean_per_case")]
    pub aggregation: Aggregation,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate seeded phantom cases and a manifest.
    Phantom {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Overrides the seed in the spec.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Breast mask by thresholding the lowest-b image.
    Mask {
        #[arg(long)]
        dwi: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit ADC; writes `<prefix>_adc`, `_s0`, `_r2`, `_valid`.
    Adc {
        #[arg(long)]
        dwi: PathBuf,
        #[arg(long, default_value_t = cdis_core::diffusion::DEFAULT_R2_MIN)]
        r2_min: f64,
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Synthesize signals from a fit written by `adc`.
    Synth {
        #[arg(long)]
        fit_prefix: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        s_hat: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// CDIs map of one DWI volume.
    Cdis {
        #[arg(long)]
        dwi: PathBuf,
        /// Mixing config JSON (default: the tuned initial exponents).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = cdis_core::diffusion::DEFAULT_R2_MIN)]
        r2_min: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Delineation AUC of one map; prints it with four decimals.
    Auc {
        /// Scalar map, or DWI volume (scored at `--b`).
        #[arg(long)]
        modality: PathBuf,
        #[arg(long)]
        tumour: PathBuf,
        #[arg(long)]
        breast: PathBuf,
        #[arg(long, default_value_t = cdis_core::pipeline::DWI_COMPARISON_B)]
        b: f64,
        /// Also write the ROC curve as CSV.
        #[arg(long)]
        roc: Option<PathBuf>,
    },
    /// Tune the mixing exponents to maximize AUC.
    Optimize {
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Nelder-Mead config JSON (default settings when omitted).
        #[arg(long)]
        nm: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Held-out manifest scored with the initial and tuned exponents.
        #[arg(long)]
        holdout: Option<PathBuf>,
        /// Write the run summary JSON here as well as to stdout.
        #[arg(long)]
        run_manifest: Option<PathBuf>,
        #[command(flatten)]
        scoring: Scoring,
        #[command(flatten)]
        geometry: Geometry,
    },
    /// AUC of every modality; CSV report.
    Compare {
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        unopt: PathBuf,
        #[arg(long)]
        opt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        #[command(flatten)]
        scoring: Scoring,
        #[command(flatten)]
        geometry: Geometry,
    },
    /// Grayscale PNG montage of selected slices.
    Render {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Slice indices (default: first, middle, last).
        #[arg(long, value_delimiter = ',')]
        slices: Option<Vec<usize>>,
        #[arg(long, default_value = "minmax")]
        window: Window,
        /// b-value to show when the volume is a DWI (default: lowest).
        #[arg(long)]
        b: Option<f64>,
    },
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
