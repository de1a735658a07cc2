//! `deformreg`: phantom generation, DRR rendering, registration, training,
//! evaluation and gradient verification from one binary.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation error, 3 numerical
//! failure, 4 I/O error.

mod commands;
mod config;
mod manifest;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "deformreg",
    about = "2D/3D deformable image registration toolkit",
    version
)]
struct Cli {
    /// Worker threads (falls back to DEFORMREG_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Optional key = value config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for all randomness in this command.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the 10-phase respiratory phantom with ground-truth fields.
    Phantom {
        #[command(flatten)]
        common: CommonOpts,
        /// Grid size (isotropic cube).
        #[arg(long)]
        size: Option<usize>,
        /// Peak superior-inferior amplitude in voxels.
        #[arg(long)]
        a_si: Option<f64>,
        /// Peak anteroposterior amplitude in voxels.
        #[arg(long)]
        a_ap: Option<f64>,
        /// Validate that the grid size suits a U-Net with this many levels.
        #[arg(long)]
        train_levels: Option<usize>,
    },
    /// Render the front-view DRR of a volume (PGM + lossless raw).
    Drr {
        #[command(flatten)]
        common: CommonOpts,
        /// Input volume header (.mhd).
        #[arg(long)]
        volume: PathBuf,
    },
    /// Register a source volume to a target (mode-dependent inputs).
    Register {
        #[command(flatten)]
        common: CommonOpts,
        /// direct | unet | rigid | 2ddf
        #[arg(long)]
        mode: String,
        /// Source volume header (.mhd).
        #[arg(long)]
        source: PathBuf,
        /// Source organ labels; when given, the solved transform also warps
        /// them and writes labels_def.mhd for DSC evaluation.
        #[arg(long)]
        source_labels: Option<PathBuf>,
        /// Target DRR image header (.mhd; 2D).
        #[arg(long)]
        target_drr: Option<PathBuf>,
        /// Ground-truth target volume (volume-supervised direct mode).
        #[arg(long)]
        target_volume: Option<PathBuf>,
        /// Ground-truth field header (enables the supervised field term).
        #[arg(long)]
        target_field: Option<PathBuf>,
        /// Trained checkpoint (unet mode).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// DRR packing for unet mode: extreme-planes | filled-halves.
        #[arg(long)]
        pack_mode: Option<String>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Nelder-Mead restarts (rigid mode).
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// Train the U-Net displacement generator on phantom directories.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated phantom output directories.
        #[arg(long)]
        data: String,
        /// Comma-separated target phases (default all of 10..=90).
        #[arg(long)]
        phases: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        /// U-Net levels.
        #[arg(long)]
        levels: Option<usize>,
        /// Comma-separated encoder widths (one per level).
        #[arg(long)]
        widths: Option<String>,
        /// Write a checkpoint every N epochs (0 = only the final one).
        #[arg(long)]
        checkpoint_every: Option<usize>,
        /// DRR packing: extreme-planes | filled-halves.
        #[arg(long)]
        pack_mode: Option<String>,
        /// Resume from a checkpoint written by a previous run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Tabulate MAE and per-organ DSC for one or more methods.
    Evaluate {
        #[command(flatten)]
        common: CommonOpts,
        /// Ground truth cases: vol.mhd:labels.mhd[,vol.mhd:labels.mhd...]
        #[arg(long)]
        gt: String,
        /// Method columns: name=vol.mhd:labels.mhd[,...]; repeatable.
        #[arg(long = "method")]
        methods: Vec<String>,
        /// Restrict MAE to a body mask derived from the ground truth.
        #[arg(long, default_value_t = false)]
        masked: bool,
    },
    /// Run the finite-difference gradient suite; nonzero exit on failure.
    Gradcheck {
        #[arg(long)]
        seed: Option<u64>,
        /// Optionally write the per-check lines to this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };

    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("DEFORMREG_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0);
    if threads > 0 {
        // Ignore failure: the global pool can only be built once.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    let result = match cli.command {
        Command::Phantom {
            common,
            size,
            a_si,
            a_ap,
            train_levels,
        } => commands::phantom(common, size, a_si, a_ap, train_levels),
        Command::Drr { common, volume } => commands::drr(common, volume),
        Command::Register {
            common,
            mode,
            source,
            source_labels,
            target_drr,
            target_volume,
            target_field,
            checkpoint,
            pack_mode,
            lambda,
            gamma,
            steps,
            lr,
            restarts,
        } => commands::register(commands::RegisterArgs {
            common,
            mode,
            source,
            source_labels,
            target_drr,
            target_volume,
            target_field,
            checkpoint,
            pack_mode,
            lambda,
            gamma,
            steps,
            lr,
            restarts,
        }),
        Command::Train {
            common,
            data,
            phases,
            epochs,
            batch,
            lr,
            lambda,
            gamma,
            levels,
            widths,
            checkpoint_every,
            pack_mode,
            resume,
        } => commands::train(commands::TrainArgs {
            common,
            data,
            phases,
            epochs,
            batch,
            lr,
            lambda,
            gamma,
            levels,
            widths,
            checkpoint_every,
            pack_mode,
            resume,
        }),
        Command::Evaluate {
            common,
            gt,
            methods,
            masked,
        } => commands::evaluate(common, gt, methods, masked),
        Command::Gradcheck { seed, out } => commands::gradcheck(seed, out),
    };

    std::process::exit(match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    });
}

/// CLI-level error: usage problems exit 1, core errors map by kind.
#[derive(Debug)]
pub enum CmdError {
    Usage(String),
    Core(deformreg::Error),
}

impl CmdError {
    fn exit_code(&self) -> i32 {
        match self {
            CmdError::Usage(_) => 1,
            CmdError::Core(e) => match e {
                deformreg::Error::Io { .. } | deformreg::Error::Header { .. } => 4,
                deformreg::Error::Numerical(_) => 3,
                _ => 2,
            },
        }
    }
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CmdError::Usage(msg) => write!(f, "{msg}"),
            CmdError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<deformreg::Error> for CmdError {
    fn from(e: deformreg::Error) -> Self {
        CmdError::Core(e)
    }
}

pub type CmdResult = Result<i32, CmdError>;
