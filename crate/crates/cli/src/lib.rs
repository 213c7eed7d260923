//! File formats and commands behind the `evpan` binary.
//!
//! Exit codes: 0 on success, 1 for invalid input, usage errors and failed
//! checks, 2 for I/O failures. `EVPAN_THREADS` caps the worker pool.

pub mod error;
pub mod evaluate;
pub mod fuse;
pub mod gradcheck;
pub mod instance_set;
pub mod report;
pub mod synth;
pub mod tensor;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use evpan_core::evidential::Activation;
use evpan_core::losses::LossKind;
use evpan_core::metrics::DEFAULT_BINS;
use evpan_core::synth::{PredictorMode, SceneConfig};

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "evpan", version, about = "Evidential panoptic segmentation: evaluation, fusion, gradient checks, synthetic data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score predicted panoptic + uncertainty files against ground truth.
    Evaluate {
        pred_dir: PathBuf,
        gt_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        /// JSON file `{"num_classes": C, "stuff": [...], "thing": [...]}`.
        #[arg(long)]
        classes: PathBuf,
        /// Report destination; printed to stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        per_image: bool,
    },
    /// Fuse semantic logits with an instance set into panoptic + uncertainty files.
    Fuse {
        semantic_logits: PathBuf,
        instance_set: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        stuff: Vec<u32>,
        #[arg(long, value_delimiter = ',')]
        thing: Vec<u32>,
        /// Output prefix.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic loss gradients with central finite differences.
    Gradcheck {
        #[arg(long)]
        loss: LossKind,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "4x4x3", value_parser = gradcheck::parse_shape)]
        shape: (usize, usize, usize),
        /// Maximum relative error; 1e-5, or 1e-4 for sorting-based losses.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long, default_value = "softplus")]
        activation: Activation,
        /// Training iteration used by the annealed KL weight of `total`.
        #[arg(long, default_value_t = 30)]
        iteration: u64,
        #[arg(long, default_value_t = 1)]
        iters_per_epoch: u64,
    },
    /// Generate seeded synthetic scenes and predictor outputs.
    Synth {
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 3)]
        n_stuff: usize,
        #[arg(long, default_value_t = 2)]
        n_thing: usize,
        #[arg(long, default_value_t = 4)]
        n_instances: usize,
        #[arg(long, default_value_t = 0.0)]
        noise_level: f64,
        #[arg(long, default_value_t = 0.9)]
        target_confidence: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "fixed")]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum Mode {
    Fixed,
    Calibrated,
}

impl From<Mode> for PredictorMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Fixed => PredictorMode::Fixed,
            Mode::Calibrated => PredictorMode::Calibrated,
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("EVPAN_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Validation(format!("EVPAN_THREADS='{v}' is not a positive integer")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError::Validation(format!("thread pool: {e}")))
}

/// Runs a parsed command, writing human-readable output to `out`.
pub fn execute(command: Command, out: &mut impl std::io::Write) -> Result<(), CliError> {
    let pool = thread_pool()?;
    let stdout_err = |e| CliError::io(std::path::Path::new("<stdout>"), e);
    match command {
        Command::Evaluate { pred_dir, gt_dir, bins, classes, report, per_image } => {
            let opts = evaluate::EvaluateOptions { pred_dir, gt_dir, classes, bins, per_image };
            let file = pool.install(|| evaluate::evaluate(&opts))?;
            match report {
                Some(path) => {
                    report::write_report(&path, &file)?;
                    let o = &file.metrics.overall;
                    writeln!(
                        out,
                        "images {}  PQ {:.4}  SQ {:.4}  RQ {:.4}  pECE {:.4}  uPQ {:.4}",
                        file.metrics.images, o.pq, o.sq, o.rq, o.pece, o.upq
                    )
                    .map_err(stdout_err)?;
                }
                None => writeln!(out, "{}", file.to_json()?).map_err(stdout_err)?,
            }
        }
        Command::Fuse { semantic_logits, instance_set, stuff, thing, out: prefix } => {
            let opts = fuse::FuseOptions { semantic: semantic_logits, instances: instance_set, stuff, thing, out: prefix };
            let r = fuse::fuse_files(&opts)?;
            writeln!(out, "fused {} instances into {}", r.instances_kept.len(), opts.out.display()).map_err(stdout_err)?;
        }
        Command::Gradcheck { loss, seed, shape, tol, activation, iteration, iters_per_epoch } => {
            let opts = gradcheck::GradcheckOptions { loss, seed, shape, tol, activation, iteration, iters_per_epoch };
            let outcome = gradcheck::gradcheck(&opts)?;
            write!(out, "{}", gradcheck::format_table(&opts, &outcome)).map_err(stdout_err)?;
            if !outcome.passed {
                return Err(CliError::Validation(format!(
                    "gradient check failed: max relative error {:.3e} not below {:.1e}",
                    outcome.report.max_rel_error, outcome.tolerance
                )));
            }
        }
        Command::Synth {
            height,
            width,
            n_stuff,
            n_thing,
            n_instances,
            noise_level,
            target_confidence,
            seed,
            mode,
            out: dir,
            count,
        } => {
            let cfg = SceneConfig {
                height,
                width,
                n_stuff,
                n_thing,
                n_instances,
                noise_level,
                target_confidence,
                seed,
                mode: mode.into(),
            };
            let m = pool.install(|| synth::synthesize(&dir, &cfg, count))?;
            writeln!(out, "wrote {} scenes to {}", m.scenes.len(), dir.display()).map_err(stdout_err)?;
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, &mut std::io::stdout()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
