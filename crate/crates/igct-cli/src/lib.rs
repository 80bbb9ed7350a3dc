//! Command-line front end: `igct <command> --config <path> [flags]`.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 numeric divergence,
//! 4 checkpoint schema mismatch, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use igct::checkpoint::Algorithm;
use igct::Real;

pub mod commands;
pub mod config;
pub mod io;
pub mod plot;

use commands::{InversionMethod, ModelSource, PlotKind};

#[derive(Parser)]
#[command(
    name = "igct",
    about = "Invertible guided consistency training on Gaussian-mixture worlds",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Igct,
    CfgEdm,
    GuidedCd,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Igct => Algorithm::Igct,
            AlgorithmArg::CfgEdm => Algorithm::CfgEdm,
            AlgorithmArg::GuidedCd => Algorithm::GuidedCd,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Igct,
    Ddim,
}

impl From<MethodArg> for InversionMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Igct => InversionMethod::Igct,
            MethodArg::Ddim => InversionMethod::Ddim,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKindArg {
    Histogram,
    Trajectory,
    Sweep,
}

#[derive(Args)]
struct SourceArgs {
    /// Trained checkpoint to load.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Use the analytic world instead of a trained model (needs --config).
    #[arg(long)]
    oracle: bool,
    /// Run config (world definition for --oracle, eval defaults).
    #[arg(long)]
    config: Option<PathBuf>,
}

impl SourceArgs {
    fn load(&self) -> igct::Result<ModelSource> {
        let oracle_cfg = if self.oracle { self.config.as_deref() } else { None };
        ModelSource::load(self.checkpoint.as_deref(), oracle_cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one algorithm from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        algorithm: AlgorithmArg,
        /// Override the config's output_dir (IGCT_OUTPUT_DIR beats both).
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Draw samples from a trained model or the oracle.
    Sample {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        class: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        w: Real,
        /// Solver/network evaluations (default: 1 for consistency models,
        /// 18 for Heun sampling).
        #[arg(long)]
        nfe: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Intermediate level for 2-step consistency sampling.
        #[arg(long, default_value_t = 0.8)]
        t_mid: Real,
        #[arg(long, default_value_t = 7.0)]
        rho: Real,
        #[arg(long)]
        out: PathBuf,
        /// Also dump Heun trajectories (cfg-edm / oracle only).
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Map samples to their noise latents.
    Invert {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long, default_value_t = 18)]
        nfe: usize,
        #[arg(long, default_value_t = 7.0)]
        rho: Real,
        #[arg(long)]
        out: PathBuf,
    },
    /// Class editing: invert under the source class, regenerate under the
    /// target class.
    Edit {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        class_tar: usize,
        #[arg(long, default_value_t = 1.0)]
        w: Real,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long, default_value_t = 18)]
        nfe: usize,
        #[arg(long, default_value_t = 7.0)]
        rho: Real,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model across guidance strengths.
    Eval {
        #[command(flatten)]
        source: SourceArgs,
        /// Comma-separated guidance strengths (default from config/eval).
        #[arg(long, value_delimiter = ',')]
        w: Vec<Real>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        nfe: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Row key in the report CSV (default: checkpoint file stem).
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Render CSV outputs as SVG figures.
    Plot {
        #[arg(long, value_enum)]
        kind: PlotKindArg,
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 80)]
        bins: usize,
        #[arg(long, default_value = "w1")]
        metric: String,
        #[arg(long, default_value_t = 200)]
        max_traj: usize,
    },
}

fn exit_code_for(err: &igct::Error) -> u8 {
    match err {
        igct::Error::InvalidConfig { .. }
        | igct::Error::Json(_)
        | igct::Error::EmptyInput(_)
        | igct::Error::ClassOutOfRange { .. } => 2,
        igct::Error::NonFinite { .. } => 3,
        igct::Error::SchemaMismatch { .. } => 4,
        _ => 1,
    }
}

fn dispatch(cli: Cli) -> igct::Result<()> {
    match cli.command {
        Command::Train {
            config,
            algorithm,
            output_dir,
        } => commands::cmd_train(&config, algorithm.into(), output_dir.as_deref()),
        Command::Sample {
            source,
            class,
            w,
            nfe,
            count,
            seed,
            t_mid,
            rho,
            out,
            trajectories,
        } => {
            let source = source.load()?;
            commands::cmd_sample(
                &source,
                class,
                w,
                nfe,
                count,
                seed,
                t_mid,
                rho,
                &out,
                trajectories.as_deref(),
            )
        }
        Command::Invert {
            source,
            input,
            method,
            nfe,
            rho,
            out,
        } => {
            let source = source.load()?;
            commands::cmd_invert(&source, &input, method.into(), nfe, rho, &out)
        }
        Command::Edit {
            source,
            input,
            class_tar,
            w,
            method,
            nfe,
            rho,
            out,
        } => {
            let source = source.load()?;
            commands::cmd_edit(&source, &input, class_tar, w, method.into(), nfe, rho, &out)
        }
        Command::Eval {
            source,
            w,
            count,
            nfe,
            seed,
            run_id,
            out_dir,
        } => {
            let eval_cfg = match &source.config {
                Some(path) => config::load(path)?.eval,
                None => config::EvalConfig::default(),
            };
            let run_id = run_id.unwrap_or_else(|| {
                source
                    .checkpoint
                    .as_deref()
                    .and_then(|p| p.file_stem())
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "oracle".into())
            });
            let loaded = source.load()?;
            let w_list = if w.is_empty() { eval_cfg.w_list.clone() } else { w };
            let count = count.unwrap_or(eval_cfg.n_samples);
            commands::cmd_eval(&loaded, &eval_cfg, &w_list, count, nfe, seed, &run_id, &out_dir)
        }
        Command::Plot {
            kind,
            input,
            out,
            bins,
            metric,
            max_traj,
        } => {
            let kind = match kind {
                PlotKindArg::Histogram => PlotKind::Histogram,
                PlotKindArg::Trajectory => PlotKind::Trajectory,
                PlotKindArg::Sweep => PlotKind::Sweep,
            };
            commands::cmd_plot(kind, &input, &out, bins, &metric, max_traj)
        }
    }
}

/// Parse `args` (without the binary name) and run. Returns the process exit
/// code; errors print to stderr.
pub fn run<I>(args: I) -> ExitCode
where
    I: IntoIterator,
    I::Item: Into<std::ffi::OsString> + Clone,
{
    let argv = std::iter::once(std::ffi::OsString::from("igct"))
        .chain(args.into_iter().map(Into::into));
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with success status.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
