//! `segrefine`: per-segment CNN refinement of degraded video.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use segrefine::commands::{
    cmd_eval, cmd_info, cmd_pipeline, cmd_refine, cmd_train, CmdError, EvalArgs, InfoArgs,
    LogLevel, PipelineArgs, RefineArgs, TrainArgs,
};
use segrefine::config::{parse_mode, parse_range, FileConfig};
use segrefine_core::model::DEFAULT_HIDDEN_WIDTH;
use segrefine_core::segment::DEFAULT_RHO;

#[derive(Parser)]
#[command(name = "segrefine", version, about = "Per-segment CNN video refinement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one parameter set per segment and write a sidecar stream
    Train(TrainOpts),
    /// Apply sidecar parameters to a degraded video
    Refine(RefineOpts),
    /// Compare degraded and refined videos against the original
    Eval(EvalOpts),
    /// Codec round trip, training, refinement, and evaluation in one go
    Pipeline(PipelineOpts),
    /// Print sidecar header fields and coverage
    Info(InfoOpts),
}

/// Knobs shared by train and pipeline. All optional here; defaults are
/// filled after merging with the config file.
#[derive(Args, Clone)]
struct TrainKnobs {
    /// Segment length in frames
    #[arg(long)]
    rho: Option<usize>,
    /// Training passes over each segment
    #[arg(long)]
    epochs: Option<usize>,
    /// SGD learning rate
    #[arg(long)]
    lr: Option<f32>,
    /// direct or residual
    #[arg(long)]
    mode: Option<String>,
    /// Hidden channel count of the refiner
    #[arg(long)]
    hidden_width: Option<usize>,
    /// Master RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for segment training; 0 = one per core
    #[arg(long)]
    jobs: Option<usize>,
}

impl TrainKnobs {
    fn resolve(
        &self,
        cfg: &FileConfig,
        original: PathBuf,
        degraded: PathBuf,
        sidecar: PathBuf,
        report: Option<PathBuf>,
    ) -> Result<TrainArgs, CmdError> {
        let usage = CmdError::Usage;
        let mode_str = cfg
            .resolve_opt(self.mode.clone(), "mode")
            .unwrap_or_else(|| "residual".to_string());
        Ok(TrainArgs {
            original,
            degraded,
            sidecar,
            report,
            rho: cfg.resolve(self.rho, "rho", DEFAULT_RHO).map_err(usage)?,
            epochs: cfg.resolve(self.epochs, "epochs", 10).map_err(usage)?,
            learning_rate: cfg.resolve(self.lr, "lr", 1e-3).map_err(usage)?,
            mode: parse_mode(&mode_str).map_err(usage)?,
            hidden_width: cfg
                .resolve(self.hidden_width, "hidden-width", DEFAULT_HIDDEN_WIDTH)
                .map_err(usage)?,
            seed: cfg.resolve(self.seed, "seed", 0).map_err(usage)?,
            jobs: cfg.resolve(self.jobs, "jobs", 0).map_err(usage)?,
        })
    }
}

#[derive(Args)]
struct TrainOpts {
    /// Pristine source video (.y4m or PNG directory)
    #[arg(long)]
    original: Option<PathBuf>,
    /// Degraded video to learn a correction for
    #[arg(long)]
    degraded: Option<PathBuf>,
    /// Output .srf parameter stream
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Optional per-segment training report
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    knobs: TrainKnobs,
    /// key=value config file; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RefineOpts {
    /// Degraded .y4m video to refine
    #[arg(long)]
    degraded: Option<PathBuf>,
    /// Sidecar parameter stream
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Output .y4m path
    #[arg(long)]
    out: Option<PathBuf>,
    /// 1-based inclusive frame range A:B
    #[arg(long)]
    range: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalOpts {
    #[arg(long)]
    original: Option<PathBuf>,
    #[arg(long)]
    degraded: Option<PathBuf>,
    /// Refined video to score
    #[arg(long)]
    refined: Option<PathBuf>,
    /// Sidecar, for rate overhead and per-segment summaries
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Report file; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineOpts {
    #[arg(long)]
    original: Option<PathBuf>,
    /// Directory for all pipeline outputs
    #[arg(long)]
    out: Option<PathBuf>,
    /// Shell template with {input}, {output}, {encoded} placeholders
    #[arg(long)]
    codec_cmd: Option<String>,
    #[command(flatten)]
    knobs: TrainKnobs,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct InfoOpts {
    #[arg(long)]
    sidecar: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn load_config(path: &Option<PathBuf>) -> Result<FileConfig, CmdError> {
    match path {
        Some(p) => FileConfig::load(p).map_err(|e| CmdError::Io(format!("{}: {e}", p.display()))),
        None => Ok(FileConfig::default()),
    }
}

fn require(path: Option<PathBuf>, flag: &str) -> Result<PathBuf, CmdError> {
    path.ok_or_else(|| CmdError::Usage(format!("--{flag} is required")))
}

fn run(cli: Cli, log: LogLevel) -> Result<(), CmdError> {
    match cli.command {
        Command::Train(opts) => {
            let cfg = load_config(&opts.config)?;
            let args = opts.knobs.resolve(
                &cfg,
                require(cfg.resolve_path(opts.original, "original"), "original")?,
                require(cfg.resolve_path(opts.degraded, "degraded"), "degraded")?,
                require(cfg.resolve_path(opts.sidecar, "sidecar"), "sidecar")?,
                cfg.resolve_path(opts.report, "report"),
            )?;
            cmd_train(&args, log)
        }
        Command::Refine(opts) => {
            let cfg = load_config(&opts.config)?;
            let range = match cfg.resolve_opt(opts.range, "range") {
                Some(s) => Some(parse_range(&s).map_err(CmdError::Usage)?),
                None => None,
            };
            cmd_refine(
                &RefineArgs {
                    degraded: require(cfg.resolve_path(opts.degraded, "degraded"), "degraded")?,
                    sidecar: require(cfg.resolve_path(opts.sidecar, "sidecar"), "sidecar")?,
                    out: require(cfg.resolve_path(opts.out, "out"), "out")?,
                    range,
                },
                log,
            )
        }
        Command::Eval(opts) => {
            let cfg = load_config(&opts.config)?;
            cmd_eval(
                &EvalArgs {
                    original: require(cfg.resolve_path(opts.original, "original"), "original")?,
                    degraded: require(cfg.resolve_path(opts.degraded, "degraded"), "degraded")?,
                    refined: require(cfg.resolve_path(opts.refined, "refined"), "refined")?,
                    sidecar: cfg.resolve_path(opts.sidecar, "sidecar"),
                    out: cfg.resolve_path(opts.out, "out"),
                },
                log,
            )
            .map(|_| ())
        }
        Command::Pipeline(opts) => {
            let cfg = load_config(&opts.config)?;
            let original = require(cfg.resolve_path(opts.original, "original"), "original")?;
            let out_dir = require(cfg.resolve_path(opts.out, "out"), "out")?;
            let codec_cmd = cfg
                .resolve_opt(opts.codec_cmd, "codec-cmd")
                .ok_or_else(|| CmdError::Usage("--codec-cmd is required".into()))?;
            // train paths are filled in by the pipeline itself
            let train = opts.knobs.resolve(
                &cfg,
                original.clone(),
                original.clone(),
                out_dir.join("params.srf"),
                None,
            )?;
            cmd_pipeline(&PipelineArgs { original, out_dir, codec_cmd, train }, log)
        }
        Command::Info(opts) => {
            let cfg = load_config(&opts.config)?;
            cmd_info(&InfoArgs {
                sidecar: require(cfg.resolve_path(opts.sidecar, "sidecar"), "sidecar")?,
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let log = LogLevel::from_env();
    match run(cli, log) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("segrefine: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
