//! Command implementations behind the CLI: train, refine, eval,
//! pipeline, info. Each returns a [`CmdError`] that maps to a stable
//! process exit code.

use std::fs::File;
use std::io::{BufReader, BufWriter, Seek};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use segrefine_core::metrics::evaluate;
use segrefine_core::model::{
    forward_refine, parameter_count, RefineMode, RefinerTopology,
};
use segrefine_core::nn::Tensor;
use segrefine_core::segment::{partition, ParameterArray, SegmentationConfig};
use segrefine_core::train::{
    make_training_examples, segment_seed, train_segment, TrainingConfig, TrainingReport,
};
use segrefine_core::CoreError;
use thiserror::Error;

use crate::report::{format_quality_report, format_training_reports};
use crate::sidecar::{
    self, read_info, read_segment_block, read_sidecar, write_sidecar, SidecarError,
};
use crate::y4m::{read_y4m, FrameSequence, VideoIoError, Y4mReader, Y4mWriter};

#[derive(Debug, Error)]
pub enum CmdError {
    #[error("invalid arguments: {0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("codec command failed: {0}")]
    Child(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Usage(_) => 2,
            CmdError::Io(_) => 3,
            CmdError::Numeric(_) => 4,
            CmdError::Child(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, CmdError>;

impl From<VideoIoError> for CmdError {
    fn from(e: VideoIoError) -> Self {
        match e {
            VideoIoError::InvalidArgument(m) => CmdError::Usage(m),
            VideoIoError::Unsupported(m) => CmdError::Usage(m),
            VideoIoError::Format(m) => CmdError::Io(m),
            VideoIoError::Io(e) => CmdError::Io(e.to_string()),
        }
    }
}

impl From<SidecarError> for CmdError {
    fn from(e: SidecarError) -> Self {
        match e {
            SidecarError::InvalidArgument(m) => CmdError::Usage(m),
            SidecarError::OutOfRange(m) => CmdError::Usage(m),
            other => CmdError::Io(other.to_string()),
        }
    }
}

impl From<CoreError> for CmdError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NumericFailure { .. } => CmdError::Numeric(e.to_string()),
            other => CmdError::Usage(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CmdError {
    CmdError::Io(format!("{}: {e}", path.display()))
}

/// Verbosity from SEGREFINE_LOG: quiet, info (default), debug.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LogLevel {
    Quiet,
    Info,
    Debug,
}

impl LogLevel {
    pub fn from_env() -> Self {
        match std::env::var("SEGREFINE_LOG").as_deref() {
            Ok("quiet") => LogLevel::Quiet,
            Ok("debug") => LogLevel::Debug,
            _ => LogLevel::Info,
        }
    }
}

macro_rules! log_at {
    ($level:expr, $min:expr, $($arg:tt)*) => {
        if $level >= $min {
            eprintln!($($arg)*);
        }
    };
}

/// A `.y4m` file or a directory of numbered PNG frames.
pub fn read_video(path: &Path) -> Result<FrameSequence> {
    if path.is_dir() {
        return Ok(crate::imgseq::read_image_dir(path)?);
    }
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    Ok(read_y4m(BufReader::new(file))?)
}

fn check_geometry(original: &FrameSequence, degraded: &FrameSequence) -> Result<()> {
    if original.frames.len() != degraded.frames.len() {
        return Err(CmdError::Usage(format!(
            "frame counts differ: original {}, degraded {}",
            original.frames.len(),
            degraded.frames.len()
        )));
    }
    let (a, b) = (original.frames[0].shape(), degraded.frames[0].shape());
    if a != b {
        return Err(CmdError::Usage(format!(
            "frame geometry differs: original {a:?}, degraded {b:?}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub original: PathBuf,
    pub degraded: PathBuf,
    pub sidecar: PathBuf,
    pub report: Option<PathBuf>,
    pub rho: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub mode: RefineMode,
    pub hidden_width: usize,
    pub seed: u64,
    pub jobs: usize,
}

/// Trains one parameter set per segment and writes the sidecar.
/// Segments are independent, so they train in parallel; per-segment
/// seeds keep the result identical to a serial run.
pub fn cmd_train(args: &TrainArgs, log: LogLevel) -> Result<()> {
    let original = read_video(&args.original)?;
    let degraded = read_video(&args.degraded)?;
    check_geometry(&original, &degraded)?;

    let seg_config =
        SegmentationConfig::new(args.rho).map_err(|e| CmdError::Usage(e.to_string()))?;
    let topology =
        RefinerTopology::standard(args.hidden_width).map_err(|e| CmdError::Usage(e.to_string()))?;
    let base_config = TrainingConfig::new(args.learning_rate, args.epochs, args.mode, args.seed, true)
        .map_err(|e| CmdError::Usage(e.to_string()))?;
    let descriptors = partition(original.frames.len(), &seg_config)
        .map_err(|e| CmdError::Usage(e.to_string()))?;
    log_at!(
        log,
        LogLevel::Info,
        "training {} segment(s) of up to {} frames, {} parameters each",
        descriptors.len(),
        seg_config.rho,
        parameter_count(&topology)
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| CmdError::Usage(format!("cannot build thread pool: {e}")))?;
    let results: Vec<Result<_>> = pool.install(|| {
        use rayon::prelude::*;
        descriptors
            .par_iter()
            .map(|desc| {
                let lo = desc.start_frame - 1;
                let hi = desc.end_frame;
                let examples = make_training_examples(
                    &original.frames[lo..hi],
                    &degraded.frames[lo..hi],
                    args.mode,
                    desc.start_frame,
                )?;
                let config = TrainingConfig {
                    seed: segment_seed(args.seed, desc.index),
                    ..base_config
                };
                let started = Instant::now();
                let (params, mut report) = train_segment(&examples, &topology, &config)?;
                report.wall_time_secs = started.elapsed().as_secs_f64();
                log_at!(
                    log,
                    LogLevel::Info,
                    "segment {} (frames {}..={}): psnr {} -> {} dB in {:.1}s",
                    desc.index,
                    desc.start_frame,
                    desc.end_frame,
                    fmt_db(report.pre_psnr_db),
                    fmt_db(report.post_psnr_db),
                    report.wall_time_secs
                );
                if log >= LogLevel::Debug {
                    for (i, loss) in report.step_losses.iter().enumerate() {
                        eprintln!("segment {} step {i} loss {loss:.8}", desc.index);
                    }
                }
                Ok((*desc, params, report))
            })
            .collect()
    });

    let mut array = ParameterArray::new(seg_config, topology.id());
    let mut reports: Vec<(usize, usize, usize, TrainingReport)> = Vec::new();
    for result in results {
        let (desc, params, report) = result?;
        array
            .append_segment(desc, params)
            .map_err(|e| CmdError::Usage(e.to_string()))?;
        reports.push((desc.index, desc.start_frame, desc.end_frame, report));
    }

    let file = File::create(&args.sidecar).map_err(|e| io_err(&args.sidecar, e))?;
    let bytes = write_sidecar(&array, &topology, args.mode, BufWriter::new(file))?;
    log_at!(
        log,
        LogLevel::Info,
        "wrote {} ({bytes} bytes, {} segments)",
        args.sidecar.display(),
        array.len()
    );
    if let Some(path) = &args.report {
        std::fs::write(path, format_training_reports(&reports)).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.2}")
    }
}

#[derive(Debug, Clone)]
pub struct RefineArgs {
    pub degraded: PathBuf,
    pub sidecar: PathBuf,
    pub out: PathBuf,
    /// 1-based inclusive frame range; None refines the whole stream.
    pub range: Option<(usize, usize)>,
}

/// Applies the per-segment parameters to the degraded stream. Frames
/// stream through one at a time and parameter blocks load on demand,
/// so memory stays bounded by one frame plus one block.
pub fn cmd_refine(args: &RefineArgs, log: LogLevel) -> Result<()> {
    let mut sidecar_file = File::open(&args.sidecar).map_err(|e| io_err(&args.sidecar, e))?;
    let info = read_info(&mut sidecar_file)?;
    let rho = info.rho as usize;

    let degraded = File::open(&args.degraded).map_err(|e| io_err(&args.degraded, e))?;
    let mut reader = Y4mReader::new(BufReader::new(degraded))?;
    let header = *reader.header();

    // last covered frame, via random access to the final block
    sidecar_file.rewind().map_err(|e| io_err(&args.sidecar, e))?;
    let (last_desc, _) = read_segment_block(&mut sidecar_file, info.segment_count as usize - 1)?;
    let covered = last_desc.end_frame;

    let (first, last) = match args.range {
        Some((a, b)) => {
            if b > covered {
                return Err(CmdError::Usage(format!(
                    "range end {b} exceeds sidecar coverage of {covered} frames"
                )));
            }
            (a, b)
        }
        None => (1, covered),
    };

    let out = File::create(&args.out).map_err(|e| io_err(&args.out, e))?;
    let mut writer = Y4mWriter::new(
        BufWriter::new(out),
        header.width,
        header.height,
        header.frame_rate,
    )?;

    let mut loaded: Option<(usize, segrefine_core::model::ParameterSet)> = None;
    let mut t = 0usize;
    let mut written = 0usize;
    while let Some(frame) = reader.next_frame()? {
        t += 1;
        if t > last {
            break;
        }
        if t < first {
            continue;
        }
        let k = (t - 1) / rho;
        if loaded.as_ref().map(|(idx, _)| *idx) != Some(k) {
            sidecar_file.rewind().map_err(|e| io_err(&args.sidecar, e))?;
            let (desc, params) = read_segment_block(&mut sidecar_file, k)?;
            if !desc.contains(t) {
                return Err(CmdError::Io(format!(
                    "sidecar block {k} covers {}..={}, not frame {t}",
                    desc.start_frame, desc.end_frame
                )));
            }
            log_at!(log, LogLevel::Debug, "loaded parameters for segment {k}");
            loaded = Some((k, params));
        }
        let (_, params) = loaded.as_ref().unwrap();
        let refined = forward_refine(&info.topology, params, &frame, info.mode)?;
        writer.write_frame(&refined)?;
        written += 1;
    }

    if args.range.is_none() && t != covered {
        return Err(CmdError::Usage(format!(
            "video has {t} frames but sidecar covers {covered}"
        )));
    }
    if written == 0 {
        return Err(CmdError::Usage(format!(
            "range {first}:{last} selects no frames of a {t}-frame video"
        )));
    }
    log_at!(
        log,
        LogLevel::Info,
        "refined {written} frame(s) -> {}",
        args.out.display()
    );
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub original: PathBuf,
    pub degraded: PathBuf,
    pub refined: PathBuf,
    pub sidecar: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Writes the per-frame quality report; returns it for callers.
pub fn cmd_eval(args: &EvalArgs, log: LogLevel) -> Result<segrefine_core::metrics::QualityReport> {
    let original = read_video(&args.original)?;
    let degraded = read_video(&args.degraded)?;
    let refined = read_video(&args.refined)?;
    check_geometry(&original, &degraded)?;
    check_geometry(&original, &refined)?;

    let (sidecar_bytes, rho) = match &args.sidecar {
        Some(path) => {
            let mut file = File::open(path).map_err(|e| io_err(path, e))?;
            let bytes = file.metadata().map_err(|e| io_err(path, e))?.len();
            let info = read_info(&mut file)?;
            (bytes, Some(info.rho as usize))
        }
        None => (0, None),
    };

    let report = evaluate(
        &original.frames,
        &degraded.frames,
        &refined.frames,
        sidecar_bytes,
        rho,
    )?;
    let text = format_quality_report(&report);
    match &args.out {
        Some(path) => std::fs::write(path, &text).map_err(|e| io_err(path, e))?,
        None => print!("{text}"),
    }
    log_at!(
        log,
        LogLevel::Info,
        "mean psnr {} -> {} dB, ms-ssim {:.4} -> {:.4}",
        fmt_db(report.mean_psnr_degraded),
        fmt_db(report.mean_psnr_refined),
        report.mean_ms_ssim_degraded,
        report.mean_ms_ssim_refined
    );
    Ok(report)
}

fn is_executable_failure(status: &std::process::ExitStatus) -> String {
    match status.code() {
        Some(code) => format!("exit status {code}"),
        None => "terminated by signal".to_string(),
    }
}

#[derive(Debug, Clone)]
pub struct PipelineArgs {
    pub original: PathBuf,
    pub out_dir: PathBuf,
    /// Shell template with {input}, {output}, {encoded} placeholders.
    pub codec_cmd: String,
    pub train: TrainArgs,
}

/// Runs the full loop: codec round trip, per-segment training,
/// refinement, and evaluation, reporting the combined rate.
pub fn cmd_pipeline(args: &PipelineArgs, log: LogLevel) -> Result<()> {
    std::fs::create_dir_all(&args.out_dir).map_err(|e| io_err(&args.out_dir, e))?;
    let decoded = args.out_dir.join("decoded.y4m");
    let encoded = args.out_dir.join("encoded.bin");

    let command = args
        .codec_cmd
        .replace("{input}", &args.original.display().to_string())
        .replace("{output}", &decoded.display().to_string())
        .replace("{encoded}", &encoded.display().to_string());
    log_at!(log, LogLevel::Info, "running codec: {command}");
    let output = Command::new("sh")
        .arg("-c")
        .arg(&command)
        .output()
        .map_err(|e| CmdError::Child(format!("cannot spawn sh: {e}")))?;
    if !output.status.success() {
        let stderr = String::from_utf8_lossy(&output.stderr);
        return Err(CmdError::Child(format!(
            "{} ({})",
            is_executable_failure(&output.status),
            stderr.trim()
        )));
    }
    if !decoded.exists() {
        return Err(CmdError::Child(format!(
            "codec did not produce {}",
            decoded.display()
        )));
    }
    let encoded_size = std::fs::metadata(&encoded).map(|m| m.len()).unwrap_or(0);

    let mut train = args.train.clone();
    train.original = args.original.clone();
    train.degraded = decoded.clone();
    train.sidecar = args.out_dir.join("params.srf");
    train.report = Some(args.out_dir.join("training.txt"));
    cmd_train(&train, log)?;

    let refined = args.out_dir.join("refined.y4m");
    cmd_refine(
        &RefineArgs {
            degraded: decoded.clone(),
            sidecar: train.sidecar.clone(),
            out: refined.clone(),
            range: None,
        },
        log,
    )?;

    let report = cmd_eval(
        &EvalArgs {
            original: args.original.clone(),
            degraded: decoded,
            refined,
            sidecar: Some(train.sidecar.clone()),
            out: Some(args.out_dir.join("report.txt")),
        },
        log,
    )?;

    let original_seq = read_video(&args.original)?;
    let (_, h, w) = original_seq.frames[0].shape();
    let sidecar_size = std::fs::metadata(&train.sidecar)
        .map(|m| m.len())
        .map_err(|e| io_err(&train.sidecar, e))?;
    let encoded_bpp =
        sidecar::rate_overhead(encoded_size, original_seq.frames.len(), w, h)?;
    let total_bpp =
        sidecar::rate_overhead(encoded_size + sidecar_size, original_seq.frames.len(), w, h)?;
    println!("encoded_bytes={encoded_size}");
    println!("sidecar_bytes={sidecar_size}");
    println!("encoded_bpp={encoded_bpp:.6}");
    println!("sidecar_bpp={:.6}", report.sidecar_bpp);
    println!("total_bpp={total_bpp:.6}");
    Ok(())
}

#[derive(Debug, Clone)]
pub struct InfoArgs {
    pub sidecar: PathBuf,
}

/// Prints header fields and coverage of a sidecar stream.
pub fn cmd_info(args: &InfoArgs) -> Result<()> {
    let mut file = File::open(&args.sidecar).map_err(|e| io_err(&args.sidecar, e))?;
    let size = file.metadata().map_err(|e| io_err(&args.sidecar, e))?.len();
    let info = read_info(&mut file)?;
    file.rewind().map_err(|e| io_err(&args.sidecar, e))?;
    let (last, _) = read_segment_block(&mut file, info.segment_count as usize - 1)?;

    println!("version={}", info.version);
    println!("rho={}", info.rho);
    println!(
        "mode={}",
        match info.mode {
            RefineMode::Direct => "direct",
            RefineMode::Residual => "residual",
        }
    );
    println!("layers={}", info.topology.layers().len());
    for (i, spec) in info.topology.layers().iter().enumerate() {
        println!(
            "layer{}={}x{}x{}x{}",
            i, spec.out_channels, spec.in_channels, spec.kernel, spec.kernel
        );
    }
    println!("parameters_per_segment={}", parameter_count(&info.topology));
    println!("segments={}", info.segment_count);
    println!("frames_covered={}", last.end_frame);
    println!("block_bytes={}", info.block_len());
    println!("total_bytes={size}");
    Ok(())
}

/// Refines an in-memory sequence against a sidecar byte stream.
/// Shared by tests that want the library path without file juggling.
pub fn refine_frames(
    frames: &[Tensor],
    sidecar_bytes: &[u8],
) -> Result<Vec<Tensor>> {
    let (array, topology, mode) = read_sidecar(sidecar_bytes)?;
    let mut out = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        let (_, params) = array.lookup(i + 1).map_err(|e| CmdError::Usage(e.to_string()))?;
        out.push(forward_refine(&topology, params, frame, mode)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_exit_codes_are_stable() {
        assert_eq!(CmdError::Usage(String::new()).exit_code(), 2);
        assert_eq!(CmdError::Io(String::new()).exit_code(), 3);
        assert_eq!(CmdError::Numeric(String::new()).exit_code(), 4);
        assert_eq!(CmdError::Child(String::new()).exit_code(), 5);
    }

    #[test]
    fn video_io_error_mapping() {
        assert_eq!(CmdError::from(VideoIoError::InvalidArgument("x".into())).exit_code(), 2);
        assert_eq!(CmdError::from(VideoIoError::Format("x".into())).exit_code(), 3);
        assert_eq!(
            CmdError::from(CoreError::NumericFailure { step: None, message: "x".into() })
                .exit_code(),
            4
        );
    }

    #[test]
    fn missing_video_is_an_io_error() {
        let err = read_video(Path::new("/nonexistent/video.y4m")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
