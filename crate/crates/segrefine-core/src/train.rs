//! Per-segment SGD training: example construction from
//! (original, degraded) frame pairs and the full-video training driver.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{CoreError, Result};
use crate::metrics::psnr;
use crate::model::{
    forward_refine, init_parameters, network_backward, network_forward_cached, ParameterSet,
    RefineMode, RefinerTopology,
};
use crate::nn::{mse_loss, sgd_step, Tensor};
use crate::segment::{partition, ParameterArray, SegmentationConfig};

#[derive(Debug, Clone, Copy)]
pub struct TrainingConfig {
    pub learning_rate: f32,
    pub epochs: usize,
    pub mode: RefineMode,
    pub seed: u64,
    pub shuffle: bool,
}

impl TrainingConfig {
    pub fn new(
        learning_rate: f32,
        epochs: usize,
        mode: RefineMode,
        seed: u64,
        shuffle: bool,
    ) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(CoreError::InvalidArgument(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if epochs == 0 {
            return Err(CoreError::InvalidArgument("epochs must be at least 1".into()));
        }
        Ok(TrainingConfig { learning_rate, epochs, mode, seed, shuffle })
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 1e-3,
            epochs: 10,
            mode: RefineMode::Residual,
            seed: 0,
            shuffle: true,
        }
    }
}

/// One (input, target) frame pair. The target is the original frame in
/// direct mode and the residual `degraded - original` in residual mode.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub input: Tensor,
    pub target: Tensor,
    pub frame_index: usize,
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub step_losses: Vec<f32>,
    pub steps: usize,
    pub pre_psnr_db: f64,
    pub post_psnr_db: f64,
    pub wall_time_secs: f64,
}

/// Per-step record handed to an optional progress observer.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f32,
}

/// Builds one training example per frame of a segment. Frame indices
/// are 1-based positions within the whole video.
pub fn make_training_examples(
    original_segment: &[Tensor],
    degraded_segment: &[Tensor],
    mode: RefineMode,
    first_frame_index: usize,
) -> Result<Vec<TrainingExample>> {
    if original_segment.len() != degraded_segment.len() {
        return Err(CoreError::InvalidArgument(format!(
            "segment lengths differ: original {}, degraded {}",
            original_segment.len(),
            degraded_segment.len()
        )));
    }
    let mut out = Vec::with_capacity(original_segment.len());
    for (i, (orig, deg)) in original_segment.iter().zip(degraded_segment).enumerate() {
        if orig.shape() != deg.shape() {
            return Err(CoreError::InvalidArgument(format!(
                "frame {} shape mismatch: original {:?}, degraded {:?}",
                first_frame_index + i,
                orig.shape(),
                deg.shape()
            )));
        }
        let target = match mode {
            RefineMode::Direct => orig.clone(),
            RefineMode::Residual => deg.sub(orig)?,
        };
        out.push(TrainingExample {
            input: deg.clone(),
            target,
            frame_index: first_frame_index + i,
        });
    }
    Ok(out)
}

/// Original frame reconstructed from an example (mode-dependent).
fn original_of(example: &TrainingExample, mode: RefineMode) -> Result<Tensor> {
    match mode {
        RefineMode::Direct => Ok(example.target.clone()),
        RefineMode::Residual => example.input.sub(&example.target),
    }
}

fn mean_refine_psnr(
    topology: &RefinerTopology,
    params: &ParameterSet,
    examples: &[TrainingExample],
    mode: RefineMode,
) -> Result<f64> {
    let mut sum = 0.0;
    for ex in examples {
        let refined = forward_refine(topology, params, &ex.input, mode)?;
        sum += psnr(&refined, &original_of(ex, mode)?)?;
    }
    Ok(sum / examples.len() as f64)
}

pub fn train_segment(
    examples: &[TrainingExample],
    topology: &RefinerTopology,
    config: &TrainingConfig,
) -> Result<(ParameterSet, TrainingReport)> {
    train_segment_with_progress(examples, topology, config, &mut |_| {})
}

/// SGD over the segment's examples, one full frame per step, for
/// `epochs` passes. Deterministic given the config seed.
pub fn train_segment_with_progress(
    examples: &[TrainingExample],
    topology: &RefinerTopology,
    config: &TrainingConfig,
    progress: &mut dyn FnMut(StepRecord),
) -> Result<(ParameterSet, TrainingReport)> {
    if examples.is_empty() {
        return Err(CoreError::InvalidArgument("segment has no training examples".into()));
    }
    let shape = examples[0].input.shape();
    for ex in examples {
        if ex.input.shape() != shape || ex.target.shape() != shape {
            return Err(CoreError::InvalidArgument(format!(
                "example for frame {} does not match segment shape {:?}",
                ex.frame_index, shape
            )));
        }
    }
    let _ = TrainingConfig::new(
        config.learning_rate,
        config.epochs,
        config.mode,
        config.seed,
        config.shuffle,
    )?;

    let mut params = init_parameters(topology, config.mode, config.seed);
    let pre_psnr_db = mean_refine_psnr(topology, &params, examples, config.mode)?;

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut step_losses = Vec::with_capacity(config.epochs * examples.len());
    let mut step = 0usize;

    for _epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        for &idx in &order {
            let ex = &examples[idx];
            let (output, cache) = network_forward_cached(topology, &params, &ex.input)?;
            let (loss, loss_grad) = mse_loss(&output, &ex.target)?;
            if !loss.is_finite() {
                return Err(CoreError::NumericFailure {
                    step: Some(step),
                    message: format!("training diverged on frame {}", ex.frame_index),
                });
            }
            let grads = network_backward(topology, &params, &cache, &loss_grad)?;
            params.values = sgd_step(&params.values, &grads, config.learning_rate)?;
            step_losses.push(loss);
            progress(StepRecord { step, loss });
            step += 1;
        }
    }

    let post_psnr_db = mean_refine_psnr(topology, &params, examples, config.mode)?;
    let report = TrainingReport {
        steps: step_losses.len(),
        step_losses,
        pre_psnr_db,
        post_psnr_db,
        wall_time_secs: 0.0,
    };
    Ok((params, report))
}

/// Seed for segment `index` derived from the master seed, so segments
/// can train in any order (or in parallel) with identical results.
pub fn segment_seed(master: u64, index: usize) -> u64 {
    master ^ index as u64
}

/// Partitions the video and trains each segment independently,
/// appending parameter sets in order.
pub fn train_video(
    original: &[Tensor],
    degraded: &[Tensor],
    seg_config: &SegmentationConfig,
    train_config: &TrainingConfig,
) -> Result<(ParameterArray, Vec<TrainingReport>)> {
    train_video_with_progress(original, degraded, seg_config, train_config, &mut |_, _| {})
}

pub fn train_video_with_progress(
    original: &[Tensor],
    degraded: &[Tensor],
    seg_config: &SegmentationConfig,
    train_config: &TrainingConfig,
    progress: &mut dyn FnMut(usize, StepRecord),
) -> Result<(ParameterArray, Vec<TrainingReport>)> {
    if original.len() != degraded.len() {
        return Err(CoreError::InvalidArgument(format!(
            "sequence lengths differ: original {}, degraded {}",
            original.len(),
            degraded.len()
        )));
    }
    let topology = RefinerTopology::default();
    train_video_with_topology(original, degraded, &topology, seg_config, train_config, progress)
}

/// Like [`train_video`] but with an explicit topology.
pub fn train_video_with_topology(
    original: &[Tensor],
    degraded: &[Tensor],
    topology: &RefinerTopology,
    seg_config: &SegmentationConfig,
    train_config: &TrainingConfig,
    progress: &mut dyn FnMut(usize, StepRecord),
) -> Result<(ParameterArray, Vec<TrainingReport>)> {
    if original.len() != degraded.len() {
        return Err(CoreError::InvalidArgument(format!(
            "sequence lengths differ: original {}, degraded {}",
            original.len(),
            degraded.len()
        )));
    }
    let descriptors = partition(original.len(), seg_config)?;
    let mut array = ParameterArray::new(*seg_config, topology.id());
    let mut reports = Vec::with_capacity(descriptors.len());
    for desc in descriptors {
        let lo = desc.start_frame - 1;
        let hi = desc.end_frame;
        let examples = make_training_examples(
            &original[lo..hi],
            &degraded[lo..hi],
            train_config.mode,
            desc.start_frame,
        )?;
        let seg_cfg = TrainingConfig {
            seed: segment_seed(train_config.seed, desc.index),
            ..*train_config
        };
        let (params, report) =
            train_segment_with_progress(&examples, topology, &seg_cfg, &mut |r| {
                progress(desc.index, r)
            })
            .map_err(|e| match e {
                CoreError::NumericFailure { step, message } => CoreError::NumericFailure {
                    step,
                    message: format!("segment {}: {message}", desc.index),
                },
                other => other,
            })?;
        array.append_segment(desc, params)?;
        reports.push(report);
    }
    Ok((array, reports))
}
