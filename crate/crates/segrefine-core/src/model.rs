//! The refiner network: a small stack of same-padded convolutions with
//! ReLU between layers and a linear last layer. In residual mode the
//! network predicts the coding error and the refined frame is the input
//! minus that prediction.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{CoreError, Result};
use crate::nn::{
    conv2d_backward, conv2d_forward, mse_loss, relu_backward, relu_forward, ConvSpec, Tensor,
};

pub const DEFAULT_HIDDEN_WIDTH: usize = 16;

/// Ordered convolution layer list; adjacent layers must chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefinerTopology {
    layers: Vec<ConvSpec>,
}

impl RefinerTopology {
    pub fn new(layers: Vec<ConvSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(CoreError::InvalidArgument("topology needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(CoreError::InvalidArgument(format!(
                    "layer {k} out_channels {} does not chain into layer {} in_channels {}",
                    pair[0].out_channels,
                    k + 1,
                    pair[1].in_channels
                )));
            }
        }
        Ok(RefinerTopology { layers })
    }

    /// The standard 7-layer refiner: four 5x5 layers then three 3x3
    /// layers, 3 channels in and out, `hidden_width` channels between.
    pub fn standard(hidden_width: usize) -> Result<Self> {
        if hidden_width == 0 {
            return Err(CoreError::InvalidArgument("hidden width must be positive".into()));
        }
        let h = hidden_width;
        RefinerTopology::new(vec![
            ConvSpec::new(3, h, 5)?,
            ConvSpec::new(h, h, 5)?,
            ConvSpec::new(h, h, 5)?,
            ConvSpec::new(h, h, 5)?,
            ConvSpec::new(h, h, 3)?,
            ConvSpec::new(h, h, 3)?,
            ConvSpec::new(h, 3, 3)?,
        ])
    }

    pub fn layers(&self) -> &[ConvSpec] {
        &self.layers
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.layers[self.layers.len() - 1].out_channels
    }

    /// FNV-1a over the layer shapes; binds a ParameterSet to its topology.
    pub fn id(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut mix = |v: u64| {
            for byte in v.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        mix(self.layers.len() as u64);
        for spec in &self.layers {
            mix(spec.in_channels as u64);
            mix(spec.out_channels as u64);
            mix(spec.kernel as u64);
        }
        h
    }

    /// Byte offset ranges of (weights, biases) for each layer within a
    /// flat parameter vector.
    pub fn param_layout(&self) -> Vec<(core::ops::Range<usize>, core::ops::Range<usize>)> {
        let mut at = 0;
        self.layers
            .iter()
            .map(|spec| {
                let w = at..at + spec.weight_len();
                at += spec.weight_len();
                let b = at..at + spec.out_channels;
                at += spec.out_channels;
                (w, b)
            })
            .collect()
    }
}

impl Default for RefinerTopology {
    fn default() -> Self {
        RefinerTopology::standard(DEFAULT_HIDDEN_WIDTH).unwrap()
    }
}

/// Total number of weights and biases in a topology.
pub fn parameter_count(topology: &RefinerTopology) -> usize {
    topology.layers().iter().map(|spec| spec.param_count()).sum()
}

/// Whether the network predicts the frame directly or its residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineMode {
    Direct,
    Residual,
}

/// One trained parameter set: per layer, weights then biases, flat.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub values: Vec<f32>,
    pub topology_id: u64,
}

impl ParameterSet {
    pub fn new(values: Vec<f32>, topology: &RefinerTopology) -> Result<Self> {
        if values.len() != parameter_count(topology) {
            return Err(CoreError::InvalidArgument(format!(
                "parameter vector length {} does not match topology count {}",
                values.len(),
                parameter_count(topology)
            )));
        }
        Ok(ParameterSet { values, topology_id: topology.id() })
    }

    fn check_topology(&self, topology: &RefinerTopology) -> Result<()> {
        if self.topology_id != topology.id() {
            return Err(CoreError::InvalidArgument(format!(
                "parameter set topology id {:#x} does not match topology {:#x}",
                self.topology_id,
                topology.id()
            )));
        }
        Ok(())
    }
}

/// He-style initialization: weights ~ N(0, 2/(in*k*k)), biases zero.
/// In residual mode the last layer starts all-zero so the predicted
/// residual (and hence the refinement delta) is exactly zero.
pub fn init_parameters(topology: &RefinerTopology, mode: RefineMode, seed: u64) -> ParameterSet {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let last = topology.layers().len() - 1;
    let mut values = Vec::with_capacity(parameter_count(topology));
    for (i, spec) in topology.layers().iter().enumerate() {
        if mode == RefineMode::Residual && i == last {
            values.extend(core::iter::repeat(0.0f32).take(spec.param_count()));
            continue;
        }
        let std = libm::sqrt(2.0 / (spec.in_channels * spec.kernel * spec.kernel) as f64);
        for _ in 0..spec.weight_len() {
            values.push((gaussian(&mut rng) * std) as f32);
        }
        values.extend(core::iter::repeat(0.0f32).take(spec.out_channels));
    }
    ParameterSet { values, topology_id: topology.id() }
}

// Box-Muller; one draw per call keeps the stream layout simple.
fn gaussian(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = loop {
        let v = rng.gen::<f64>();
        if v > 0.0 {
            break v;
        }
    };
    let u2: f64 = rng.gen();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

/// Raw network output (no clamping, no residual subtraction).
pub fn network_forward(
    topology: &RefinerTopology,
    params: &ParameterSet,
    input: &Tensor,
) -> Result<Tensor> {
    params.check_topology(topology)?;
    let layout = topology.param_layout();
    let last = topology.layers().len() - 1;
    let mut cur = input.clone();
    for (i, (spec, (wr, br))) in topology.layers().iter().zip(&layout).enumerate() {
        let out = conv2d_forward(&cur, spec, &params.values[wr.clone()], &params.values[br.clone()])?;
        cur = if i < last { relu_forward(&out) } else { out };
    }
    Ok(cur)
}

/// Per-layer activations kept for the backward pass.
pub struct ForwardCache {
    /// inputs[k] is the input fed to layer k.
    inputs: Vec<Tensor>,
    /// preacts[k] is layer k's convolution output before ReLU.
    preacts: Vec<Tensor>,
}

pub fn network_forward_cached(
    topology: &RefinerTopology,
    params: &ParameterSet,
    input: &Tensor,
) -> Result<(Tensor, ForwardCache)> {
    params.check_topology(topology)?;
    let layout = topology.param_layout();
    let last = topology.layers().len() - 1;
    let mut inputs = Vec::with_capacity(layout.len());
    let mut preacts = Vec::with_capacity(layout.len());
    let mut cur = input.clone();
    for (i, (spec, (wr, br))) in topology.layers().iter().zip(&layout).enumerate() {
        let out = conv2d_forward(&cur, spec, &params.values[wr.clone()], &params.values[br.clone()])?;
        inputs.push(cur);
        cur = if i < last { relu_forward(&out) } else { out.clone() };
        preacts.push(out);
    }
    Ok((cur, ForwardCache { inputs, preacts }))
}

/// Gradients of all parameters given the gradient of the loss w.r.t.
/// the raw network output. Returned flat, matching the ParameterSet
/// layout.
pub fn network_backward(
    topology: &RefinerTopology,
    params: &ParameterSet,
    cache: &ForwardCache,
    output_grad: &Tensor,
) -> Result<Vec<f32>> {
    params.check_topology(topology)?;
    let layout = topology.param_layout();
    let last = topology.layers().len() - 1;
    let mut grads = vec![0.0f32; params.values.len()];
    let mut upstream = output_grad.clone();
    for i in (0..=last).rev() {
        let spec = &topology.layers()[i];
        let (wr, br) = &layout[i];
        // ReLU sits after every layer except the last
        if i < last {
            upstream = relu_backward(&cache.preacts[i], &upstream)?;
        }
        let lg = conv2d_backward(&cache.inputs[i], spec, &params.values[wr.clone()], &upstream)?;
        grads[wr.clone()].copy_from_slice(&lg.weight_grad);
        grads[br.clone()].copy_from_slice(&lg.bias_grad);
        upstream = lg.input_grad;
    }
    Ok(grads)
}

/// Applies the refiner to one frame. Direct mode clamps the network
/// output to [0,1]; residual mode subtracts the predicted residual from
/// the frame and clamps.
pub fn forward_refine(
    topology: &RefinerTopology,
    params: &ParameterSet,
    frame: &Tensor,
    mode: RefineMode,
) -> Result<Tensor> {
    let out = network_forward(topology, params, frame)?;
    match mode {
        RefineMode::Direct => Ok(out.clamp01()),
        RefineMode::Residual => Ok(frame.sub(&out)?.clamp01()),
    }
}

/// Full-network gradient verification against central finite
/// differences on a random subsample of at least 100 parameters (or all
/// of them, if fewer). Returns the worst relative error observed.
///
/// The finite-difference side runs an independent f64 forward path so
/// FD noise stays well below the 1e-3 acceptance threshold.
pub fn grad_check(
    topology: &RefinerTopology,
    params: &ParameterSet,
    input: &Tensor,
    target: &Tensor,
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let analytic = analytic_param_gradients(topology, params, input, target)?;
    grad_check_against(topology, params, input, target, epsilon, &analytic)
}

/// Analytic gradients of mse(network(input), target) w.r.t. all
/// parameters.
pub fn analytic_param_gradients(
    topology: &RefinerTopology,
    params: &ParameterSet,
    input: &Tensor,
    target: &Tensor,
) -> Result<Vec<f32>> {
    let (out, cache) = network_forward_cached(topology, params, input)?;
    if !out.all_finite() {
        return Err(CoreError::NumericFailure {
            step: None,
            message: "non-finite network output".into(),
        });
    }
    let (_, loss_grad) = mse_loss(&out, target)?;
    network_backward(topology, params, &cache, &loss_grad)
}

/// Compares a caller-supplied gradient vector against finite
/// differences; used by [`grad_check`] and by mutation tests of the
/// checker itself.
pub fn grad_check_against(
    topology: &RefinerTopology,
    params: &ParameterSet,
    input: &Tensor,
    target: &Tensor,
    epsilon: f64,
    analytic: &[f32],
) -> Result<f64> {
    params.check_topology(topology)?;
    if analytic.len() != params.values.len() {
        return Err(CoreError::InvalidArgument(
            "gradient length does not match parameter count".into(),
        ));
    }
    let n = params.values.len();
    let sample: Vec<usize> = if n <= 128 {
        (0..n).collect()
    } else {
        // deterministic sample of 128 distinct indices
        let mut rng = ChaCha20Rng::seed_from_u64(GRAD_CHECK_SAMPLE_SEED);
        let mut picked = alloc::collections::BTreeSet::new();
        while picked.len() < 128 {
            picked.insert(rng.gen_range(0..n));
        }
        picked.into_iter().collect()
    };

    let mut values: Vec<f64> = params.values.iter().map(|&v| v as f64).collect();
    let mut fds = Vec::with_capacity(sample.len());
    for &i in &sample {
        let orig = values[i];
        values[i] = orig + epsilon;
        let lp = loss_f64(topology, &values, input, target)?;
        values[i] = orig - epsilon;
        let lm = loss_f64(topology, &values, input, target)?;
        values[i] = orig;
        let fd = (lp - lm) / (2.0 * epsilon);
        if !fd.is_finite() {
            return Err(CoreError::NumericFailure {
                step: None,
                message: format!("non-finite finite-difference at parameter {i}"),
            });
        }
        fds.push(fd);
    }

    // Relative error floored at a fraction of the largest gradient seen,
    // so parameters with near-zero true gradient do not dominate.
    let scale = sample
        .iter()
        .zip(&fds)
        .map(|(&i, &fd)| (analytic[i] as f64).abs().max(fd.abs()))
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let mut worst = 0.0f64;
    for (&i, &fd) in sample.iter().zip(&fds) {
        let a = analytic[i] as f64;
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3 * scale);
        worst = worst.max(rel);
    }
    Ok(worst)
}

const GRAD_CHECK_SAMPLE_SEED: u64 = 0x5e6c4ec4;

/// f64 mirror of the network forward plus MSE; only used by the
/// finite-difference side of grad_check, so clarity over speed.
fn loss_f64(
    topology: &RefinerTopology,
    values: &[f64],
    input: &Tensor,
    target: &Tensor,
) -> Result<f64> {
    let layout = topology.param_layout();
    let last = topology.layers().len() - 1;
    let (h, w) = (input.height(), input.width());
    let mut cur: Vec<f64> = input.data().iter().map(|&v| v as f64).collect();
    let mut cur_c = input.channels();
    for (i, (spec, (wr, br))) in topology.layers().iter().zip(&layout).enumerate() {
        if cur_c != spec.in_channels {
            return Err(CoreError::InvalidArgument(format!(
                "layer {i}: input channel axis is {cur_c}, spec expects {}",
                spec.in_channels
            )));
        }
        let weights = &values[wr.clone()];
        let bias = &values[br.clone()];
        let k = spec.kernel;
        let pad = (k / 2) as isize;
        let mut next = vec![0.0f64; spec.out_channels * h * w];
        for oc in 0..spec.out_channels {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[oc];
                    for ic in 0..spec.in_channels {
                        for dy in 0..k {
                            let iy = y as isize + dy as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for dx in 0..k {
                                let ix = x as isize + dx as isize - pad;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += weights[((oc * spec.in_channels + ic) * k + dy) * k + dx]
                                    * cur[(ic * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    let v = if i < last { acc.max(0.0) } else { acc };
                    next[(oc * h + y) * w + x] = v;
                }
            }
        }
        cur = next;
        cur_c = spec.out_channels;
    }
    if target.shape() != (cur_c, h, w) {
        return Err(CoreError::InvalidArgument("target shape mismatch".into()));
    }
    let n = cur.len() as f64;
    Ok(cur
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t as f64;
            d * d
        })
        .sum::<f64>()
        / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::Rng;

    #[test]
    fn parameter_count_examples() {
        let single = RefinerTopology::new(vec![ConvSpec::new(1, 1, 1).unwrap()]).unwrap();
        assert_eq!(parameter_count(&single), 2);
        let one_layer = RefinerTopology::new(vec![ConvSpec::new(3, 16, 5).unwrap()]).unwrap();
        assert_eq!(parameter_count(&one_layer), 1216);
        assert_eq!(parameter_count(&RefinerTopology::default()), 25539);
    }

    #[test]
    fn standard_topology_shape() {
        let t = RefinerTopology::standard(16).unwrap();
        assert_eq!(t.layers().len(), 7);
        assert!(t.layers()[..4].iter().all(|s| s.kernel == 5));
        assert!(t.layers()[4..].iter().all(|s| s.kernel == 3));
        assert_eq!(t.in_channels(), 3);
        assert_eq!(t.out_channels(), 3);
    }

    #[test]
    fn init_is_deterministic() {
        let t = RefinerTopology::standard(8).unwrap();
        let a = init_parameters(&t, RefineMode::Direct, 42);
        let b = init_parameters(&t, RefineMode::Direct, 42);
        assert_eq!(a, b);
        let c = init_parameters(&t, RefineMode::Direct, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn residual_init_is_identity_refiner() {
        let t = RefinerTopology::standard(8).unwrap();
        let params = init_parameters(&t, RefineMode::Residual, 9);
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        let frame = Tensor::new(3, 10, 12, (0..360).map(|_| rng.gen::<f32>()).collect()).unwrap();
        let out = forward_refine(&t, &params, &frame, RefineMode::Residual).unwrap();
        assert_eq!(out, frame);
    }

    #[test]
    fn init_weight_std_matches_he() {
        let t = RefinerTopology::default();
        let layout = t.param_layout();
        let (wr, _) = &layout[0];
        let mut acc = 0.0f64;
        let mut n = 0usize;
        for seed in 0..10u64 {
            let p = init_parameters(&t, RefineMode::Direct, seed);
            for &v in &p.values[wr.clone()] {
                acc += (v as f64) * (v as f64);
                n += 1;
            }
        }
        let std = libm::sqrt(acc / n as f64);
        let want = libm::sqrt(2.0 / 75.0);
        assert!((std - want).abs() / want < 0.10, "std {std} vs {want}");
    }

    #[test]
    fn refine_output_shape_and_range() {
        let t = RefinerTopology::standard(4).unwrap();
        let params = init_parameters(&t, RefineMode::Direct, 3);
        for (h, w) in [(8, 8), (17, 17), (64, 8)] {
            let frame = Tensor::zeros(3, h, w).map(|_| 0.5);
            let out = forward_refine(&t, &params, &frame, RefineMode::Direct).unwrap();
            assert_eq!(out.shape(), (3, h, w));
            assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn direct_identity_parameterization() {
        // single 1x1-kernel layer forming the channelwise identity
        let t = RefinerTopology::new(vec![ConvSpec::new(3, 3, 1).unwrap()]).unwrap();
        let mut values = vec![0.0f32; parameter_count(&t)];
        values[0] = 1.0; // w[0,0]
        values[4] = 1.0; // w[1,1]
        values[8] = 1.0; // w[2,2]
        let params = ParameterSet::new(values, &t).unwrap();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(2);
        let frame = Tensor::new(3, 6, 6, (0..108).map(|_| rng.gen::<f32>()).collect()).unwrap();
        let out = forward_refine(&t, &params, &frame, RefineMode::Direct).unwrap();
        for (a, b) in out.data().iter().zip(frame.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn residual_mode_matches_frame_minus_raw_output() {
        let t = RefinerTopology::standard(4).unwrap();
        let params = init_parameters(&t, RefineMode::Direct, 5);
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(6);
        let frame = Tensor::new(3, 9, 9, (0..243).map(|_| rng.gen::<f32>()).collect()).unwrap();
        let raw = network_forward(&t, &params, &frame).unwrap();
        let refined = forward_refine(&t, &params, &frame, RefineMode::Residual).unwrap();
        for ((&r, &f), &o) in refined.data().iter().zip(frame.data()).zip(raw.data()) {
            assert!((r - (f - o).clamp(0.0, 1.0)).abs() < 1e-7);
        }
    }

    #[test]
    fn topology_id_mismatch_rejected() {
        let t = RefinerTopology::standard(4).unwrap();
        let other = RefinerTopology::standard(8).unwrap();
        let params = init_parameters(&other, RefineMode::Direct, 0);
        let frame = Tensor::zeros(3, 8, 8);
        assert!(forward_refine(&t, &params, &frame, RefineMode::Direct).is_err());
    }

    #[test]
    fn grad_check_linear_single_layer_is_exact() {
        let t = RefinerTopology::new(vec![ConvSpec::new(2, 2, 1).unwrap()]).unwrap();
        let params = init_parameters(&t, RefineMode::Direct, 7);
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(8);
        let input = Tensor::new(2, 5, 5, (0..50).map(|_| rng.gen::<f32>()).collect()).unwrap();
        let target = Tensor::new(2, 5, 5, (0..50).map(|_| rng.gen::<f32>()).collect()).unwrap();
        let err = grad_check(&t, &params, &input, &target, 1e-3).unwrap();
        assert!(err < 1e-6, "error {err}");
    }

    #[test]
    fn grad_check_small_deep_network() {
        let t = RefinerTopology::new(vec![
            ConvSpec::new(2, 3, 3).unwrap(),
            ConvSpec::new(3, 3, 3).unwrap(),
            ConvSpec::new(3, 3, 1).unwrap(),
            ConvSpec::new(3, 2, 3).unwrap(),
        ])
        .unwrap();
        let params = init_parameters(&t, RefineMode::Direct, 13);
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(14);
        let input = Tensor::new(2, 7, 7, (0..98).map(|_| rng.gen::<f32>()).collect()).unwrap();
        let target = Tensor::new(2, 7, 7, (0..98).map(|_| rng.gen::<f32>()).collect()).unwrap();
        let err = grad_check(&t, &params, &input, &target, 1e-3).unwrap();
        assert!(err < 1e-3, "error {err}");
    }

    #[test]
    fn grad_check_detects_corrupted_weight_grads() {
        let t = RefinerTopology::new(vec![
            ConvSpec::new(2, 3, 3).unwrap(),
            ConvSpec::new(3, 2, 3).unwrap(),
        ])
        .unwrap();
        let params = init_parameters(&t, RefineMode::Direct, 21);
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(22);
        let input = Tensor::new(2, 6, 6, (0..72).map(|_| rng.gen::<f32>()).collect()).unwrap();
        let target = Tensor::new(2, 6, 6, (0..72).map(|_| rng.gen::<f32>()).collect()).unwrap();
        let mut grads = analytic_param_gradients(&t, &params, &input, &target).unwrap();
        let layout = t.param_layout();
        for (wr, _) in &layout {
            for g in &mut grads[wr.clone()] {
                *g *= 2.0;
            }
        }
        let err = grad_check_against(&t, &params, &input, &target, 1e-3, &grads).unwrap();
        assert!(err > 0.5, "error {err}");
    }
}
