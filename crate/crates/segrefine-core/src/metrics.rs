//! Quality metrics: PSNR, single-scale SSIM, and 5-scale MS-SSIM on
//! BT.601 luma, plus whole-sequence evaluation reports.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::nn::Tensor;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
/// Standard 5-scale MS-SSIM exponents.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

fn check_frame_pair(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(CoreError::InvalidArgument(format!(
            "frame shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all channels, peak 1.0.
/// Identical frames return +infinity.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_frame_pair(a, b)?;
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * libm::log10(1.0 / mse))
}

/// BT.601 luma of an RGB frame, as f64.
pub fn luma(frame: &Tensor) -> Result<Vec<f64>> {
    if frame.channels() != 3 {
        return Err(CoreError::InvalidArgument(format!(
            "luma needs a 3-channel frame, got {} channels",
            frame.channels()
        )));
    }
    let r = frame.plane(0);
    let g = frame.plane(1);
    let b = frame.plane(2);
    Ok(r.iter()
        .zip(g)
        .zip(b)
        .map(|((&r, &g), &b)| 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .collect())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = libm::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Separable Gaussian filter over valid positions only; output is
/// (h-10) x (w-10).
fn gaussian_filter_valid(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    let win = gaussian_window();
    let oh = h - SSIM_WINDOW + 1;
    let ow = w - SSIM_WINDOW + 1;
    // horizontal pass
    let mut tmp = vec![0.0f64; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, &wk) in win.iter().enumerate() {
                acc += wk * img[y * w + x + k];
            }
            tmp[y * ow + x] = acc;
        }
    }
    // vertical pass
    let mut out = vec![0.0f64; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, &wk) in win.iter().enumerate() {
                acc += wk * tmp[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean SSIM and mean contrast-structure term over valid window
/// positions of two luma planes.
fn ssim_stats(a: &[f64], b: &[f64], h: usize, w: usize) -> (f64, f64) {
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let n = a.len();
    let sq_a: Vec<f64> = a.iter().map(|&v| v * v).collect();
    let sq_b: Vec<f64> = b.iter().map(|&v| v * v).collect();
    let ab: Vec<f64> = (0..n).map(|i| a[i] * b[i]).collect();

    let mu_a = gaussian_filter_valid(a, h, w);
    let mu_b = gaussian_filter_valid(b, h, w);
    let e_aa = gaussian_filter_valid(&sq_a, h, w);
    let e_bb = gaussian_filter_valid(&sq_b, h, w);
    let e_ab = gaussian_filter_valid(&ab, h, w);

    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    for i in 0..mu_a.len() {
        let ma = mu_a[i];
        let mb = mu_b[i];
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        ssim_sum += l * cs;
        cs_sum += cs;
    }
    let count = mu_a.len() as f64;
    (ssim_sum / count, cs_sum / count)
}

/// Single-scale SSIM on luma: 11x11 Gaussian window, sigma 1.5,
/// K1=0.01, K2=0.03, dynamic range 1.0, mean over valid positions.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_frame_pair(a, b)?;
    let (_, h, w) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(CoreError::InvalidArgument(format!(
            "frame {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let la = luma(a)?;
    let lb = luma(b)?;
    Ok(ssim_stats(&la, &lb, h, w).0)
}

/// 2x2 mean downsample; odd trailing row/column is dropped.
fn downsample2(img: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let oh = h / 2;
    let ow = w / 2;
    let mut out = vec![0.0f64; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = 0.25
                * (img[2 * y * w + 2 * x]
                    + img[2 * y * w + 2 * x + 1]
                    + img[(2 * y + 1) * w + 2 * x]
                    + img[(2 * y + 1) * w + 2 * x + 1]);
        }
    }
    (out, oh, ow)
}

/// Number of MS-SSIM scales usable for a given minimum frame dimension
/// (each scale halves the frame; every scale must fit the SSIM window).
pub fn ms_ssim_scales(min_dim: usize) -> usize {
    let mut scales = 0;
    let mut size = min_dim;
    while size >= SSIM_WINDOW && scales < MS_SSIM_WEIGHTS.len() {
        scales += 1;
        size /= 2;
    }
    scales
}

/// Multi-scale SSIM. Uses up to 5 scales with the standard exponents;
/// frames too small for the full pyramid use fewer scales with the
/// weights renormalized. Returns the score and the scale count used.
pub fn ms_ssim_detailed(a: &Tensor, b: &Tensor) -> Result<(f64, usize)> {
    check_frame_pair(a, b)?;
    let (_, h, w) = a.shape();
    let scales = ms_ssim_scales(h.min(w));
    if scales == 0 {
        return Err(CoreError::InvalidArgument(format!(
            "frame {h}x{w} too small for even one MS-SSIM scale"
        )));
    }
    let weight_sum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let mut la = luma(a)?;
    let mut lb = luma(b)?;
    let (mut ch, mut cw) = (h, w);
    let mut score = 1.0f64;
    for (s, &weight) in MS_SSIM_WEIGHTS[..scales].iter().enumerate() {
        let (mean_ssim, mean_cs) = ssim_stats(&la, &lb, ch, cw);
        // luminance enters only at the coarsest scale
        let term = if s + 1 == scales { mean_ssim } else { mean_cs };
        score *= libm::pow(term.max(0.0), weight / weight_sum);
        if s + 1 < scales {
            let (da, nh, nw) = downsample2(&la, ch, cw);
            let (db, _, _) = downsample2(&lb, ch, cw);
            la = da;
            lb = db;
            ch = nh;
            cw = nw;
        }
    }
    Ok((score, scales))
}

pub fn ms_ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    ms_ssim_detailed(a, b).map(|(v, _)| v)
}

/// Per-frame metric columns for the evaluation report.
#[derive(Debug, Clone)]
pub struct FrameMetrics {
    pub index: usize,
    pub psnr_degraded: f64,
    pub psnr_refined: f64,
    pub ms_ssim_degraded: f64,
    pub ms_ssim_refined: f64,
}

#[derive(Debug, Clone)]
pub struct SegmentSummary {
    pub index: usize,
    pub start_frame: usize,
    pub end_frame: usize,
    pub mean_psnr_degraded: f64,
    pub mean_psnr_refined: f64,
}

#[derive(Debug, Clone)]
pub struct QualityReport {
    pub frames: Vec<FrameMetrics>,
    pub mean_psnr_degraded: f64,
    pub mean_psnr_refined: f64,
    pub mean_ms_ssim_degraded: f64,
    pub mean_ms_ssim_refined: f64,
    pub segments: Vec<SegmentSummary>,
    pub sidecar_bpp: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Compares degraded and refined sequences against the original,
/// per frame and in aggregate. `rho` groups the per-segment summaries.
pub fn evaluate(
    original: &[Tensor],
    degraded: &[Tensor],
    refined: &[Tensor],
    sidecar_bytes: u64,
    rho: Option<usize>,
) -> Result<QualityReport> {
    if original.len() != degraded.len() || original.len() != refined.len() {
        return Err(CoreError::InvalidArgument(format!(
            "sequence lengths differ: original {}, degraded {}, refined {}",
            original.len(),
            degraded.len(),
            refined.len()
        )));
    }
    if original.is_empty() {
        return Err(CoreError::InvalidArgument("empty sequences".into()));
    }
    let mut frames = Vec::with_capacity(original.len());
    for (i, ((o, d), r)) in original.iter().zip(degraded).zip(refined).enumerate() {
        frames.push(FrameMetrics {
            index: i + 1,
            psnr_degraded: psnr(o, d)?,
            psnr_refined: psnr(o, r)?,
            ms_ssim_degraded: ms_ssim(o, d)?,
            ms_ssim_refined: ms_ssim(o, r)?,
        });
    }

    let mut segments = Vec::new();
    if let Some(rho) = rho.filter(|&r| r > 0) {
        for (index, chunk) in frames.chunks(rho).enumerate() {
            segments.push(SegmentSummary {
                index,
                start_frame: chunk[0].index,
                end_frame: chunk[chunk.len() - 1].index,
                mean_psnr_degraded: mean(chunk.iter().map(|f| f.psnr_degraded)),
                mean_psnr_refined: mean(chunk.iter().map(|f| f.psnr_refined)),
            });
        }
    }

    let (_, h, w) = original[0].shape();
    let pixels = original.len() as f64 * h as f64 * w as f64;
    Ok(QualityReport {
        mean_psnr_degraded: mean(frames.iter().map(|f| f.psnr_degraded)),
        mean_psnr_refined: mean(frames.iter().map(|f| f.psnr_refined)),
        mean_ms_ssim_degraded: mean(frames.iter().map(|f| f.ms_ssim_degraded)),
        mean_ms_ssim_refined: mean(frames.iter().map(|f| f.ms_ssim_refined)),
        frames,
        segments,
        sidecar_bpp: 8.0 * sidecar_bytes as f64 / pixels,
    })
}
