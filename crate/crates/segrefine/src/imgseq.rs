//! Numbered lossless image sequences (PNG) as video input.

use std::fs;
use std::path::{Path, PathBuf};

use segrefine_core::nn::Tensor;

use crate::y4m::{FrameSequence, Result, VideoIoError};

/// Trailing digit run of a file stem, e.g. "frame_0042" -> 42.
fn frame_number(stem: &str) -> Option<u64> {
    let digits: String = stem
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_digit())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    if digits.is_empty() {
        None
    } else {
        digits.parse().ok()
    }
}

/// Reads every numbered PNG in a directory, ordered by number.
/// Numbering must be gap-free and all frames must share dimensions.
pub fn read_image_dir(dir: &Path) -> Result<FrameSequence> {
    let mut numbered: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if !is_png {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if let Some(n) = frame_number(stem) {
            numbered.push((n, path));
        }
    }
    if numbered.is_empty() {
        return Err(VideoIoError::Format(format!(
            "no numbered .png files in {}",
            dir.display()
        )));
    }
    numbered.sort();
    for pair in numbered.windows(2) {
        if pair[1].0 == pair[0].0 {
            return Err(VideoIoError::Format(format!(
                "duplicate frame number {} ({})",
                pair[1].0,
                pair[1].1.display()
            )));
        }
        if pair[1].0 != pair[0].0 + 1 {
            return Err(VideoIoError::Format(format!(
                "gap in frame numbering between {} and {}",
                pair[0].0, pair[1].0
            )));
        }
    }

    let mut frames = Vec::with_capacity(numbered.len());
    let mut dims: Option<(usize, usize)> = None;
    for (_, path) in &numbered {
        let img = image::open(path)
            .map_err(|e| VideoIoError::Format(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        match dims {
            None => dims = Some((w, h)),
            Some(d) if d != (w, h) => {
                return Err(VideoIoError::InvalidArgument(format!(
                    "{} is {w}x{h}, expected {}x{}",
                    path.display(),
                    d.0,
                    d.1
                )))
            }
            _ => {}
        }
        let mut frame = Tensor::zeros(3, h, w);
        for (y, row) in img.rows().enumerate() {
            for (x, px) in row.enumerate() {
                for c in 0..3 {
                    frame.set(c, y, x, px.0[c] as f32 / 255.0);
                }
            }
        }
        frames.push(frame);
    }
    Ok(FrameSequence { frames, frame_rate: (25, 1) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    fn write_png(dir: &Path, name: &str, w: u32, h: u32, level: u8) {
        let img = RgbImage::from_pixel(w, h, Rgb([level, level, level]));
        img.save(dir.join(name)).unwrap();
    }

    #[test]
    fn reads_ordered_frames() {
        let dir = tempfile::tempdir().unwrap();
        for i in 1..=10 {
            write_png(dir.path(), &format!("{i:04}.png"), 4, 4, (i * 20) as u8);
        }
        let seq = read_image_dir(dir.path()).unwrap();
        assert_eq!(seq.frames.len(), 10);
        // ordered by number: frame 0 has level 20
        assert!((seq.frames[0].get(0, 0, 0) - 20.0 / 255.0).abs() < 1e-6);
        assert!((seq.frames[9].get(0, 0, 0) - 200.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn missing_number_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        for i in [1u32, 2, 3, 5] {
            write_png(dir.path(), &format!("{i:04}.png"), 4, 4, 10);
        }
        assert!(matches!(read_image_dir(dir.path()), Err(VideoIoError::Format(_))));
    }

    #[test]
    fn inconsistent_dimensions_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        write_png(dir.path(), "0001.png", 4, 4, 10);
        write_png(dir.path(), "0002.png", 5, 4, 10);
        match read_image_dir(dir.path()) {
            Err(VideoIoError::InvalidArgument(msg)) => assert!(msg.contains("0002.png"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn full_scale_value_maps_to_one() {
        let dir = tempfile::tempdir().unwrap();
        write_png(dir.path(), "0001.png", 2, 2, 255);
        let seq = read_image_dir(dir.path()).unwrap();
        assert_eq!(seq.frames[0].get(0, 0, 0), 1.0);
    }
}
