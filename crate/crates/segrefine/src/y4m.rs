//! YUV4MPEG2 (Y4M) reading and writing.
//!
//! Reads C420 (default) and C444 8-bit streams, converting to internal
//! RGB floats via the BT.601 limited-range matrix with nearest-neighbor
//! chroma upsampling. Writes are always C444 so no chroma information
//! is lost on the way out.

use std::io::{self, BufRead, Write};

use segrefine_core::nn::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VideoIoError {
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported format: {0}")]
    Unsupported(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, VideoIoError>;

/// Frames plus an informational frame rate.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    pub frames: Vec<Tensor>,
    pub frame_rate: (u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Colorspace {
    C420,
    C444,
}

#[derive(Debug, Clone, Copy)]
pub struct Y4mHeader {
    pub width: usize,
    pub height: usize,
    pub frame_rate: (u32, u32),
    pub colorspace: Colorspace,
}

// BT.601 limited range: Y in [16,235], Cb/Cr in [16,240].
fn ycbcr_to_rgb(y: u8, cb: u8, cr: u8) -> [f32; 3] {
    let y = 1.164383 * (y as f64 - 16.0);
    let cb = cb as f64 - 128.0;
    let cr = cr as f64 - 128.0;
    let r = y + 1.596027 * cr;
    let g = y - 0.391762 * cb - 0.812968 * cr;
    let b = y + 2.017232 * cb;
    [
        (r / 255.0).clamp(0.0, 1.0) as f32,
        (g / 255.0).clamp(0.0, 1.0) as f32,
        (b / 255.0).clamp(0.0, 1.0) as f32,
    ]
}

fn round_half_away(v: f64) -> u8 {
    let r = if v >= 0.0 { (v + 0.5).floor() } else { (v - 0.5).ceil() };
    r.clamp(0.0, 255.0) as u8
}

fn rgb_to_ycbcr(r: f32, g: f32, b: f32) -> [u8; 3] {
    let (r, g, b) = (r as f64, g as f64, b as f64);
    let y = 16.0 + 65.481 * r + 128.553 * g + 24.966 * b;
    let cb = 128.0 - 37.797 * r - 74.203 * g + 112.0 * b;
    let cr = 128.0 + 112.0 * r - 93.786 * g - 18.214 * b;
    [round_half_away(y), round_half_away(cb), round_half_away(cr)]
}

fn read_line<R: BufRead>(r: &mut R, what: &str) -> Result<String> {
    let mut buf = Vec::new();
    r.read_until(b'\n', &mut buf)?;
    if buf.last() != Some(&b'\n') {
        return Err(VideoIoError::Format(format!("truncated {what} line")));
    }
    buf.pop();
    String::from_utf8(buf).map_err(|_| VideoIoError::Format(format!("non-UTF8 {what} line")))
}

fn parse_ratio(s: &str, what: &str) -> Result<(u32, u32)> {
    let (n, d) = s
        .split_once(':')
        .ok_or_else(|| VideoIoError::Format(format!("malformed {what} ratio {s:?}")))?;
    let n = n.parse().map_err(|_| VideoIoError::Format(format!("malformed {what} ratio {s:?}")))?;
    let d = d.parse().map_err(|_| VideoIoError::Format(format!("malformed {what} ratio {s:?}")))?;
    Ok((n, d))
}

/// Streaming Y4M reader; frames come out one at a time.
pub struct Y4mReader<R: BufRead> {
    inner: R,
    header: Y4mHeader,
    frames_read: usize,
}

impl<R: BufRead> Y4mReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let line = read_line(&mut inner, "stream header")?;
        let mut tokens = line.split(' ');
        if tokens.next() != Some("YUV4MPEG2") {
            return Err(VideoIoError::Format("missing YUV4MPEG2 signature".into()));
        }
        let mut width = None;
        let mut height = None;
        let mut frame_rate = (25, 1);
        let mut colorspace = Colorspace::C420;
        for token in tokens {
            let (tag, rest) = match token.split_at_checked(1) {
                Some(pair) => pair,
                None => continue,
            };
            match tag {
                "W" => {
                    width = Some(rest.parse().map_err(|_| {
                        VideoIoError::Format(format!("malformed width {rest:?}"))
                    })?)
                }
                "H" => {
                    height = Some(rest.parse().map_err(|_| {
                        VideoIoError::Format(format!("malformed height {rest:?}"))
                    })?)
                }
                "F" => frame_rate = parse_ratio(rest, "frame rate")?,
                "C" => {
                    colorspace = match rest {
                        "444" => Colorspace::C444,
                        c if c.starts_with("420") => Colorspace::C420,
                        other => {
                            return Err(VideoIoError::Unsupported(format!(
                                "colorspace C{other}"
                            )))
                        }
                    }
                }
                // interlacing, aspect, and X extensions are ignored
                _ => {}
            }
        }
        let width = width.ok_or_else(|| VideoIoError::Format("header lacks W token".into()))?;
        let height = height.ok_or_else(|| VideoIoError::Format("header lacks H token".into()))?;
        if width == 0 || height == 0 {
            return Err(VideoIoError::Format("zero frame dimension".into()));
        }
        if colorspace == Colorspace::C420 && (width % 2 != 0 || height % 2 != 0) {
            return Err(VideoIoError::Format(format!(
                "C420 requires even dimensions, got {width}x{height}"
            )));
        }
        Ok(Y4mReader {
            inner,
            header: Y4mHeader { width, height, frame_rate, colorspace },
            frames_read: 0,
        })
    }

    pub fn header(&self) -> &Y4mHeader {
        &self.header
    }

    /// Next decoded RGB frame, or None at a clean end of stream.
    pub fn next_frame(&mut self) -> Result<Option<Tensor>> {
        let mut marker = Vec::new();
        self.inner.read_until(b'\n', &mut marker)?;
        if marker.is_empty() {
            return Ok(None);
        }
        let index = self.frames_read + 1;
        if marker.last() != Some(&b'\n') || !marker.starts_with(b"FRAME") {
            return Err(VideoIoError::Format(format!("bad FRAME marker before frame {index}")));
        }
        let (w, h) = (self.header.width, self.header.height);
        let (cw, ch) = match self.header.colorspace {
            Colorspace::C420 => (w / 2, h / 2),
            Colorspace::C444 => (w, h),
        };
        let mut y_plane = vec![0u8; w * h];
        let mut cb_plane = vec![0u8; cw * ch];
        let mut cr_plane = vec![0u8; cw * ch];
        for plane in [&mut y_plane, &mut cb_plane, &mut cr_plane] {
            self.inner.read_exact(plane).map_err(|e| {
                if e.kind() == io::ErrorKind::UnexpectedEof {
                    VideoIoError::Format(format!("truncated frame {index}"))
                } else {
                    VideoIoError::Io(e)
                }
            })?;
        }
        let mut frame = Tensor::zeros(3, h, w);
        for yy in 0..h {
            for xx in 0..w {
                let (cy, cx) = match self.header.colorspace {
                    Colorspace::C420 => (yy / 2, xx / 2), // nearest neighbor
                    Colorspace::C444 => (yy, xx),
                };
                let rgb = ycbcr_to_rgb(
                    y_plane[yy * w + xx],
                    cb_plane[cy * cw + cx],
                    cr_plane[cy * cw + cx],
                );
                for (c, &v) in rgb.iter().enumerate() {
                    frame.set(c, yy, xx, v);
                }
            }
        }
        self.frames_read += 1;
        Ok(Some(frame))
    }
}

/// Reads a whole Y4M stream; errors on an empty (zero-frame) stream.
pub fn read_y4m<R: BufRead>(reader: R) -> Result<FrameSequence> {
    let mut r = Y4mReader::new(reader)?;
    let mut frames = Vec::new();
    while let Some(frame) = r.next_frame()? {
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err(VideoIoError::Format("stream contains no frames".into()));
    }
    Ok(FrameSequence { frames, frame_rate: r.header().frame_rate })
}

/// Streaming C444 Y4M writer.
pub struct Y4mWriter<W: Write> {
    inner: W,
    width: usize,
    height: usize,
    bytes_written: u64,
}

impl<W: Write> Y4mWriter<W> {
    pub fn new(mut inner: W, width: usize, height: usize, frame_rate: (u32, u32)) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(VideoIoError::InvalidArgument("zero frame dimension".into()));
        }
        let header = format!(
            "YUV4MPEG2 W{width} H{height} F{}:{} Ip A1:1 C444\n",
            frame_rate.0, frame_rate.1
        );
        inner.write_all(header.as_bytes())?;
        Ok(Y4mWriter { inner, width, height, bytes_written: header.len() as u64 })
    }

    pub fn write_frame(&mut self, frame: &Tensor) -> Result<()> {
        if frame.shape() != (3, self.height, self.width) {
            return Err(VideoIoError::InvalidArgument(format!(
                "frame shape {:?} does not match stream {}x{}",
                frame.shape(),
                self.width,
                self.height
            )));
        }
        let n = self.width * self.height;
        let mut planes = vec![0u8; 3 * n];
        let (r, g, b) = (frame.plane(0), frame.plane(1), frame.plane(2));
        for i in 0..n {
            let [y, cb, cr] = rgb_to_ycbcr(r[i], g[i], b[i]);
            planes[i] = y;
            planes[n + i] = cb;
            planes[2 * n + i] = cr;
        }
        self.inner.write_all(b"FRAME\n")?;
        self.inner.write_all(&planes)?;
        self.bytes_written += 6 + planes.len() as u64;
        Ok(())
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes_written
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// Writes a whole sequence as C444; returns bytes written.
pub fn write_y4m<W: Write>(sequence: &FrameSequence, sink: W) -> Result<u64> {
    let first = sequence
        .frames
        .first()
        .ok_or_else(|| VideoIoError::InvalidArgument("empty sequence".into()))?;
    let (_, h, w) = first.shape();
    let mut writer = Y4mWriter::new(sink, w, h, sequence.frame_rate)?;
    for frame in &sequence.frames {
        writer.write_frame(frame)?;
    }
    Ok(writer.bytes_written())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn parses_header_tokens() {
        let data = b"YUV4MPEG2 W64 H64 F25:1 Ip A1:1 C420\n".to_vec();
        let r = Y4mReader::new(&data[..]).unwrap();
        assert_eq!(r.header().width, 64);
        assert_eq!(r.header().height, 64);
        assert_eq!(r.header().frame_rate, (25, 1));
        assert_eq!(r.header().colorspace, Colorspace::C420);
    }

    #[test]
    fn rejects_bad_signature_and_colorspace() {
        assert!(matches!(
            Y4mReader::new(&b"JUNK W2 H2\n"[..]),
            Err(VideoIoError::Format(_))
        ));
        assert!(matches!(
            Y4mReader::new(&b"YUV4MPEG2 W2 H2 C422\n"[..]),
            Err(VideoIoError::Unsupported(_))
        ));
    }

    #[test]
    fn zero_frames_is_an_error() {
        let data = b"YUV4MPEG2 W2 H2 F25:1 C444\n".to_vec();
        assert!(matches!(read_y4m(&data[..]), Err(VideoIoError::Format(_))));
    }

    #[test]
    fn truncated_frame_reports_index() {
        let mut data = b"YUV4MPEG2 W2 H2 F25:1 C444\nFRAME\n".to_vec();
        data.extend_from_slice(&[128; 5]); // needs 12 bytes
        match read_y4m(&data[..]) {
            Err(VideoIoError::Format(msg)) => assert!(msg.contains("frame 1"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gray_level_matches_bt601_inverse() {
        // Y=128, Cb=Cr=128: R=G=B = 1.164383*(128-16)/255 = 0.511345
        let mut data = b"YUV4MPEG2 W2 H2 F25:1 C420\nFRAME\n".to_vec();
        data.extend_from_slice(&[128; 4]); // Y
        data.extend_from_slice(&[128; 1]); // Cb
        data.extend_from_slice(&[128; 1]); // Cr
        let seq = read_y4m(&data[..]).unwrap();
        let want = 1.164383 * 112.0 / 255.0;
        for &v in seq.frames[0].data() {
            assert!((v as f64 - want).abs() < 1e-3, "{v} vs {want}");
        }
    }

    #[test]
    fn c444_round_trip_error_bounded_by_quantization() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let frames: Vec<Tensor> = (0..2)
            .map(|_| {
                Tensor::new(3, 16, 16, (0..768).map(|_| rng.gen::<f32>()).collect()).unwrap()
            })
            .collect();
        let seq = FrameSequence { frames, frame_rate: (30, 1) };
        let mut buf = Vec::new();
        write_y4m(&seq, &mut buf).unwrap();
        let back = read_y4m(&buf[..]).unwrap();
        assert_eq!(back.frames.len(), 2);
        // worst case: half-step rounding of Y/Cb/Cr amplified by the
        // inverse matrix; the B row has the largest coefficient sum
        // (1.164383 + 2.017232) / 2 = 1.5908 eight-bit steps
        let bound = 0.5 * (1.164383 + 2.017232) / 255.0 + 1e-6;
        let mut worst = 0.0f64;
        for (a, b) in seq.frames.iter().zip(&back.frames) {
            for (&x, &y) in a.data().iter().zip(b.data()) {
                worst = worst.max((x as f64 - y as f64).abs());
            }
        }
        assert!(worst <= bound, "round-trip error {worst} exceeds {bound}");
    }

    #[test]
    fn single_frame_stream_is_well_formed() {
        let frame = Tensor::zeros(3, 2, 2).map(|_| 0.25);
        let seq = FrameSequence { frames: vec![frame], frame_rate: (24, 1) };
        let mut buf = Vec::new();
        let bytes = write_y4m(&seq, &mut buf).unwrap();
        assert_eq!(bytes, buf.len() as u64);
        let text = String::from_utf8_lossy(&buf[..40]);
        assert!(text.starts_with("YUV4MPEG2 W2 H2 F24:1 Ip A1:1 C444\nFRAME"));
        assert_eq!(buf.len(), 35 + 6 + 12);
    }

    #[test]
    fn write_empty_sequence_rejected() {
        let seq = FrameSequence { frames: vec![], frame_rate: (25, 1) };
        assert!(matches!(
            write_y4m(&seq, Vec::new()),
            Err(VideoIoError::InvalidArgument(_))
        ));
    }
}
