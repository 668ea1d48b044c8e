//! The `.srf` sidecar stream: a serialized parameter array with an
//! offset table in the header so each segment's parameters can be read
//! independently (random access), one CRC-32 per block so corruption is
//! localized to a single segment.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8  bytes "SEGREFN1"
//! version  u16
//! rho      u32
//! mode     u8            0 = direct, 1 = residual
//! layers   u8            layer count L
//! L x (in u16, out u16, kernel u8)
//! segments u32           segment count N
//! N x u64                byte offsets (from stream start) of each block
//! N blocks:
//!   index  u32
//!   start  u32           1-based inclusive
//!   end    u32           1-based inclusive
//!   payload  P x f32     parameter values in ParameterSet order
//!   crc    u32           CRC-32 of the payload bytes
//! ```

use std::io::{self, Read, Seek, SeekFrom, Write};

use segrefine_core::model::{parameter_count, ParameterSet, RefineMode, RefinerTopology};
use segrefine_core::nn::ConvSpec;
use segrefine_core::segment::{ParameterArray, SegmentDescriptor, SegmentationConfig};
use thiserror::Error;

pub const MAGIC: [u8; 8] = *b"SEGREFN1";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum SidecarError {
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt payload in segment {segment}")]
    Corruption { segment: usize },
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, SidecarError>;

/// Everything in the header except the offset table.
#[derive(Debug, Clone)]
pub struct SidecarInfo {
    pub version: u16,
    pub rho: u32,
    pub mode: RefineMode,
    pub topology: RefinerTopology,
    pub segment_count: u32,
}

impl SidecarInfo {
    /// Header bytes before the offset table.
    pub fn prefix_len(&self) -> u64 {
        8 + 2 + 4 + 1 + 1 + 5 * self.topology.layers().len() as u64 + 4
    }

    pub fn header_len(&self) -> u64 {
        self.prefix_len() + 8 * self.segment_count as u64
    }

    /// Size of one segment block in bytes.
    pub fn block_len(&self) -> u64 {
        12 + 4 * parameter_count(&self.topology) as u64 + 4
    }
}

fn mode_byte(mode: RefineMode) -> u8 {
    match mode {
        RefineMode::Direct => 0,
        RefineMode::Residual => 1,
    }
}

fn mode_from_byte(b: u8) -> Result<RefineMode> {
    match b {
        0 => Ok(RefineMode::Direct),
        1 => Ok(RefineMode::Residual),
        other => Err(SidecarError::Format(format!("unknown mode byte {other}"))),
    }
}

/// Serializes a parameter array; returns bytes written.
pub fn write_sidecar<W: Write>(
    array: &ParameterArray,
    topology: &RefinerTopology,
    mode: RefineMode,
    mut sink: W,
) -> Result<u64> {
    if array.is_empty() {
        return Err(SidecarError::InvalidArgument("parameter array has no segments".into()));
    }
    if topology.id() != array.topology_id() {
        return Err(SidecarError::InvalidArgument(
            "topology does not match the parameter array".into(),
        ));
    }
    for spec in topology.layers() {
        if spec.in_channels > u16::MAX as usize
            || spec.out_channels > u16::MAX as usize
            || spec.kernel > u8::MAX as usize
        {
            return Err(SidecarError::InvalidArgument("layer shape exceeds format limits".into()));
        }
    }
    let info = SidecarInfo {
        version: VERSION,
        rho: array.config().rho as u32,
        mode,
        topology: topology.clone(),
        segment_count: array.len() as u32,
    };

    let mut buf = Vec::with_capacity(info.header_len() as usize);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&info.version.to_le_bytes());
    buf.extend_from_slice(&info.rho.to_le_bytes());
    buf.push(mode_byte(mode));
    buf.push(topology.layers().len() as u8);
    for spec in topology.layers() {
        buf.extend_from_slice(&(spec.in_channels as u16).to_le_bytes());
        buf.extend_from_slice(&(spec.out_channels as u16).to_le_bytes());
        buf.push(spec.kernel as u8);
    }
    buf.extend_from_slice(&info.segment_count.to_le_bytes());
    let mut offset = info.header_len();
    for _ in array.entries() {
        buf.extend_from_slice(&offset.to_le_bytes());
        offset += info.block_len();
    }
    debug_assert_eq!(buf.len() as u64, info.header_len());

    for (desc, params) in array.entries() {
        buf.extend_from_slice(&(desc.index as u32).to_le_bytes());
        buf.extend_from_slice(&(desc.start_frame as u32).to_le_bytes());
        buf.extend_from_slice(&(desc.end_frame as u32).to_le_bytes());
        let payload_start = buf.len();
        for v in &params.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&buf[payload_start..]);
        buf.extend_from_slice(&crc.to_le_bytes());
    }
    sink.write_all(&buf)?;
    Ok(buf.len() as u64)
}

fn read_exact_or_format<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            SidecarError::Format("truncated stream".into())
        } else {
            SidecarError::Io(e)
        }
    })
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact_or_format(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_format(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_or_format(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact_or_format(r, &mut b)?;
    Ok(b[0])
}

/// Reads the header prefix (everything before the offset table).
pub fn read_info<R: Read>(r: &mut R) -> Result<SidecarInfo> {
    let mut magic = [0u8; 8];
    read_exact_or_format(r, &mut magic)?;
    if magic != MAGIC {
        return Err(SidecarError::Format("bad magic".into()));
    }
    let version = read_u16(r)?;
    if version != VERSION {
        return Err(SidecarError::Format(format!("unsupported version {version}")));
    }
    let rho = read_u32(r)?;
    if rho == 0 {
        return Err(SidecarError::Format("rho is zero".into()));
    }
    let mode = mode_from_byte(read_u8(r)?)?;
    let layer_count = read_u8(r)?;
    if layer_count == 0 {
        return Err(SidecarError::Format("zero layers".into()));
    }
    let mut layers = Vec::with_capacity(layer_count as usize);
    for _ in 0..layer_count {
        let in_c = read_u16(r)? as usize;
        let out_c = read_u16(r)? as usize;
        let k = read_u8(r)? as usize;
        layers.push(
            ConvSpec::new(in_c, out_c, k)
                .map_err(|e| SidecarError::Format(format!("bad layer spec: {e}")))?,
        );
    }
    let topology = RefinerTopology::new(layers)
        .map_err(|e| SidecarError::Format(format!("bad topology: {e}")))?;
    let segment_count = read_u32(r)?;
    if segment_count == 0 {
        return Err(SidecarError::Format("zero segments".into()));
    }
    Ok(SidecarInfo { version, rho, mode, topology, segment_count })
}

fn read_block<R: Read>(
    r: &mut R,
    info: &SidecarInfo,
    expected_index: usize,
) -> Result<(SegmentDescriptor, ParameterSet)> {
    let index = read_u32(r)? as usize;
    let start_frame = read_u32(r)? as usize;
    let end_frame = read_u32(r)? as usize;
    if index != expected_index {
        return Err(SidecarError::Format(format!(
            "block index {index} where {expected_index} expected"
        )));
    }
    if start_frame == 0 || end_frame < start_frame {
        return Err(SidecarError::Format(format!(
            "block {index} has bad frame range {start_frame}..={end_frame}"
        )));
    }
    let count = parameter_count(&info.topology);
    let mut payload = vec![0u8; 4 * count];
    read_exact_or_format(r, &mut payload)?;
    let stored_crc = read_u32(r)?;
    if crc32fast::hash(&payload) != stored_crc {
        return Err(SidecarError::Corruption { segment: index });
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let params = ParameterSet::new(values, &info.topology)
        .map_err(|e| SidecarError::Format(format!("block {index}: {e}")))?;
    Ok((SegmentDescriptor { index, start_frame, end_frame }, params))
}

/// Reads a whole sidecar stream. Fails closed: any malformed header,
/// offset, or checksum yields an error and no partial array.
pub fn read_sidecar<R: Read>(mut source: R) -> Result<(ParameterArray, RefinerTopology, RefineMode)> {
    let info = read_info(&mut source)?;
    let mut offsets = Vec::with_capacity(info.segment_count as usize);
    for _ in 0..info.segment_count {
        offsets.push(read_u64(&mut source)?);
    }
    let mut expected = info.header_len();
    for &off in &offsets {
        if off != expected {
            return Err(SidecarError::Format(format!(
                "offset table entry {off} does not match expected {expected}"
            )));
        }
        expected += info.block_len();
    }
    let config = SegmentationConfig::new(info.rho as usize)
        .map_err(|e| SidecarError::Format(e.to_string()))?;
    let mut array = ParameterArray::new(config, info.topology.id());
    for i in 0..info.segment_count as usize {
        let (desc, params) = read_block(&mut source, &info, i)?;
        array
            .append_segment(desc, params)
            .map_err(|e| SidecarError::Format(format!("block {i}: {e}")))?;
    }
    Ok((array, info.topology, info.mode))
}

/// Random access: reads only the header prefix, one offset-table entry,
/// and block `k`.
pub fn read_segment_block<R: Read + Seek>(
    source: &mut R,
    k: usize,
) -> Result<(SegmentDescriptor, ParameterSet)> {
    let info = read_info(source)?;
    if k >= info.segment_count as usize {
        return Err(SidecarError::OutOfRange(format!(
            "segment {k} of {}",
            info.segment_count
        )));
    }
    source.seek(SeekFrom::Start(info.prefix_len() + 8 * k as u64))?;
    let offset = read_u64(source)?;
    source.seek(SeekFrom::Start(offset))?;
    read_block(source, &info, k)
}

/// Sidecar overhead in bits per pixel of the covered video.
pub fn rate_overhead(
    sidecar_bytes: u64,
    frame_count: usize,
    width: usize,
    height: usize,
) -> Result<f64> {
    if frame_count == 0 || width == 0 || height == 0 {
        return Err(SidecarError::InvalidArgument(
            "frame count and dimensions must be positive".into(),
        ));
    }
    Ok(8.0 * sidecar_bytes as f64 / (frame_count as f64 * width as f64 * height as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use segrefine_core::model::init_parameters;
    use segrefine_core::segment::partition;
    use std::io::Cursor;

    pub(crate) fn sample_array(
        topology: &RefinerTopology,
        frames: usize,
        rho: usize,
    ) -> ParameterArray {
        let config = SegmentationConfig::new(rho).unwrap();
        let mut array = ParameterArray::new(config, topology.id());
        for desc in partition(frames, &config).unwrap() {
            let params = init_parameters(topology, RefineMode::Residual, desc.index as u64);
            array.append_segment(desc, params).unwrap();
        }
        array
    }

    #[test]
    fn empty_array_rejected() {
        let topology = RefinerTopology::standard(4).unwrap();
        let array = ParameterArray::new(SegmentationConfig::default(), topology.id());
        assert!(matches!(
            write_sidecar(&array, &topology, RefineMode::Residual, Vec::new()),
            Err(SidecarError::InvalidArgument(_))
        ));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let topology = RefinerTopology::standard(4).unwrap();
        let array = sample_array(&topology, 23, 5);
        let mut buf = Vec::new();
        let bytes = write_sidecar(&array, &topology, RefineMode::Residual, &mut buf).unwrap();
        assert_eq!(bytes, buf.len() as u64);
        let (back, topo, mode) = read_sidecar(&buf[..]).unwrap();
        assert_eq!(mode, RefineMode::Residual);
        assert_eq!(topo, topology);
        assert_eq!(back, array);
        for ((d1, p1), (d2, p2)) in array.entries().iter().zip(back.entries()) {
            assert_eq!(d1, d2);
            for (a, b) in p1.values.iter().zip(&p2.values) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn default_topology_payload_size() {
        let topology = RefinerTopology::default();
        let array = sample_array(&topology, 50, 50);
        let mut buf = Vec::new();
        write_sidecar(&array, &topology, RefineMode::Residual, &mut buf).unwrap();
        let info = read_info(&mut Cursor::new(&buf)).unwrap();
        assert_eq!(info.block_len(), 12 + 102156 + 4);
        assert_eq!(buf.len() as u64, info.header_len() + info.block_len());
    }

    #[test]
    fn truncated_stream_fails_closed() {
        let topology = RefinerTopology::standard(4).unwrap();
        let array = sample_array(&topology, 10, 5);
        let mut buf = Vec::new();
        write_sidecar(&array, &topology, RefineMode::Direct, &mut buf).unwrap();
        for cut in [3, 17, buf.len() / 2, buf.len() - 2] {
            assert!(
                matches!(read_sidecar(&buf[..cut]), Err(SidecarError::Format(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn flipped_payload_byte_corrupts_one_segment() {
        let topology = RefinerTopology::standard(4).unwrap();
        let array = sample_array(&topology, 10, 5);
        let mut buf = Vec::new();
        write_sidecar(&array, &topology, RefineMode::Residual, &mut buf).unwrap();
        let info = read_info(&mut Cursor::new(&buf)).unwrap();
        // flip a byte in the middle of block 1's payload
        let pos = (info.header_len() + info.block_len() + 12 + info.block_len() / 2) as usize;
        buf[pos] ^= 0xff;
        match read_sidecar(&buf[..]) {
            Err(SidecarError::Corruption { segment }) => assert_eq!(segment, 1),
            other => panic!("{other:?}"),
        }
        // block 0 still reads fine via random access
        let (desc, params) = read_segment_block(&mut Cursor::new(&buf), 0).unwrap();
        assert_eq!(desc, array.entries()[0].0);
        assert_eq!(params, array.entries()[0].1);
    }

    #[test]
    fn random_access_matches_full_read() {
        let topology = RefinerTopology::standard(4).unwrap();
        let array = sample_array(&topology, 50, 5);
        let mut buf = Vec::new();
        write_sidecar(&array, &topology, RefineMode::Residual, &mut buf).unwrap();
        for k in 0..10 {
            let (desc, params) = read_segment_block(&mut Cursor::new(&buf), k).unwrap();
            assert_eq!(desc, array.entries()[k].0);
            assert_eq!(params, array.entries()[k].1);
        }
        assert!(matches!(
            read_segment_block(&mut Cursor::new(&buf), 10),
            Err(SidecarError::OutOfRange(_))
        ));
    }

    #[test]
    fn rate_overhead_examples() {
        let bpp = rate_overhead(102156, 50, 1280, 720).unwrap();
        assert!((bpp - 0.01774).abs() < 1e-5, "{bpp}");
        assert_eq!(rate_overhead(0, 50, 1280, 720).unwrap(), 0.0);
        let half = rate_overhead(102156, 100, 1280, 720).unwrap();
        assert!((half - bpp / 2.0).abs() < 1e-12);
        assert!(rate_overhead(1, 0, 1, 1).is_err());
    }
}
