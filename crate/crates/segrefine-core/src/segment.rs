//! Fixed-duration video segmentation and the dynamically expanded
//! per-segment parameter array. Frame indices are 1-based.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::model::ParameterSet;

pub const DEFAULT_RHO: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentationConfig {
    pub rho: usize,
}

impl SegmentationConfig {
    pub fn new(rho: usize) -> Result<Self> {
        if rho == 0 {
            return Err(CoreError::InvalidArgument("rho must be at least 1".into()));
        }
        Ok(SegmentationConfig { rho })
    }
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig { rho: DEFAULT_RHO }
    }
}

/// One contiguous inclusive frame range of length at most rho.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentDescriptor {
    pub index: usize,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl SegmentDescriptor {
    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.start_frame..=self.end_frame).contains(&t)
    }
}

/// Splits `frame_count` frames into ceil(frame_count/rho) contiguous
/// segments; all are full length except possibly the last.
pub fn partition(frame_count: usize, config: &SegmentationConfig) -> Result<Vec<SegmentDescriptor>> {
    if frame_count == 0 {
        return Err(CoreError::InvalidArgument("frame count must be at least 1".into()));
    }
    let rho = config.rho;
    let mut out = Vec::with_capacity(frame_count.div_ceil(rho));
    let mut start = 1;
    let mut index = 0;
    while start <= frame_count {
        let end = (start + rho - 1).min(frame_count);
        out.push(SegmentDescriptor { index, start_frame: start, end_frame: end });
        start = end + 1;
        index += 1;
    }
    Ok(out)
}

/// Ordered (descriptor, parameters) pairs tiling frames 1..=last end.
/// Grows one entry per segment; entries are immutable once appended.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterArray {
    entries: Vec<(SegmentDescriptor, ParameterSet)>,
    config: SegmentationConfig,
    topology_id: u64,
}

impl ParameterArray {
    pub fn new(config: SegmentationConfig, topology_id: u64) -> Self {
        ParameterArray { entries: Vec::new(), config, topology_id }
    }

    pub fn entries(&self) -> &[(SegmentDescriptor, ParameterSet)] {
        &self.entries
    }

    pub fn config(&self) -> &SegmentationConfig {
        &self.config
    }

    pub fn topology_id(&self) -> u64 {
        self.topology_id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Last covered frame index, or 0 when empty.
    pub fn frame_count(&self) -> usize {
        self.entries.last().map_or(0, |(d, _)| d.end_frame)
    }

    /// Appends the next segment; the descriptor must continue the tiling
    /// exactly where the previous one ended.
    pub fn append_segment(
        &mut self,
        descriptor: SegmentDescriptor,
        params: ParameterSet,
    ) -> Result<()> {
        if descriptor.start_frame > descriptor.end_frame {
            return Err(CoreError::InvalidArgument(format!(
                "descriptor start {} after end {}",
                descriptor.start_frame, descriptor.end_frame
            )));
        }
        if descriptor.len() > self.config.rho {
            return Err(CoreError::InvalidArgument(format!(
                "segment length {} exceeds rho {}",
                descriptor.len(),
                self.config.rho
            )));
        }
        let expected_start = self.frame_count() + 1;
        if descriptor.start_frame != expected_start {
            return Err(CoreError::TilingViolation(format!(
                "segment starts at frame {}, expected {}",
                descriptor.start_frame, expected_start
            )));
        }
        if descriptor.index != self.entries.len() {
            return Err(CoreError::TilingViolation(format!(
                "segment index {}, expected {}",
                descriptor.index,
                self.entries.len()
            )));
        }
        if params.topology_id != self.topology_id {
            return Err(CoreError::InvalidArgument(format!(
                "parameter topology id {:#x} does not match array {:#x}",
                params.topology_id, self.topology_id
            )));
        }
        self.entries.push((descriptor, params));
        Ok(())
    }

    /// Selects the entry whose range contains frame `t` (1-based).
    /// Constant-time: all segments except the last have length rho.
    pub fn lookup(&self, t: usize) -> Result<(&SegmentDescriptor, &ParameterSet)> {
        if t == 0 || t > self.frame_count() {
            return Err(CoreError::OutOfRange(format!(
                "frame {t} outside covered range 1..={}",
                self.frame_count()
            )));
        }
        let idx = ((t - 1) / self.config.rho).min(self.entries.len() - 1);
        let (d, p) = &self.entries[idx];
        debug_assert!(d.contains(t));
        Ok((d, p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_parameters, RefineMode, RefinerTopology};
    use alloc::vec;
    use proptest::prelude::*;

    fn tiny_params() -> (RefinerTopology, ParameterSet) {
        let t = RefinerTopology::new(vec![crate::nn::ConvSpec::new(1, 1, 1).unwrap()]).unwrap();
        let p = init_parameters(&t, RefineMode::Direct, 0);
        (t, p)
    }

    #[test]
    fn partition_examples() {
        let cfg = SegmentationConfig::new(50).unwrap();
        let segs = partition(120, &cfg).unwrap();
        assert_eq!(
            segs,
            vec![
                SegmentDescriptor { index: 0, start_frame: 1, end_frame: 50 },
                SegmentDescriptor { index: 1, start_frame: 51, end_frame: 100 },
                SegmentDescriptor { index: 2, start_frame: 101, end_frame: 120 },
            ]
        );
        assert_eq!(partition(50, &cfg).unwrap().len(), 1);
        let one = partition(1, &cfg).unwrap();
        assert_eq!(one, vec![SegmentDescriptor { index: 0, start_frame: 1, end_frame: 1 }]);
        assert!(partition(0, &cfg).is_err());
    }

    #[test]
    fn lookup_boundaries() {
        let (t, p) = tiny_params();
        let cfg = SegmentationConfig::new(50).unwrap();
        let mut arr = ParameterArray::new(cfg, t.id());
        for d in partition(120, &cfg).unwrap() {
            arr.append_segment(d, p.clone()).unwrap();
        }
        assert_eq!(arr.lookup(1).unwrap().0.index, 0);
        assert_eq!(arr.lookup(50).unwrap().0.index, 0);
        assert_eq!(arr.lookup(51).unwrap().0.index, 1);
        assert_eq!(arr.lookup(120).unwrap().0.index, 2);
        assert!(arr.lookup(0).is_err());
        assert!(arr.lookup(121).is_err());
    }

    #[test]
    fn append_rejects_gap_and_wrong_topology() {
        let (t, p) = tiny_params();
        let cfg = SegmentationConfig::new(50).unwrap();
        let mut arr = ParameterArray::new(cfg, t.id());
        arr.append_segment(
            SegmentDescriptor { index: 0, start_frame: 1, end_frame: 50 },
            p.clone(),
        )
        .unwrap();
        let err = arr
            .append_segment(SegmentDescriptor { index: 1, start_frame: 60, end_frame: 100 }, p.clone())
            .unwrap_err();
        assert!(matches!(err, CoreError::TilingViolation(_)));

        let other = RefinerTopology::new(vec![crate::nn::ConvSpec::new(1, 2, 1).unwrap()]).unwrap();
        let bad = init_parameters(&other, RefineMode::Direct, 0);
        let err = arr
            .append_segment(SegmentDescriptor { index: 1, start_frame: 51, end_frame: 100 }, bad)
            .unwrap_err();
        assert!(matches!(err, CoreError::InvalidArgument(_)));
    }

    #[test]
    fn appending_many_segments_keeps_lookup_consistent() {
        let (t, p) = tiny_params();
        let cfg = SegmentationConfig::new(50).unwrap();
        let mut arr = ParameterArray::new(cfg, t.id());
        for d in partition(5000, &cfg).unwrap() {
            arr.append_segment(d, p.clone()).unwrap();
        }
        assert_eq!(arr.len(), 100);
        for t in 1..=5000 {
            // linear-scan oracle
            let want = arr.entries().iter().position(|(d, _)| d.contains(t)).unwrap();
            assert_eq!(arr.lookup(t).unwrap().0.index, want);
        }
    }

    #[test]
    fn append_does_not_mutate_existing_entries() {
        let (t, p) = tiny_params();
        let cfg = SegmentationConfig::new(10).unwrap();
        let mut arr = ParameterArray::new(cfg, t.id());
        arr.append_segment(SegmentDescriptor { index: 0, start_frame: 1, end_frame: 10 }, p.clone())
            .unwrap();
        let snapshot = arr.entries().to_vec();
        arr.append_segment(SegmentDescriptor { index: 1, start_frame: 11, end_frame: 20 }, p)
            .unwrap();
        assert_eq!(&arr.entries()[..1], &snapshot[..]);
    }

    proptest! {
        #[test]
        fn tiling_and_lookup_agree_with_oracle(
            frames in 1usize..3000,
            rho in 1usize..200,
        ) {
            let cfg = SegmentationConfig::new(rho).unwrap();
            let segs = partition(frames, &cfg).unwrap();
            prop_assert_eq!(segs.len(), frames.div_ceil(rho));
            prop_assert_eq!(segs[0].start_frame, 1);
            prop_assert_eq!(segs.last().unwrap().end_frame, frames);
            for pair in segs.windows(2) {
                prop_assert_eq!(pair[0].len(), rho);
                prop_assert_eq!(pair[1].start_frame, pair[0].end_frame + 1);
            }
            let (t, p) = tiny_params();
            let mut arr = ParameterArray::new(cfg, t.id());
            for d in &segs {
                arr.append_segment(*d, p.clone()).unwrap();
            }
            for probe in [1, frames / 2 + 1, frames] {
                let idx = arr.lookup(probe).unwrap().0.index;
                let want = segs.iter().position(|d| d.contains(probe)).unwrap();
                prop_assert_eq!(idx, want);
                prop_assert_eq!(idx, ((probe - 1) / rho).min(segs.len() - 1));
            }
        }
    }
}
