//! GOP scheduling: which frames are fully coded backbone frames (I/P) and
//! which are carried only as flow fields (MV), and who references whom.
//!
//! Indices in this module are 1-based. For an MV interval `m`, backbone frames
//! sit at the centers of consecutive `(m + 1)`-frame groups, i.e. at
//! `k * (m + 1) - floor(m / 2)` for `k = 1, 2, ...`. With `m = 2` this is the
//! familiar `3t + 2` pattern `[MV, I, MV, MV, P, MV, ...]`.

use crate::error::{Error, Result};
use crate::frame::{Frame, FrameSequence};

/// Coding type of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameType {
    I,
    P,
    Mv,
}

impl FrameType {
    pub const ALL: [FrameType; 3] = [FrameType::I, FrameType::P, FrameType::Mv];

    /// Channel of the one-hot type map and byte code in the container.
    pub fn code(self) -> u8 {
        match self {
            FrameType::I => 0,
            FrameType::P => 1,
            FrameType::Mv => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FrameType::I),
            1 => Some(FrameType::P),
            2 => Some(FrameType::Mv),
            _ => None,
        }
    }

    pub fn is_backbone(self) -> bool {
        !matches!(self, FrameType::Mv)
    }
}

impl std::fmt::Display for FrameType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FrameType::I => "I",
            FrameType::P => "P",
            FrameType::Mv => "MV",
        })
    }
}

/// How an MV frame is reconstructed: warp `source` toward `target`.
///
/// `anchor` is the backbone frame the chain starts from. For intervals 1 and 2
/// `source == anchor`; interval 4 adds two-link chains through the adjacent
/// MV frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MvLink {
    pub target: usize,
    pub source: usize,
    pub anchor: usize,
}

impl MvLink {
    /// Number of warps between the anchor and the target.
    pub fn chain_length(&self) -> usize {
        self.target.abs_diff(self.anchor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GopSchedule {
    length: usize,
    mv_interval: usize,
    types: Vec<FrameType>,
    /// Ordered by chain length, then target index; sources always precede
    /// their dependents.
    mv_links: Vec<MvLink>,
    p_chain: Vec<usize>,
}

pub const SUPPORTED_INTERVALS: [usize; 3] = [1, 2, 4];

/// Builds the schedule for a GOP of `length` frames with `mv_interval` MV
/// frames between consecutive backbone frames.
pub fn build_schedule(length: usize, mv_interval: usize) -> Result<GopSchedule> {
    if length < 3 {
        return Err(Error::Schedule(format!("GOP length {length} is below the minimum of 3")));
    }
    if !SUPPORTED_INTERVALS.contains(&mv_interval) {
        return Err(Error::Schedule(format!("mv_interval {mv_interval} not in {SUPPORTED_INTERVALS:?}")));
    }
    let period = mv_interval + 1;
    let offset = mv_interval / 2;
    let backbone: Vec<usize> = (1..).map(|k| k * period - offset).take_while(|&i| i <= length).collect();
    if backbone.is_empty() {
        return Err(Error::Schedule(format!("GOP length {length} holds no backbone frame for interval {mv_interval}")));
    }

    let reach = mv_interval.div_ceil(2);
    let mut types = vec![FrameType::Mv; length];
    for (n, &i) in backbone.iter().enumerate() {
        types[i - 1] = if n == 0 { FrameType::I } else { FrameType::P };
    }

    let mut mv_links = Vec::with_capacity(length - backbone.len());
    for i in (1..=length).filter(|&i| types[i - 1] == FrameType::Mv) {
        // ties (interval 1) go to the following backbone frame
        let anchor = backbone.iter().copied().min_by_key(|&j| (j.abs_diff(i), j < i)).expect("backbone is non-empty");
        let distance = anchor.abs_diff(i);
        if distance > reach {
            return Err(Error::Schedule(format!(
                "frame {i} is {distance} frames from the nearest backbone frame {anchor}; \
                 interval {mv_interval} allows at most {reach} (pad the GOP to a compatible length)"
            )));
        }
        let source = if anchor > i { i + 1 } else { i - 1 };
        mv_links.push(MvLink { target: i, source, anchor });
    }
    mv_links.sort_by_key(|l| (l.chain_length(), l.target));

    Ok(GopSchedule { length, mv_interval, types, mv_links, p_chain: backbone })
}

/// True when `build_schedule(length, mv_interval)` would succeed.
pub fn is_compatible(length: usize, mv_interval: usize) -> bool {
    build_schedule(length, mv_interval).is_ok()
}

/// Smallest length `>= length` accepted by `build_schedule`.
pub fn next_compatible_length(length: usize, mv_interval: usize) -> Result<usize> {
    if !SUPPORTED_INTERVALS.contains(&mv_interval) {
        return Err(Error::Schedule(format!("unsupported interval {mv_interval}")));
    }
    (length.max(3)..).find(|&t| is_compatible(t, mv_interval)).ok_or_else(|| Error::Schedule("no compatible length".into()))
}

impl GopSchedule {
    /// Every frame is a backbone frame: one I followed by P frames. This is the
    /// "direct" baseline with no flow-only frames; `mv_interval()` reports 0.
    pub fn all_backbone(length: usize) -> Result<GopSchedule> {
        if length == 0 {
            return Err(Error::Schedule("empty GOP".into()));
        }
        let mut types = vec![FrameType::P; length];
        types[0] = FrameType::I;
        Ok(GopSchedule { length, mv_interval: 0, types, mv_links: Vec::new(), p_chain: (1..=length).collect() })
    }

    /// Rebuilds a schedule for `(length, mv_interval)`, where interval 0 means
    /// all-backbone.
    pub fn for_interval(length: usize, mv_interval: usize) -> Result<GopSchedule> {
        if mv_interval == 0 {
            Self::all_backbone(length)
        } else {
            build_schedule(length, mv_interval)
        }
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn mv_interval(&self) -> usize {
        self.mv_interval
    }

    pub fn types(&self) -> &[FrameType] {
        &self.types
    }

    /// 1-based lookup.
    pub fn frame_type(&self, index: usize) -> FrameType {
        self.types[index - 1]
    }

    /// Backbone indices in coding order; the first one is the I frame.
    pub fn p_chain(&self) -> &[usize] {
        &self.p_chain
    }

    pub fn mv_links(&self) -> &[MvLink] {
        &self.mv_links
    }

    pub fn mv_indices(&self) -> Vec<usize> {
        (1..=self.length).filter(|&i| self.types[i - 1] == FrameType::Mv).collect()
    }

    pub fn link_for(&self, target: usize) -> Option<&MvLink> {
        self.mv_links.iter().find(|l| l.target == target)
    }

    /// Backbone reference (anchor) of an MV frame.
    pub fn reference(&self, target: usize) -> Option<usize> {
        self.link_for(target).map(|l| l.anchor)
    }

    /// Previous backbone frame of a P frame.
    pub fn p_reference(&self, index: usize) -> Option<usize> {
        let pos = self.p_chain.iter().position(|&i| i == index)?;
        (pos > 0).then(|| self.p_chain[pos - 1])
    }

    pub fn backbone_count(&self) -> usize {
        self.p_chain.len()
    }

    pub fn mv_count(&self) -> usize {
        self.mv_links.len()
    }

    pub fn backbone_proportion(&self) -> f64 {
        self.backbone_count() as f64 / self.length as f64
    }

    pub fn max_chain_length(&self) -> usize {
        self.mv_links.iter().map(MvLink::chain_length).max().unwrap_or(0)
    }

    /// One type code per frame.
    pub fn type_bytes(&self) -> Vec<u8> {
        self.types.iter().map(|t| t.code()).collect()
    }
}

/// Positions of backbone and MV frames inside the original order (1-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMap {
    pub length: usize,
    pub backbone_indices: Vec<usize>,
    pub mv_indices: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Split {
    pub backbone: FrameSequence,
    /// Empty for all-backbone schedules.
    pub mv: Vec<Frame>,
    pub map: SplitMap,
}

/// Separates a sequence into its backbone and MV frames, both in display order.
pub fn split_sequence(seq: &FrameSequence, sched: &GopSchedule) -> Result<Split> {
    if seq.len() != sched.length() {
        return Err(Error::Schedule(format!("sequence has {} frames, schedule expects {}", seq.len(), sched.length())));
    }
    let backbone_indices = sched.p_chain().to_vec();
    let mv_indices = sched.mv_indices();
    let backbone = FrameSequence::new(backbone_indices.iter().map(|&i| seq.at(i).clone()).collect())?;
    let mv = mv_indices.iter().map(|&i| seq.at(i).clone()).collect();
    Ok(Split { backbone, mv, map: SplitMap { length: sched.length(), backbone_indices, mv_indices } })
}

/// Inverse of [`split_sequence`].
pub fn reassemble(backbone: &FrameSequence, mv: &[Frame], map: &SplitMap) -> Result<FrameSequence> {
    if map.length < 3 {
        return Err(Error::Schedule(format!("GOP length {} is below 3", map.length)));
    }
    if backbone.len() != map.backbone_indices.len() || mv.len() != map.mv_indices.len() {
        return Err(Error::Schedule(format!(
            "got {} backbone / {} MV frames, map expects {} / {}",
            backbone.len(),
            mv.len(),
            map.backbone_indices.len(),
            map.mv_indices.len()
        )));
    }
    if map.backbone_indices.len() + map.mv_indices.len() != map.length {
        return Err(Error::Schedule("split map does not cover the GOP".into()));
    }
    let mut slots: Vec<Option<Frame>> = vec![None; map.length];
    let sources = map.backbone_indices.iter().zip(backbone.iter()).chain(map.mv_indices.iter().zip(mv.iter()));
    for (&i, frame) in sources {
        let slot = slots.get_mut(i.wrapping_sub(1)).ok_or_else(|| Error::Schedule(format!("index {i} out of range")))?;
        if slot.replace(frame.clone()).is_some() {
            return Err(Error::Schedule(format!("index {i} appears twice")));
        }
    }
    let frames = slots
        .into_iter()
        .enumerate()
        .map(|(i, f)| f.ok_or_else(|| Error::Schedule(format!("index {} missing", i + 1))))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use FrameType::{Mv, I, P};

    #[test]
    fn nine_frame_pattern() {
        let s = build_schedule(9, 2).unwrap();
        assert_eq!(s.types(), &[Mv, I, Mv, Mv, P, Mv, Mv, P, Mv]);
        let refs: Vec<_> = s.mv_indices().iter().map(|&i| (i, s.reference(i).unwrap())).collect();
        assert_eq!(refs, vec![(1, 2), (3, 2), (4, 5), (6, 5), (7, 8), (9, 8)]);
        assert_eq!(s.p_chain(), &[2, 5, 8]);
        assert_eq!(s.p_reference(5), Some(2));
        assert_eq!(s.p_reference(8), Some(5));
        assert_eq!(s.p_reference(2), None);
    }

    #[test]
    fn thirty_three_frames() {
        let s = build_schedule(33, 2).unwrap();
        assert_eq!(s.backbone_count(), 11);
        assert_eq!(s.mv_count(), 22);
        assert_eq!(s.types().iter().filter(|t| **t == I).count(), 1);
        assert_eq!(format!("{:.1}", 100.0 * s.backbone_proportion()), "33.3");
    }

    #[test]
    fn smallest_schedule() {
        let s = build_schedule(3, 2).unwrap();
        assert_eq!(s.types(), &[Mv, I, Mv]);
        assert_eq!(s.reference(1), Some(2));
        assert_eq!(s.reference(3), Some(2));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(build_schedule(2, 2).is_err());
        assert!(build_schedule(9, 3).is_err());
        // frame 4 would be two frames from backbone 2
        assert!(build_schedule(4, 2).is_err());
        assert!(build_schedule(7, 2).is_err());
        assert!(build_schedule(5, 2).is_ok());
        assert_eq!(next_compatible_length(7, 2).unwrap(), 8);
    }

    #[test]
    fn interval_variants_at_33() {
        let dense = build_schedule(33, 1).unwrap();
        assert_eq!(dense.backbone_count(), 16);
        assert!(dense.mv_links().iter().all(|l| l.chain_length() == 1));
        let sparse = build_schedule(33, 4).unwrap();
        assert_eq!(sparse.backbone_count(), 7);
        assert_eq!(sparse.p_chain(), &[3, 8, 13, 18, 23, 28, 33]);
        assert_eq!(sparse.max_chain_length(), 2);
        let l1 = sparse.link_for(1).unwrap();
        assert_eq!((l1.source, l1.anchor), (2, 3));
    }

    #[test]
    fn links_are_ordered_by_dependency() {
        let s = build_schedule(33, 4).unwrap();
        for (n, link) in s.mv_links().iter().enumerate() {
            if link.source != link.anchor {
                assert!(s.mv_links()[..n].iter().any(|l| l.target == link.source));
            }
        }
    }

    #[test]
    fn all_backbone_schedule() {
        let s = GopSchedule::all_backbone(4).unwrap();
        assert_eq!(s.types(), &[I, P, P, P]);
        assert_eq!(s.mv_interval(), 0);
        assert_eq!(s.p_reference(4), Some(3));
    }

    fn seq(n: usize) -> FrameSequence {
        FrameSequence::new((0..n).map(|i| Frame::filled(2, 2, 1, i as f32 / n as f32).unwrap()).collect()).unwrap()
    }

    #[test]
    fn split_nine() {
        let s = build_schedule(9, 2).unwrap();
        let x = seq(9);
        let split = split_sequence(&x, &s).unwrap();
        assert_eq!(split.map.backbone_indices, vec![2, 5, 8]);
        assert_eq!(split.map.mv_indices, vec![1, 3, 4, 6, 7, 9]);
        assert_eq!(split.backbone.frame(1), x.at(5));
        assert_eq!(reassemble(&split.backbone, &split.mv, &split.map).unwrap(), x);
    }

    #[test]
    fn split_length_mismatch() {
        let s = build_schedule(9, 2).unwrap();
        assert!(split_sequence(&seq(6), &s).is_err());
    }

    #[test]
    fn reassemble_count_mismatch() {
        let s = build_schedule(3, 2).unwrap();
        let split = split_sequence(&seq(3), &s).unwrap();
        assert!(reassemble(&split.backbone, &split.mv[..1], &split.map).is_err());
        let tiny = SplitMap { length: 1, backbone_indices: vec![1], mv_indices: vec![] };
        assert!(reassemble(&split.backbone, &[], &tiny).is_err());
    }
}
