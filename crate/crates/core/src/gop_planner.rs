//! Decode planning: frame selection, GOP-granular partitioning across ranks
//! and engines, and temporal-patch alignment.
//!
//! A GOP is the smallest unit of independent decoding. Within a GOP,
//! decoding starts at the keyframe and runs through the last target frame
//! of that GOP; later frames are skipped.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec_sched::DecodeCostModel;
use crate::container_index::{Codec, ResolutionClass, VideoMeta};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("frame selection is empty")]
    EmptySelection,
    #[error("invalid frame selection: {0}")]
    InvalidSelection(String),
    #[error("invalid planner argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// `n` frames spread evenly over the video, both endpoints included.
    UniformCount(usize),
    /// One frame per `1/r` seconds of presentation time.
    Fps(f64),
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSelection {
    pub target_indices: Vec<usize>,
    pub policy: SelectionPolicy,
}

impl FrameSelection {
    pub fn len(&self) -> usize {
        self.target_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_indices.is_empty()
    }
}

/// Picks the target frames for `policy`.
///
/// `UniformCount` places target `i` at `i * (m - 1) / (n - 1)` rounded to the
/// nearest frame, halves rounding down; `n` is clamped to the frame count.
pub fn select_frames(meta: &VideoMeta, policy: &SelectionPolicy) -> Result<FrameSelection, PlanError> {
    let m = meta.frame_count();
    let target_indices = match policy {
        SelectionPolicy::UniformCount(0) => return Err(PlanError::EmptySelection),
        SelectionPolicy::UniformCount(n) => {
            let n = (*n).min(m);
            if n == 1 {
                vec![0]
            } else {
                let den = n - 1;
                (0..n)
                    .map(|i| {
                        let num = i * (m - 1);
                        // round half down: floor((2*num + den - 1) / (2*den))
                        (2 * num + den - 1) / (2 * den)
                    })
                    .collect()
            }
        }
        SelectionPolicy::Fps(rate) => {
            if !(rate.is_finite() && *rate > 0.0) {
                return Err(PlanError::EmptySelection);
            }
            let last = meta.frame_time(m - 1);
            let mut out: Vec<usize> = Vec::new();
            let mut frame = 0;
            let mut k = 0u64;
            loop {
                let t = k as f64 / rate;
                if t > last + 1e-9 {
                    break;
                }
                while frame < m && meta.frame_time(frame) < t - 1e-9 {
                    frame += 1;
                }
                if frame == m {
                    break;
                }
                if out.last() != Some(&frame) {
                    out.push(frame);
                }
                k += 1;
            }
            out
        }
        SelectionPolicy::Explicit(list) => {
            if list.is_empty() {
                return Err(PlanError::EmptySelection);
            }
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(PlanError::InvalidSelection(
                    "indices must be strictly increasing".into(),
                ));
            }
            if let Some(&bad) = list.iter().find(|&&i| i >= m) {
                return Err(PlanError::InvalidSelection(format!(
                    "index {bad} out of range for {m} frames"
                )));
            }
            list.clone()
        }
    };
    if target_indices.is_empty() {
        return Err(PlanError::EmptySelection);
    }
    Ok(FrameSelection {
        target_indices,
        policy: policy.clone(),
    })
}

/// Frames one engine decodes inside a single GOP, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeSpan {
    pub gop: usize,
    pub first: usize,
    pub last: usize,
}

impl DecodeSpan {
    pub fn frames(&self) -> usize {
        self.last - self.first + 1
    }
}

/// A contiguous run of GOPs assigned to one decode engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GopSegment {
    pub gop_range: Range<usize>,
    pub target_indices: Vec<usize>,
    pub target_pts: Vec<i64>,
    pub decode_spans: Vec<DecodeSpan>,
    /// Frames decoded, summed over `decode_spans`.
    pub est_work: usize,
}

impl GopSegment {
    /// Builds the segment that emits `targets` (sorted, non-empty).
    pub fn from_targets(meta: &VideoMeta, targets: &[usize]) -> Self {
        debug_assert!(!targets.is_empty());
        let mut decode_spans: Vec<DecodeSpan> = Vec::new();
        for &t in targets {
            let gop = meta.gop_of(t);
            match decode_spans.last_mut() {
                Some(span) if span.gop == gop => span.last = t,
                _ => decode_spans.push(DecodeSpan {
                    gop,
                    first: meta.keyframe_indices[gop],
                    last: t,
                }),
            }
        }
        let first_gop = decode_spans[0].gop;
        let last_gop = decode_spans[decode_spans.len() - 1].gop;
        GopSegment {
            gop_range: first_gop..last_gop + 1,
            target_indices: targets.to_vec(),
            target_pts: targets.iter().map(|&t| meta.frame_pts[t]).collect(),
            est_work: decode_spans.iter().map(DecodeSpan::frames).sum(),
            decode_spans,
        }
    }

    /// Number of seeks the engine performs: one initial seek for H.264,
    /// one per decoded GOP otherwise.
    pub fn seek_count(&self, codec: Codec) -> usize {
        if codec == Codec::H264 {
            1
        } else {
            self.decode_spans.len()
        }
    }
}

/// Per-rank, per-engine assignment of GOP segments for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodePlan {
    pub codec: Codec,
    pub resolution: ResolutionClass,
    /// Requested rank count.
    pub world_size: usize,
    /// Ranks that actually received work.
    pub effective_world_size: usize,
    pub num_engines: usize,
    /// Frames per temporal patch; 1 until the plan is aligned.
    pub temporal_patch: usize,
    /// Repeats of the final frame appended on the last rank.
    pub padding_frames: usize,
    /// Ranks folded into their predecessor during alignment.
    pub merged_ranks: usize,
    /// `ranks[r]` holds at most `num_engines` segments.
    pub ranks: Vec<Vec<GopSegment>>,
}

impl DecodePlan {
    pub fn rank_targets(&self, rank: usize) -> Vec<usize> {
        self.ranks[rank]
            .iter()
            .flat_map(|s| s.target_indices.iter().copied())
            .collect()
    }

    pub fn target_count(&self) -> usize {
        self.segments().map(|s| s.target_indices.len()).sum()
    }

    /// Frames rank `rank` hands to the encoder, padding included.
    pub fn emitted_frames(&self, rank: usize) -> usize {
        let targets: usize = self.ranks[rank].iter().map(|s| s.target_indices.len()).sum();
        if rank + 1 == self.ranks.len() {
            targets + self.padding_frames
        } else {
            targets
        }
    }

    pub fn total_emitted(&self) -> usize {
        self.target_count() + self.padding_frames
    }

    pub fn segments(&self) -> impl Iterator<Item = &GopSegment> {
        self.ranks.iter().flatten()
    }

    pub fn total_work(&self) -> usize {
        self.segments().map(|s| s.est_work).sum()
    }

    pub fn max_segment_work(&self) -> usize {
        self.segments().map(|s| s.est_work).max().unwrap_or(0)
    }
}

/// Splits sorted `weights` into at most `k` contiguous groups minimizing the
/// largest group sum. Returns group boundaries as index ranges, exactly
/// `min(k, weights.len())` of them.
fn balanced_split(weights: &[usize], k: usize) -> Vec<Range<usize>> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let k = k.clamp(1, n);
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0usize);
    for &w in weights {
        prefix.push(prefix[prefix.len() - 1] + w);
    }

    // greedy packing under `bound`: each group extends as far as the prefix
    // sums allow, found by binary search
    let pack = |bound: usize| -> Vec<Range<usize>> {
        let mut groups = Vec::new();
        let mut start = 0;
        while start < n {
            let limit = prefix[start] + bound;
            let end = prefix.partition_point(|&p| p <= limit) - 1;
            let end = end.max(start + 1);
            groups.push(start..end);
            start = end;
        }
        groups
    };

    let mut lo = weights.iter().copied().max().unwrap_or(0);
    let mut hi = prefix[n];
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pack(mid).len() <= k {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let mut groups = pack(lo);

    // use the remaining engines: split the heaviest multi-GOP group at its
    // most balanced point until there are k groups
    let sum = |r: &Range<usize>| prefix[r.end] - prefix[r.start];
    while groups.len() < k {
        let Some(idx) = groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.len() > 1)
            .max_by(|(ia, a), (ib, b)| sum(a).cmp(&sum(b)).then(ib.cmp(ia)))
            .map(|(i, _)| i)
        else {
            break;
        };
        let g = groups[idx].clone();
        let best = (g.start + 1..g.end)
            .min_by_key(|&cut| (prefix[cut] - prefix[g.start]).max(prefix[g.end] - prefix[cut]))
            .expect("group has at least two elements");
        groups.splice(idx..idx + 1, [g.start..best, best..g.end]);
    }
    groups
}

/// Groups sorted targets by GOP: `(gop, targets in that gop)`.
fn targets_by_gop(meta: &VideoMeta, targets: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut out: Vec<(usize, Vec<usize>)> = Vec::new();
    for &t in targets {
        let gop = meta.gop_of(t);
        match out.last_mut() {
            Some((g, list)) if *g == gop => list.push(t),
            _ => out.push((gop, vec![t])),
        }
    }
    out
}

/// Splits one rank's targets into at most `engines` work-balanced segments.
fn segment_rank(meta: &VideoMeta, targets: &[usize], engines: usize) -> Vec<GopSegment> {
    let by_gop = targets_by_gop(meta, targets);
    let weights: Vec<usize> = by_gop
        .iter()
        .map(|(g, ts)| ts[ts.len() - 1] - meta.keyframe_indices[*g] + 1)
        .collect();
    balanced_split(&weights, engines)
        .into_iter()
        .map(|r| {
            let ts: Vec<usize> = by_gop[r].iter().flat_map(|(_, ts)| ts.iter().copied()).collect();
            GopSegment::from_targets(meta, &ts)
        })
        .collect()
}

fn check_selection(meta: &VideoMeta, sel: &FrameSelection) -> Result<(), PlanError> {
    if sel.is_empty() {
        return Err(PlanError::EmptySelection);
    }
    if sel.target_indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PlanError::InvalidSelection(
            "indices must be strictly increasing".into(),
        ));
    }
    if sel.target_indices[sel.len() - 1] >= meta.frame_count() {
        return Err(PlanError::InvalidSelection("index out of range".into()));
    }
    Ok(())
}

/// Partitions the selected frames over `world_size` ranks with
/// `num_engines` segments each.
///
/// Segments are cut at GOP boundaries so that the largest per-segment
/// decode work is minimal over all `world_size * num_engines`-way contiguous
/// splits. Segments are then dealt to ranks in order, so every rank holds a
/// contiguous share of the video.
pub fn partition(
    meta: &VideoMeta,
    sel: &FrameSelection,
    world_size: usize,
    num_engines: usize,
) -> Result<DecodePlan, PlanError> {
    if world_size == 0 || num_engines == 0 {
        return Err(PlanError::InvalidArgument(
            "world_size and num_engines must be >= 1".into(),
        ));
    }
    check_selection(meta, sel)?;

    let by_gop = targets_by_gop(meta, &sel.target_indices);
    let weights: Vec<usize> = by_gop
        .iter()
        .map(|(g, ts)| ts[ts.len() - 1] - meta.keyframe_indices[*g] + 1)
        .collect();
    let groups = balanced_split(&weights, world_size.saturating_mul(num_engines));
    let segments: Vec<GopSegment> = groups
        .into_iter()
        .map(|r| {
            let ts: Vec<usize> = by_gop[r].iter().flat_map(|(_, ts)| ts.iter().copied()).collect();
            GopSegment::from_targets(meta, &ts)
        })
        .collect();

    let k = segments.len();
    let used_ranks = world_size.min(k);
    let base = k / used_ranks;
    let extra = k % used_ranks;
    let mut ranks = Vec::with_capacity(used_ranks);
    let mut it = segments.into_iter();
    for r in 0..used_ranks {
        let take = base + usize::from(r < extra);
        ranks.push(it.by_ref().take(take).collect::<Vec<_>>());
    }

    Ok(DecodePlan {
        codec: meta.codec,
        resolution: meta.resolution_class(),
        world_size,
        effective_world_size: used_ranks,
        num_engines,
        temporal_patch: 1,
        padding_frames: 0,
        merged_ranks: 0,
        ranks,
    })
}

/// Makes every rank but the last emit a multiple of `temporal_patch` frames
/// by pulling target frames forward from the following rank, then pads the
/// last rank with repeats of the final frame so the total is divisible too.
///
/// Frame counts only ever grow at a boundary: the rank before the boundary
/// decodes into the head of its successor's first GOP, which costs at most
/// the frames from that GOP's keyframe to the last pulled target. Shrinking
/// instead would force the successor to re-decode the predecessor's last GOP
/// from its keyframe.
///
/// A rank with too few targets to cover the shortfall is folded into its
/// predecessor; `merged_ranks` and `effective_world_size` record this.
pub fn align_to_temporal_patch(
    plan: &DecodePlan,
    meta: &VideoMeta,
    temporal_patch: usize,
) -> Result<DecodePlan, PlanError> {
    if temporal_patch == 0 {
        return Err(PlanError::InvalidArgument("temporal_patch must be >= 1".into()));
    }
    let t = temporal_patch;
    let mut targets: Vec<Vec<usize>> = (0..plan.ranks.len()).map(|r| plan.rank_targets(r)).collect();
    let mut segments: Vec<Option<Vec<GopSegment>>> = plan.ranks.iter().cloned().map(Some).collect();
    let mut merged = plan.merged_ranks;

    let mut r = 0;
    while r + 1 < targets.len() {
        let mut need = (t - targets[r].len() % t) % t;
        while need > 0 && r + 1 < targets.len() {
            let avail = targets[r + 1].len();
            if avail > need {
                let moved: Vec<usize> = targets[r + 1].drain(..need).collect();
                targets[r].extend(moved);
                segments[r] = None;
                segments[r + 1] = None;
                need = 0;
            } else {
                let moved = targets.remove(r + 1);
                segments.remove(r + 1);
                targets[r].extend(moved);
                segments[r] = None;
                merged += 1;
                need -= avail;
            }
        }
        r += 1;
    }

    let total: usize = targets.iter().map(Vec::len).sum();
    let padding_frames = (t - total % t) % t;
    let ranks: Vec<Vec<GopSegment>> = segments
        .into_iter()
        .zip(&targets)
        .map(|(seg, ts)| seg.unwrap_or_else(|| segment_rank(meta, ts, plan.num_engines)))
        .collect();

    Ok(DecodePlan {
        effective_world_size: ranks.len(),
        temporal_patch: t,
        padding_frames,
        merged_ranks: merged,
        ranks,
        ..plan.clone()
    })
}

/// Convenience: select, partition and align in one call.
pub fn plan_video(
    meta: &VideoMeta,
    policy: &SelectionPolicy,
    world_size: usize,
    num_engines: usize,
    temporal_patch: usize,
) -> Result<DecodePlan, PlanError> {
    let sel = select_frames(meta, policy)?;
    let plan = partition(meta, &sel, world_size, num_engines)?;
    align_to_temporal_patch(&plan, meta, temporal_patch)
}

/// Simulated seconds one engine spends on `seg`:
/// seeks, per-frame decode, and engine start-up.
pub fn estimate_work(seg: &GopSegment, codec: Codec, resolution: ResolutionClass, model: &DecodeCostModel) -> f64 {
    seg.seek_count(codec) as f64 * model.seek_cost(codec)
        + seg.est_work as f64 * model.per_frame_cost(codec, resolution)
        + model.engine_init_cost
}
