mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vidserve_core::container_index::{synthesize_meta, Codec, GopLayout, SyntheticVideoSpec, VideoMeta};
use vidserve_core::gop_planner::{
    align_to_temporal_patch, partition, select_frames, DecodePlan, FrameSelection, SelectionPolicy,
};

fn instance(seed: u64) -> (VideoMeta, FrameSelection) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let meta = common::random_meta(&mut rng, 30, 24);
    let targets = common::random_targets(&mut rng, meta.frame_count());
    let sel = FrameSelection {
        target_indices: targets.clone(),
        policy: SelectionPolicy::Explicit(targets),
    };
    (meta, sel)
}

fn all_targets(plan: &DecodePlan) -> Vec<usize> {
    plan.segments().flat_map(|s| s.target_indices.iter().copied()).collect()
}

/// Each rank decodes a frame at most once and every segment is one engine's
/// contiguous GOP run.
fn check_ranks(meta: &VideoMeta, plan: &DecodePlan) -> Result<(), TestCaseError> {
    for rank in &plan.ranks {
        prop_assert!(rank.len() <= plan.num_engines);
        let mut decoded = BTreeSet::new();
        for seg in rank {
            prop_assert!(!seg.target_indices.is_empty());
            let mut work = 0;
            for span in &seg.decode_spans {
                prop_assert_eq!(span.first, meta.keyframe_indices[span.gop]);
                prop_assert!(seg.gop_range.contains(&span.gop));
                for f in span.first..=span.last {
                    prop_assert!(decoded.insert(f), "frame {} decoded twice on one rank", f);
                }
                work += span.frames();
            }
            prop_assert_eq!(work, seg.est_work);
            // decoding stops at the last target of each GOP
            for span in &seg.decode_spans {
                prop_assert!(seg.target_indices.contains(&span.last));
            }
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn partition_is_non_redundant(seed in any::<u64>(), w in 1usize..=6, n in 1usize..=6) {
        let (meta, sel) = instance(seed);
        let plan = partition(&meta, &sel, w, n).unwrap();
        prop_assert_eq!(all_targets(&plan), sel.target_indices.clone());
        prop_assert!(plan.ranks.iter().all(|r| !r.is_empty()));
        prop_assert_eq!(plan.effective_world_size, plan.ranks.len());
        check_ranks(&meta, &plan)?;
    }

    #[test]
    fn more_engines_never_raise_the_longest_segment(seed in any::<u64>(), w in 1usize..=5, n in 1usize..=5, dw in 0usize..=3, dn in 0usize..=3) {
        let (meta, sel) = instance(seed);
        let small = partition(&meta, &sel, w, n).unwrap();
        let big = partition(&meta, &sel, w + dw, n + dn).unwrap();
        prop_assert!(big.max_segment_work() <= small.max_segment_work());
    }

    #[test]
    fn aligned_plans_are_divisible(seed in any::<u64>(), w in 1usize..=6, n in 1usize..=6, t in 1usize..=4) {
        let (meta, sel) = instance(seed);
        let raw = partition(&meta, &sel, w, n).unwrap();
        let plan = align_to_temporal_patch(&raw, &meta, t).unwrap();
        let last = plan.ranks.len() - 1;
        for r in 0..last {
            prop_assert_eq!(plan.rank_targets(r).len() % t, 0);
        }
        prop_assert_eq!(plan.total_emitted() % t, 0);
        prop_assert!(plan.padding_frames < t);
        prop_assert_eq!(all_targets(&plan), sel.target_indices.clone());
        prop_assert_eq!(plan.effective_world_size + plan.merged_ranks, raw.ranks.len());
        check_ranks(&meta, &plan)?;
    }

    #[test]
    fn uniform_selection_spans_the_video(frames in 1usize..3000, n in 1usize..800) {
        let meta = synthesize_meta(&SyntheticVideoSpec {
            num_frames: frames,
            gop_size: GopLayout::Fixed(30),
            fps: 30.0,
            codec: Codec::H264,
            width: 1280,
            height: 720,
        })
        .unwrap();
        let sel = select_frames(&meta, &SelectionPolicy::UniformCount(n)).unwrap();
        prop_assert_eq!(sel.len(), n.min(frames));
        prop_assert!(sel.target_indices.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(sel.target_indices[0], 0);
        if sel.len() > 1 {
            prop_assert_eq!(*sel.target_indices.last().unwrap(), frames - 1);
        }
    }

    #[test]
    fn fps_selection_is_strictly_increasing(seed in any::<u64>(), rate in 0.1f64..40.0) {
        let (meta, _) = instance(seed);
        let sel = select_frames(&meta, &SelectionPolicy::Fps(rate)).unwrap();
        prop_assert!(sel.target_indices.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(sel.target_indices[0], 0);
        prop_assert!(*sel.target_indices.last().unwrap() < meta.frame_count());
    }
}
