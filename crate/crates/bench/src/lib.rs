//! Fixtures shared by the scheduler benchmarks.

use vidserve_core::codec_sched::DecodeJob;
use vidserve_core::container_index::{synthesize_meta, Codec, GopLayout, SyntheticVideoSpec, VideoMeta};
use vidserve_core::gop_planner::{plan_video, SelectionPolicy};
use vidserve_core::orchestrator::{Modality, Request};

/// A ten minute 30 fps H.264 clip with 2 s GOPs.
pub fn long_clip() -> VideoMeta {
    synthesize_meta(&SyntheticVideoSpec {
        num_frames: 18_000,
        gop_size: GopLayout::Fixed(60),
        fps: 30.0,
        codec: Codec::H264,
        width: 1280,
        height: 720,
    })
    .expect("valid clip")
}

/// `n` decode jobs over the long clip, arriving 0.5 s apart.
pub fn decode_jobs(n: usize, gpus: usize, engines: usize) -> Vec<DecodeJob> {
    let meta = long_clip();
    let plan = plan_video(&meta, &SelectionPolicy::UniformCount(256), gpus, engines, 2).expect("valid plan");
    (0..n)
        .map(|id| DecodeJob {
            id: id as u64,
            arrival: id as f64 * 0.5,
            plan: plan.clone(),
        })
        .collect()
}

/// Alternating image and text requests for the encode/prefill scheduler.
pub fn mixed_requests(n: usize) -> Vec<Request> {
    (0..n as u64)
        .map(|id| {
            if id % 2 == 0 {
                Request::multimodal(id, 0.0, Modality::Image { images: 4 }, 4, 1024, 256, 200, 64)
            } else {
                Request::text(id, 0.0, 600, 64)
            }
        })
        .collect()
}
