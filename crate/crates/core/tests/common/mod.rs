#![allow(dead_code)]

pub mod alg3;
pub mod align;
pub mod flat_buffer;
pub mod mp4;

use rand::Rng;
use vidserve_core::codec_sched::WorkerSpec;
use vidserve_core::container_index::{synthesize_meta, Codec, GopLayout, SyntheticVideoSpec, VideoMeta};

/// A random small video: at most `max_gops` GOPs of 1..=`max_gop` frames.
pub fn random_meta(rng: &mut impl Rng, max_gops: usize, max_gop: usize) -> VideoMeta {
    let gops: Vec<usize> = (0..rng.gen_range(1..=max_gops))
        .map(|_| rng.gen_range(1..=max_gop))
        .collect();
    let codec = [Codec::H264, Codec::H265, Codec::Vp9][rng.gen_range(0..3)];
    synthesize_meta(&SyntheticVideoSpec {
        num_frames: gops.iter().sum(),
        gop_size: GopLayout::PerGop(gops),
        fps: 30.0,
        codec,
        width: 1280,
        height: 720,
    })
    .expect("valid synthetic spec")
}

/// Sorted, de-duplicated random frame indices, at least one.
pub fn random_targets(rng: &mut impl Rng, frames: usize) -> Vec<usize> {
    let density = rng.gen_range(0.05..=1.0);
    let mut t: Vec<usize> = (0..frames).filter(|_| rng.gen_bool(density)).collect();
    if t.is_empty() {
        t.push(rng.gen_range(0..frames));
    }
    t
}

/// Several jobs on one GPU, each one worker with `1..=engines` segments of
/// log-uniform durations spanning two decades.
pub fn random_workers(rng: &mut impl Rng, engines: usize, max_segments: usize) -> Vec<WorkerSpec> {
    let total = rng.gen_range(1..=max_segments);
    let mut left = total;
    let mut workers = Vec::new();
    let mut arrival = 0.0;
    let mut job = 0;
    while left > 0 {
        let n = rng.gen_range(1..=engines.min(left));
        left -= n;
        let durations = (0..n).map(|_| 10f64.powf(rng.gen_range(-1.0..1.0))).collect();
        workers.push(WorkerSpec {
            job,
            rank: 0,
            gpu: 0,
            arrival,
            durations,
            frames: n,
        });
        job += 1;
        if rng.gen_bool(0.3) {
            arrival += rng.gen_range(0.0..0.5);
        }
    }
    workers
}

pub fn coefficient_of_variation(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}
