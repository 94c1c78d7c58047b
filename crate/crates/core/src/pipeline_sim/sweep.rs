//! Capacity search: the highest arrival rate an architecture sustains at a
//! given SLO attainment.

use serde::{Deserialize, Serialize};

use crate::codec_sched::DecodeCostModel;
use crate::container_index::synthesize_meta;
use crate::gop_planner::{estimate_work, plan_video, SelectionPolicy};

use super::workload::{ArrivalProcess, Preset, VisualSpec, WorkloadTrace};
use super::{run_preset, Architecture, MetricsLog, SimConfig, SimError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Strictly increasing request rates (per second) to probe.
    pub rates: Vec<f64>,
    pub requests: usize,
    /// Required fraction of requests meeting both SLOs.
    pub attainment: f64,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            rates: vec![
                0.01, 0.02, 0.03, 0.05, 0.075, 0.1, 0.15, 0.2, 0.3, 0.4, 0.6, 0.8, 1.2, 1.6,
            ],
            requests: 100,
            attainment: 0.9,
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.rates.is_empty() {
            return Err(SimError::Config("rate ladder is empty".into()));
        }
        if !self.rates.iter().all(|r| r.is_finite() && *r > 0.0) {
            return Err(SimError::Config("rates must be finite and > 0".into()));
        }
        if !self.rates.windows(2).all(|w| w[0] < w[1]) {
            return Err(SimError::Config("rate ladder must be strictly increasing".into()));
        }
        if self.requests == 0 {
            return Err(SimError::Config("sweep needs at least one request".into()));
        }
        if !(0.0..=1.0).contains(&self.attainment) {
            return Err(SimError::Config("attainment must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub rate: f64,
    pub attainment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityRow {
    pub arch: Architecture,
    /// Highest passing rate, 0 when even the lowest rate fails.
    pub capacity: f64,
    pub probes: Vec<Probe>,
}

/// Service time of `trace` if every request ran alone on an idle cluster
/// with one decode engine: last arrival plus the slowest isolated request.
pub fn ideal_service_time(trace: &WorkloadTrace, cfg: &SimConfig) -> Result<f64, SimError> {
    let pc = &cfg.phase_costs;
    let mut worst: f64 = 0.0;
    for it in &trace.items {
        let (decode, patch) = match &it.visual {
            None => (0.0, 0),
            Some(VisualSpec::Image {
                images,
                unit_patch_tokens,
                decode_seconds,
                ..
            }) => (*images as f64 * decode_seconds, images * unit_patch_tokens),
            Some(
                v @ VisualSpec::Video {
                    video,
                    temporal_patch,
                    unit_patch_tokens,
                    ..
                },
            ) => {
                let meta = synthesize_meta(video).map_err(|e| SimError::Config(e.to_string()))?;
                let plan = plan_video(
                    &meta,
                    &SelectionPolicy::UniformCount(v.sampled_frames()),
                    1,
                    1,
                    *temporal_patch,
                )?;
                let work = single_engine_work(&plan, &cfg.decode_costs);
                let units = plan.total_emitted() / temporal_patch;
                (work * cfg.cluster.video_decode_slowdown, units * unit_patch_tokens)
            }
        };
        let prompt = it.text_tokens + visual_tokens(it);
        let t = decode + pc.encode_time(patch) + pc.prefill_time(prompt) + it.output_tokens as f64 * pc.decode_time(1);
        worst = worst.max(t);
    }
    let last = trace.items.last().map_or(0.0, |i| i.arrival);
    Ok(last + worst)
}

fn single_engine_work(plan: &crate::gop_planner::DecodePlan, model: &DecodeCostModel) -> f64 {
    plan.ranks
        .iter()
        .flatten()
        .map(|s| estimate_work(s, plan.codec, plan.resolution, model))
        .sum::<f64>()
        + model.worker_init_serialization
}

fn visual_tokens(it: &super::workload::WorkloadItem) -> usize {
    match &it.visual {
        None => 0,
        Some(VisualSpec::Image {
            images,
            unit_visual_tokens,
            ..
        }) => images * unit_visual_tokens,
        Some(
            v @ VisualSpec::Video {
                temporal_patch,
                unit_visual_tokens,
                ..
            },
        ) => v.sampled_frames().div_ceil(*temporal_patch) * unit_visual_tokens,
    }
}

fn probe(
    arch: &Architecture,
    preset: &Preset,
    cfg: &SimConfig,
    sweep: &SweepConfig,
    rate: f64,
) -> Result<MetricsLog, SimError> {
    let trace = preset.generate(sweep.requests, ArrivalProcess::Poisson { rate }, sweep.seed)?;
    let mut cfg = cfg.clone();
    if cfg.horizon.is_none() {
        cfg.horizon = Some(10.0 * ideal_service_time(&trace, &cfg)?);
    }
    Ok(run_preset(arch, preset, &trace, &cfg, sweep.seed)?.metrics)
}

/// Binary search over the ladder, assuming attainment falls with rate.
pub fn capacity(
    arch: &Architecture,
    preset: &Preset,
    cfg: &SimConfig,
    sweep: &SweepConfig,
) -> Result<CapacityRow, SimError> {
    sweep.validate()?;
    let mut probes = Vec::new();
    let (mut lo, mut hi) = (0usize, sweep.rates.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        let rate = sweep.rates[mid];
        let m = probe(arch, preset, cfg, sweep, rate)?;
        probes.push(Probe {
            rate,
            attainment: m.slo_attainment,
        });
        if m.slo_attainment >= sweep.attainment {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    probes.sort_by(|a, b| a.rate.total_cmp(&b.rate));
    Ok(CapacityRow {
        arch: *arch,
        capacity: if lo == 0 { 0.0 } else { sweep.rates[lo - 1] },
        probes,
    })
}

/// One capacity row per architecture, searched on separate threads.
pub fn sweep(
    archs: &[Architecture],
    preset: &Preset,
    cfg: &SimConfig,
    sweep: &SweepConfig,
) -> Result<Vec<CapacityRow>, SimError> {
    std::thread::scope(|s| {
        let handles: Vec<_> = archs
            .iter()
            .map(|a| s.spawn(move || capacity(a, preset, cfg, sweep)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    })
}

/// Everything arrives at once; the completed-request rate is the
/// architecture's saturation throughput.
pub fn saturation_throughput(
    arch: &Architecture,
    preset: &Preset,
    cfg: &SimConfig,
    requests: usize,
    seed: u64,
) -> Result<MetricsLog, SimError> {
    let trace = preset.generate(requests, ArrivalProcess::Burst, seed)?;
    Ok(run_preset(arch, preset, &trace, cfg, seed)?.metrics)
}
