//! End-to-end serving simulation under three architectures.
//!
//! * Monolithic: one lane runs hybrid batches (decode tokens plus prefill
//!   chunks under `tau`); a request whose frames are ready is encoded whole
//!   first, and nothing decodes meanwhile. Videos are decoded one engine per
//!   video.
//! * Split: encode and prefill run on `ep_gpus`, decode runs on `d_gpus`.
//!   The pools never interfere but compute on a fraction of the hardware,
//!   and every handoff pays `transfer_cost`.
//! * Unified: the encode/prefill lane and the decode lane run concurrently
//!   on every GPU and slow each other through the interference table. Videos
//!   are decoded collaboratively across all engines.

pub mod metrics;
pub mod stall;
pub mod sweep;
pub mod workload;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec_sched::{build_workers, simulate, DecodeCostModel, DecodeJob, EngineTopology, Policy, SchedError};
use crate::container_index::synthesize_meta;
use crate::embed_buffer::{PagedBuffer, RequestId};
use crate::gop_planner::{plan_video, PlanError, SelectionPolicy};
use crate::orchestrator::{
    DecodeBatch, DecodeStep, EpScheduler, InterferenceTable, IterationPlan, Modality, OrchestratorError, Phase,
    PhaseCostModel, PrefillChunk, Request, RequestTimes, SchedulerConfig,
};

pub use metrics::{percentile, MetricsLog, RequestRecord, SloTargets, Summary};
pub use stall::{stall_report, Stall, StallCause, StallReport};
pub use sweep::{capacity, ideal_service_time, saturation_throughput, sweep, CapacityRow, Probe, SweepConfig};
pub use workload::{ArrivalProcess, Preset, PresetKind, VisualSpec, WorkloadItem, WorkloadTrace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", deny_unknown_fields)]
pub enum Architecture {
    Monolithic,
    Split {
        ep_gpus: usize,
        d_gpus: usize,
        transfer_cost: f64,
    },
    Unified,
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Monolithic => "monolithic",
            Architecture::Split { .. } => "split",
            Architecture::Unified => "unified",
        }
    }

    pub fn validate(&self, num_gpus: usize) -> Result<(), SimError> {
        if let Architecture::Split {
            ep_gpus,
            d_gpus,
            transfer_cost,
        } = *self
        {
            if ep_gpus == 0 || d_gpus == 0 {
                return Err(SimError::Config("split pools must be non-empty".into()));
            }
            if ep_gpus + d_gpus > num_gpus {
                return Err(SimError::Config(format!(
                    "split pools ({ep_gpus} + {d_gpus}) exceed the {num_gpus} GPUs"
                )));
            }
            if !(transfer_cost.is_finite() && transfer_cost >= 0.0) {
                return Err(SimError::Config("transfer_cost must be >= 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub num_gpus: usize,
    pub engines_per_gpu: usize,
    pub max_decode_tasks: usize,
    /// Video decode runs this much slower while inference shares the GPU.
    pub video_decode_slowdown: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            num_gpus: 4,
            engines_per_gpu: 5,
            max_decode_tasks: 4,
            video_decode_slowdown: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub ep_gpus: usize,
    pub d_gpus: usize,
    pub transfer_cost: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ep_gpus: 3,
            d_gpus: 1,
            transfer_cost: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Monolithic,
    Split,
    Unified,
}

impl ArchKind {
    pub const ALL: [ArchKind; 3] = [ArchKind::Monolithic, ArchKind::Split, ArchKind::Unified];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub cluster: ClusterConfig,
    pub split: SplitConfig,
    pub scheduler: SchedulerConfig,
    pub phase_costs: PhaseCostModel,
    pub interference: InterferenceTable,
    pub decode_costs: DecodeCostModel,
    /// A token gap longer than this many median TBTs is a stall.
    pub stall_factor: f64,
    /// Stop simulating at this time; unfinished requests stay in flight.
    pub horizon: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            cluster: ClusterConfig::default(),
            split: SplitConfig::default(),
            scheduler: SchedulerConfig::default(),
            phase_costs: PhaseCostModel::default(),
            interference: InterferenceTable::default(),
            decode_costs: DecodeCostModel::default(),
            stall_factor: 3.0,
            horizon: None,
        }
    }
}

impl SimConfig {
    pub fn architecture(&self, kind: ArchKind) -> Architecture {
        match kind {
            ArchKind::Monolithic => Architecture::Monolithic,
            ArchKind::Unified => Architecture::Unified,
            ArchKind::Split => Architecture::Split {
                ep_gpus: self.split.ep_gpus,
                d_gpus: self.split.d_gpus,
                transfer_cost: self.split.transfer_cost,
            },
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let c = &self.cluster;
        EngineTopology::new(c.num_gpus, c.engines_per_gpu, c.max_decode_tasks).validate()?;
        if !(c.video_decode_slowdown.is_finite() && c.video_decode_slowdown >= 1.0) {
            return Err(SimError::Config("video_decode_slowdown must be >= 1".into()));
        }
        self.architecture(ArchKind::Split).validate(c.num_gpus)?;
        self.scheduler.validate()?;
        self.phase_costs.validate()?;
        self.interference.validate()?;
        self.decode_costs.validate()?;
        if !(self.stall_factor > 1.0) {
            return Err(SimError::Config("stall_factor must be > 1".into()));
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0) {
                return Err(SimError::Config("horizon must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub start: f64,
    pub end: f64,
    pub phase: Phase,
    pub tokens: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub start: f64,
    pub end: f64,
    pub batch: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    /// Encode and prefill executions.
    pub phases: Vec<PhaseRecord>,
    /// Decode iterations (the decode half of hybrid batches in monolithic
    /// mode).
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub arch: Architecture,
    pub metrics: MetricsLog,
    pub trace: SimTrace,
}

/// Requests plus the time each one's visual input is ready for encoding.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub requests: Vec<Request>,
    pub ready: Vec<f64>,
}

/// Decodes every video under `arch`'s decoder and builds requests.
pub fn prepare(
    arch: &Architecture,
    trace: &WorkloadTrace,
    cfg: &SimConfig,
    collaborative: bool,
    seed: u64,
) -> Result<Prepared, SimError> {
    let c = &cfg.cluster;
    let flash = collaborative && matches!(arch, Architecture::Unified);
    let pool = match arch {
        Architecture::Split { ep_gpus, .. } => *ep_gpus,
        _ => c.num_gpus,
    };
    let topo = if flash {
        EngineTopology::new(c.num_gpus, c.engines_per_gpu, c.max_decode_tasks)
    } else {
        EngineTopology::new(pool, 1, 1)
    };

    let mut requests = Vec::with_capacity(trace.len());
    let mut ready = Vec::with_capacity(trace.len());
    let mut jobs = Vec::new();
    let mut job_slots = Vec::new();
    for (i, it) in trace.items.iter().enumerate() {
        match &it.visual {
            None => {
                requests.push(Request::text(it.id, it.arrival, it.text_tokens, it.output_tokens));
                ready.push(it.arrival);
            }
            Some(VisualSpec::Image {
                images,
                unit_patch_tokens,
                unit_visual_tokens,
                decode_seconds,
            }) => {
                requests.push(Request::multimodal(
                    it.id,
                    it.arrival,
                    Modality::Image { images: *images },
                    *images,
                    *unit_patch_tokens,
                    *unit_visual_tokens,
                    it.text_tokens,
                    it.output_tokens,
                ));
                ready.push(it.arrival + *images as f64 * decode_seconds);
            }
            Some(
                v @ VisualSpec::Video {
                    video,
                    temporal_patch,
                    unit_patch_tokens,
                    unit_visual_tokens,
                    ..
                },
            ) => {
                let meta = synthesize_meta(video).map_err(|e| SimError::Config(format!("request {}: {e}", it.id)))?;
                let frames = v.sampled_frames();
                let sel = SelectionPolicy::UniformCount(frames);
                let plan = if flash {
                    plan_video(&meta, &sel, c.num_gpus, c.engines_per_gpu, *temporal_patch)?
                } else {
                    plan_video(&meta, &sel, 1, 1, *temporal_patch)?
                };
                let units = plan.total_emitted() / temporal_patch;
                requests.push(Request::multimodal(
                    it.id,
                    it.arrival,
                    Modality::Video { frames },
                    units,
                    *unit_patch_tokens,
                    *unit_visual_tokens,
                    it.text_tokens,
                    it.output_tokens,
                ));
                ready.push(f64::NAN);
                job_slots.push(i);
                jobs.push(DecodeJob {
                    id: it.id,
                    arrival: it.arrival,
                    plan,
                });
            }
        }
    }

    if !jobs.is_empty() {
        let mut workers = build_workers(&jobs, &topo, &cfg.decode_costs, seed);
        for w in &mut workers {
            for d in &mut w.durations {
                *d *= c.video_decode_slowdown;
            }
        }
        let policy = if flash {
            Policy::StallFree
        } else {
            // one engine per video, videos spread round-robin over the pool
            let job_index: BTreeMap<u64, usize> = jobs.iter().enumerate().map(|(k, j)| (j.id, k)).collect();
            for w in &mut workers {
                w.gpu = job_index[&w.job] % pool;
            }
            Policy::WholeVideo
        };
        let sched = simulate(&workers, &topo, cfg.decode_costs.worker_init_serialization, policy);
        for (slot, job) in job_slots.iter().zip(&jobs) {
            ready[*slot] = sched.job(job.id).expect("every job is scheduled").completion;
        }
    }
    Ok(Prepared { requests, ready })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ev {
    Arrive(usize),
    Ready(usize),
    EpDone,
    StepDone,
    Wake,
}

struct Timed {
    time: f64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Timed {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Timed {}
impl PartialOrd for Timed {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Timed {
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone)]
struct BaselineEntry {
    req: Request,
    ready: bool,
    encoded: bool,
    prefilled: usize,
}

/// FIFO encode-first scheduler used by the monolithic and split baselines.
#[derive(Debug, Clone)]
struct BaselineEp {
    kv: PagedBuffer,
    entries: BTreeMap<RequestId, BaselineEntry>,
    waiting: Vec<RequestId>,
    running: Vec<RequestId>,
}

impl BaselineEp {
    fn new(cfg: &SchedulerConfig) -> Result<Self, SimError> {
        Ok(BaselineEp {
            kv: PagedBuffer::new(cfg.kv_page_size, cfg.kv_pages, 1).map_err(|e| SimError::Config(e.to_string()))?,
            entries: BTreeMap::new(),
            waiting: Vec::new(),
            running: Vec::new(),
        })
    }

    fn add(&mut self, req: Request) {
        let id = req.id;
        let ready = !req.is_multimodal();
        self.entries.insert(
            id,
            BaselineEntry {
                req,
                ready,
                encoded: false,
                prefilled: 0,
            },
        );
        self.waiting.push(id);
    }

    fn mark_ready(&mut self, id: RequestId) {
        if let Some(e) = self.entries.get_mut(&id) {
            e.ready = true;
        }
    }

    fn next_encode(&self) -> Option<RequestId> {
        self.waiting.iter().copied().find(|id| {
            let e = &self.entries[id];
            e.req.is_multimodal() && e.ready && !e.encoded
        })
    }

    fn finish_encode(&mut self, id: RequestId) {
        self.entries.get_mut(&id).expect("encoded request exists").encoded = true;
    }

    fn prefill_batch(&mut self, budget: usize) -> Vec<PrefillChunk> {
        let mut n = 0;
        let mut out = Vec::new();
        for &id in &self.running {
            let e = &self.entries[&id];
            let c = (e.req.prompt_tokens() - e.prefilled).min(budget - n);
            if c > 0 {
                out.push(PrefillChunk {
                    request: id,
                    start: e.prefilled,
                    tokens: c,
                });
                n += c;
            }
        }
        let mut i = 0;
        while n < budget && i < self.waiting.len() {
            let id = self.waiting[i];
            let e = &self.entries[&id];
            if e.req.is_multimodal() && !e.encoded {
                i += 1;
                continue;
            }
            let need = e.req.prompt_tokens() + e.req.output_tokens;
            if !self.kv.can_alloc(id, need) {
                break;
            }
            self.kv.alloc_pages(id, need).expect("checked can_alloc");
            let c = e.req.prompt_tokens().min(budget - n);
            out.push(PrefillChunk {
                request: id,
                start: 0,
                tokens: c,
            });
            n += c;
            self.waiting.remove(i);
            self.running.push(id);
        }
        out
    }

    fn finish_prefill(&mut self, chunks: &[PrefillChunk]) -> Vec<RequestId> {
        let mut done = Vec::new();
        for ch in chunks {
            let e = self.entries.get_mut(&ch.request).expect("scheduled request exists");
            e.prefilled += ch.tokens;
            if e.prefilled == e.req.prompt_tokens() {
                self.running.retain(|&r| r != ch.request);
                done.push(ch.request);
            }
        }
        done
    }

    fn release(&mut self, id: RequestId) {
        self.kv.release(id);
        self.entries.remove(&id);
    }
}

enum EpWork {
    Iter {
        plan: IterationPlan,
        phases: VecDeque<(Phase, usize)>,
    },
    Encode(RequestId),
    Prefill(Vec<PrefillChunk>),
    Hybrid {
        chunks: Vec<PrefillChunk>,
        step: DecodeStep,
        start: f64,
    },
}

struct Sim<'a> {
    arch: Architecture,
    cfg: &'a SimConfig,
    requests: &'a [Request],
    index: BTreeMap<RequestId, usize>,
    times: Vec<RequestTimes>,
    heap: BinaryHeap<Timed>,
    seq: u64,
    unified: Option<EpScheduler>,
    baseline: Option<BaselineEp>,
    decode: DecodeBatch,
    ep_work: Option<EpWork>,
    /// Phase the encode/prefill lane is executing, with its token count.
    ep_phase: Option<(Phase, usize)>,
    step: Option<(DecodeStep, f64)>,
    ep_scale: f64,
    decode_cost: PhaseCostModel,
    transfer: f64,
    trace: SimTrace,
}

impl<'a> Sim<'a> {
    fn push(&mut self, time: f64, ev: Ev) {
        self.seq += 1;
        self.heap.push(Timed {
            time,
            seq: self.seq,
            ev,
        });
    }

    fn slot(&self, id: RequestId) -> usize {
        self.index[&id]
    }

    fn phase_time(&self, phase: Phase, tokens: usize) -> f64 {
        let c = &self.cfg.phase_costs;
        let base = match phase {
            Phase::Encode => c.encode_time(tokens),
            Phase::Prefill => c.prefill_time(tokens),
            Phase::Decode => c.decode_time(tokens),
        };
        base * self.ep_scale
    }

    fn release(&mut self, id: RequestId) {
        if let Some(s) = self.unified.as_mut() {
            s.release(id);
        }
        if let Some(b) = self.baseline.as_mut() {
            b.release(id);
        }
    }

    fn prefill_done(&mut self, t: f64, ids: Vec<RequestId>) {
        for id in ids {
            let k = self.slot(id);
            self.times[k].prefill_done = Some(t);
            self.times[k].token_times.push(t);
            let remaining = self.requests[k].output_tokens - 1;
            if remaining == 0 {
                self.release(id);
                continue;
            }
            let ready = t + self.transfer;
            self.decode.handoff(id, ready, remaining);
            if ready > t {
                self.push(ready, Ev::Wake);
            }
        }
    }

    fn start_phase(&mut self, t: f64, phase: Phase, tokens: usize) {
        let factor = if matches!(self.arch, Architecture::Unified) {
            let bs = self.decode.batch_at(t) as f64;
            self.cfg
                .interference
                .apply_interference(phase, tokens as f64, &[(Phase::Decode, bs)])
        } else {
            1.0
        };
        let end = t + self.phase_time(phase, tokens) * factor;
        self.ep_phase = Some((phase, tokens));
        self.trace.phases.push(PhaseRecord {
            start: t,
            end,
            phase,
            tokens,
            factor,
        });
        self.push(end, Ev::EpDone);
    }

    fn start_ep(&mut self, t: f64) {
        match self.arch {
            Architecture::Unified => {
                let sched = self.unified.as_mut().expect("unified scheduler");
                let plan = sched.schedule_iteration();
                if plan.is_empty() {
                    return;
                }
                let mut phases: VecDeque<(Phase, usize)> = plan
                    .encode_execs
                    .iter()
                    .map(|e| (Phase::Encode, e.patch_tokens))
                    .collect();
                if plan.n_p > 0 {
                    phases.push_back((Phase::Prefill, plan.n_p));
                }
                let (phase, tokens) = phases.pop_front().expect("non-empty plan");
                self.ep_work = Some(EpWork::Iter { plan, phases });
                self.start_phase(t, phase, tokens);
            }
            Architecture::Split { .. } => {
                let b = self.baseline.as_mut().expect("baseline scheduler");
                if let Some(id) = b.next_encode() {
                    let tokens = self.requests[self.index[&id]].patch_tokens();
                    self.ep_work = Some(EpWork::Encode(id));
                    self.start_phase(t, Phase::Encode, tokens);
                    return;
                }
                let chunks = b.prefill_batch(self.cfg.scheduler.tau);
                if chunks.is_empty() {
                    return;
                }
                let n_p = chunks.iter().map(|c| c.tokens).sum();
                self.ep_work = Some(EpWork::Prefill(chunks));
                self.start_phase(t, Phase::Prefill, n_p);
            }
            Architecture::Monolithic => {
                let b = self.baseline.as_mut().expect("baseline scheduler");
                if let Some(id) = b.next_encode() {
                    let tokens = self.requests[self.index[&id]].patch_tokens();
                    self.ep_work = Some(EpWork::Encode(id));
                    self.start_phase(t, Phase::Encode, tokens);
                    return;
                }
                self.decode.admit_ready(t);
                let bs = self.decode.active();
                let chunks = b.prefill_batch(self.cfg.scheduler.tau.saturating_sub(bs));
                if bs == 0 && chunks.is_empty() {
                    return;
                }
                let step = self.decode.decode_step(t, &self.decode_cost, 1.0);
                let n_p: usize = chunks.iter().map(|c| c.tokens).sum();
                let end = t + step.latency + self.phase_time(Phase::Prefill, n_p);
                if n_p > 0 {
                    self.trace.phases.push(PhaseRecord {
                        start: t,
                        end,
                        phase: Phase::Prefill,
                        tokens: n_p,
                        factor: 1.0,
                    });
                }
                self.ep_phase = Some((Phase::Prefill, n_p));
                self.ep_work = Some(EpWork::Hybrid { chunks, step, start: t });
                self.push(end, Ev::EpDone);
            }
        }
    }

    fn emit(&mut self, t: f64, step: &DecodeStep) {
        for &id in &step.emitted {
            let k = self.slot(id);
            self.times[k].token_times.push(t);
        }
        for &id in &step.finished {
            self.release(id);
        }
    }

    fn ep_done(&mut self, t: f64) {
        let finished_phase = self.ep_phase.take();
        let Some(work) = self.ep_work.take() else { return };
        match work {
            EpWork::Iter { plan, mut phases } => {
                let sched = self.unified.as_mut().expect("unified scheduler");
                let phase = finished_phase.map(|p| p.0);
                let encode_over = phase == Some(Phase::Encode) && phases.front().map(|p| p.0) != Some(Phase::Encode);
                if encode_over {
                    sched.finish_encode(&plan);
                    for &id in &plan.encode {
                        let k = self.index[&id];
                        self.times[k].encode_done = Some(t);
                    }
                }
                if phase == Some(Phase::Prefill) {
                    let done = sched.finish_prefill(&plan);
                    self.prefill_done(t, done);
                }
                if let Some((p, tokens)) = phases.pop_front() {
                    self.ep_work = Some(EpWork::Iter { plan, phases });
                    self.start_phase(t, p, tokens);
                }
            }
            EpWork::Encode(id) => {
                self.baseline.as_mut().expect("baseline scheduler").finish_encode(id);
                let k = self.slot(id);
                self.times[k].encode_done = Some(t);
            }
            EpWork::Prefill(chunks) => {
                let done = self
                    .baseline
                    .as_mut()
                    .expect("baseline scheduler")
                    .finish_prefill(&chunks);
                self.prefill_done(t, done);
            }
            EpWork::Hybrid { chunks, step, start } => {
                if step.batch_size > 0 {
                    self.trace.steps.push(StepRecord {
                        start,
                        end: t,
                        batch: step.batch_size,
                        factor: 1.0,
                    });
                }
                self.emit(t, &step);
                let done = self
                    .baseline
                    .as_mut()
                    .expect("baseline scheduler")
                    .finish_prefill(&chunks);
                self.prefill_done(t, done);
            }
        }
    }

    fn start_step(&mut self, t: f64) {
        let bs = self.decode.batch_at(t);
        if bs == 0 {
            return;
        }
        let factor = match (self.arch, self.ep_phase) {
            (Architecture::Unified, Some((phase, tokens))) => {
                self.cfg
                    .interference
                    .apply_interference(Phase::Decode, bs as f64, &[(phase, tokens as f64)])
            }
            _ => 1.0,
        };
        let step = self.decode.decode_step(t, &self.decode_cost, factor);
        self.push(t + step.latency, Ev::StepDone);
        self.step = Some((step, t));
    }

    fn step_done(&mut self, t: f64) {
        let Some((step, start)) = self.step.take() else { return };
        self.trace.steps.push(StepRecord {
            start,
            end: t,
            batch: step.batch_size,
            factor: step.factor,
        });
        self.emit(t, &step);
    }

    fn handle(&mut self, t: f64, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::Arrive(k) => {
                let req = self.requests[k].clone();
                if let Some(s) = self.unified.as_mut() {
                    s.add_request(req)?;
                } else if let Some(b) = self.baseline.as_mut() {
                    b.add(req);
                }
            }
            Ev::Ready(k) => {
                let id = self.requests[k].id;
                self.times[k].decode_done = Some(t);
                if let Some(s) = self.unified.as_mut() {
                    s.mark_visual_ready(id);
                }
                if let Some(b) = self.baseline.as_mut() {
                    b.mark_ready(id);
                }
            }
            Ev::EpDone => self.ep_done(t),
            Ev::StepDone => self.step_done(t),
            Ev::Wake => {}
        }
        Ok(())
    }

    fn kick(&mut self, t: f64) {
        if self.ep_work.is_none() {
            self.start_ep(t);
        }
        if !matches!(self.arch, Architecture::Monolithic) && self.step.is_none() {
            self.start_step(t);
        }
    }
}

/// Checks that every request can ever be scheduled with the configured
/// page pools.
fn check_fits(requests: &[Request], cfg: &SchedulerConfig, arch: &Architecture) -> Result<(), SimError> {
    let kv_cap = cfg.kv_pages * cfg.kv_page_size;
    let vis_cap = cfg.visual_pages * cfg.visual_page_size;
    for r in requests {
        if r.prompt_tokens() + r.output_tokens > kv_cap {
            return Err(SimError::Config(format!(
                "request {} needs {} KV tokens, pool holds {kv_cap}",
                r.id,
                r.prompt_tokens() + r.output_tokens
            )));
        }
        if matches!(arch, Architecture::Unified) && r.visual_tokens() > vis_cap {
            return Err(SimError::Config(format!(
                "request {} needs {} visual-buffer tokens, pool holds {vis_cap}",
                r.id,
                r.visual_tokens()
            )));
        }
    }
    Ok(())
}

/// Runs already prepared requests through the serving lanes.
pub fn run_prepared(
    arch: &Architecture,
    prepared: &Prepared,
    cfg: &SimConfig,
    slo: SloTargets,
) -> Result<SimResult, SimError> {
    cfg.validate()?;
    arch.validate(cfg.cluster.num_gpus)?;
    let requests = &prepared.requests;
    for r in requests {
        r.validate()?;
    }
    check_fits(requests, &cfg.scheduler, arch)?;
    let g = cfg.cluster.num_gpus as f64;
    let (ep_scale, decode_cost, transfer) = match *arch {
        Architecture::Split {
            ep_gpus,
            d_gpus,
            transfer_cost,
        } => {
            let mut dc = cfg.phase_costs.clone();
            dc.decode_per_seq *= g / d_gpus as f64;
            (g / ep_gpus as f64, dc, transfer_cost)
        }
        _ => (1.0, cfg.phase_costs.clone(), 0.0),
    };
    let (unified, baseline) = match arch {
        Architecture::Unified => (Some(EpScheduler::new(cfg.scheduler.clone())?), None),
        _ => (None, Some(BaselineEp::new(&cfg.scheduler)?)),
    };
    let mut sim = Sim {
        arch: *arch,
        cfg,
        requests,
        index: requests.iter().enumerate().map(|(k, r)| (r.id, k)).collect(),
        times: requests.iter().map(|r| RequestTimes::new(r.arrival)).collect(),
        heap: BinaryHeap::new(),
        seq: 0,
        unified,
        baseline,
        decode: DecodeBatch::new(),
        ep_work: None,
        ep_phase: None,
        step: None,
        ep_scale,
        decode_cost,
        transfer,
        trace: SimTrace::default(),
    };
    for (k, r) in requests.iter().enumerate() {
        sim.push(r.arrival, Ev::Arrive(k));
        if r.is_multimodal() {
            sim.push(prepared.ready[k].max(r.arrival), Ev::Ready(k));
        }
    }
    while let Some(top) = sim.heap.peek() {
        let t = top.time;
        if cfg.horizon.is_some_and(|h| t > h) {
            break;
        }
        while sim.heap.peek().is_some_and(|e| e.time == t) {
            let e = sim.heap.pop().expect("peeked");
            sim.handle(t, e.ev)?;
        }
        sim.kick(t);
    }
    let ids: Vec<RequestId> = requests.iter().map(|r| r.id).collect();
    let outputs: Vec<usize> = requests.iter().map(|r| r.output_tokens).collect();
    let metrics = MetricsLog::build(&ids, &sim.times, &outputs, slo);
    Ok(SimResult {
        arch: *arch,
        metrics,
        trace: sim.trace,
    })
}

/// Full pipeline: visual decoding, then the serving lanes.
pub fn run(
    arch: &Architecture,
    trace: &WorkloadTrace,
    cfg: &SimConfig,
    slo: SloTargets,
    collaborative: bool,
    seed: u64,
) -> Result<SimResult, SimError> {
    cfg.validate()?;
    arch.validate(cfg.cluster.num_gpus)?;
    trace.validate()?;
    let prepared = prepare(arch, trace, cfg, collaborative, seed)?;
    run_prepared(arch, &prepared, cfg, slo)
}

/// Runs `preset` with its own SLOs and decoder choice.
pub fn run_preset(
    arch: &Architecture,
    preset: &Preset,
    trace: &WorkloadTrace,
    cfg: &SimConfig,
    seed: u64,
) -> Result<SimResult, SimError> {
    let slo = SloTargets {
        ttft: preset.ttft_slo,
        tbt: preset.tbt_slo,
    };
    run(arch, trace, cfg, slo, preset.collaborative_decode, seed)
}
