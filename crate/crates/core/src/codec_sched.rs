//! Simulated multi-engine video decoding.
//!
//! Each GPU runs its own scheduler: a pool of at most `max_decode_tasks`
//! admitted workers (one per job rank placed on that GPU) shares the GPU's
//! decode engines. Two dispatch policies are modelled:
//!
//! * stall-free: segments are dispatched one at a time whenever an engine
//!   frees; the worker that just finished a segment is served first, then the
//!   longest-waiting admitted worker;
//! * whole-video: a worker holds every engine of its GPU until its slowest
//!   segment completes, and only then is the next worker admitted.
//!
//! Worker start-up is serialized per GPU: one worker initializes at a time.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container_index::{Codec, ResolutionClass, VideoMeta};
use crate::gop_planner::{estimate_work, plan_video, DecodePlan, PlanError, SelectionPolicy};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedError {
    #[error("invalid cost model: {0}")]
    InvalidCostModel(String),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameCost {
    pub codec: Codec,
    pub resolution: ResolutionClass,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeekCost {
    pub codec: Codec,
    pub seconds: f64,
}

/// Seconds charged by one decode engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeCostModel {
    pub per_frame_cost: Vec<FrameCost>,
    /// Used for `(codec, resolution)` pairs missing from `per_frame_cost`.
    pub fallback_frame_cost: f64,
    pub seek_cost: Vec<SeekCost>,
    pub fallback_seek_cost: f64,
    /// Charged once per segment.
    pub engine_init_cost: f64,
    /// Charged once per worker start, serialized per GPU.
    pub worker_init_serialization: f64,
    /// Host-side packet demux per decoded frame. One reader per video, so
    /// this part never parallelizes across engines.
    pub demux_per_frame: f64,
    /// Segment durations are scaled by a factor drawn uniformly from
    /// `[1 - jitter, 1 + jitter]`.
    pub jitter: f64,
}

impl Default for DecodeCostModel {
    /// Frozen calibration for A100-class NVDEC engines.
    fn default() -> Self {
        use Codec::*;
        use ResolutionClass::*;
        let mut per_frame_cost = Vec::new();
        for (codec, base) in [(H264, 0.0020), (H265, 0.0024), (Vp9, 0.0030), (Other, 0.0030)] {
            for (res, scale) in [(Sd, 0.5), (Hd, 1.0), (FullHd, 2.25), (Uhd, 9.0)] {
                per_frame_cost.push(FrameCost {
                    codec,
                    resolution: res,
                    seconds: base * scale,
                });
            }
        }
        DecodeCostModel {
            per_frame_cost,
            fallback_frame_cost: 0.003,
            seek_cost: vec![
                SeekCost {
                    codec: H264,
                    seconds: 0.075,
                },
                SeekCost {
                    codec: H265,
                    seconds: 0.004,
                },
                SeekCost {
                    codec: Vp9,
                    seconds: 0.004,
                },
            ],
            fallback_seek_cost: 0.05,
            engine_init_cost: 0.15,
            worker_init_serialization: 0.08,
            demux_per_frame: 0.00015,
            jitter: 0.0,
        }
    }
}

impl DecodeCostModel {
    /// Same cost for every codec and resolution.
    pub fn uniform(per_frame: f64, seek: f64, engine_init: f64, worker_init: f64) -> Self {
        DecodeCostModel {
            per_frame_cost: Vec::new(),
            fallback_frame_cost: per_frame,
            seek_cost: Vec::new(),
            fallback_seek_cost: seek,
            engine_init_cost: engine_init,
            worker_init_serialization: worker_init,
            demux_per_frame: 0.0,
            jitter: 0.0,
        }
    }

    pub fn per_frame_cost(&self, codec: Codec, resolution: ResolutionClass) -> f64 {
        self.per_frame_cost
            .iter()
            .find(|c| c.codec == codec && c.resolution == resolution)
            .map_or(self.fallback_frame_cost, |c| c.seconds)
    }

    pub fn seek_cost(&self, codec: Codec) -> f64 {
        self.seek_cost
            .iter()
            .find(|c| c.codec == codec)
            .map_or(self.fallback_seek_cost, |c| c.seconds)
    }

    pub fn validate(&self) -> Result<(), SchedError> {
        let bad = |m: String| Err(SchedError::InvalidCostModel(m));
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        for c in &self.per_frame_cost {
            if !ok(c.seconds) {
                return bad(format!(
                    "per_frame_cost for {:?}/{:?} must be >= 0",
                    c.codec, c.resolution
                ));
            }
        }
        for c in &self.seek_cost {
            if !ok(c.seconds) {
                return bad(format!("seek_cost for {:?} must be >= 0", c.codec));
            }
        }
        for (name, v) in [
            ("fallback_frame_cost", self.fallback_frame_cost),
            ("fallback_seek_cost", self.fallback_seek_cost),
            ("engine_init_cost", self.engine_init_cost),
            ("worker_init_serialization", self.worker_init_serialization),
            ("demux_per_frame", self.demux_per_frame),
        ] {
            if !ok(v) {
                return bad(format!("{name} must be >= 0"));
            }
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return bad("jitter must lie in [0, 1)".into());
        }
        let h264 = self.seek_cost(Codec::H264);
        if !(0.05..=0.1).contains(&h264) {
            return bad(format!("H.264 seek cost {h264} outside [0.05, 0.1] s"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineTopology {
    pub num_gpus: usize,
    pub engines_per_gpu: usize,
    /// Concurrently admitted workers per GPU.
    pub max_decode_tasks: usize,
}

impl EngineTopology {
    pub fn new(num_gpus: usize, engines_per_gpu: usize, max_decode_tasks: usize) -> Self {
        EngineTopology {
            num_gpus,
            engines_per_gpu,
            max_decode_tasks,
        }
    }

    pub fn validate(&self) -> Result<(), SchedError> {
        if self.num_gpus == 0 || self.engines_per_gpu == 0 || self.max_decode_tasks == 0 {
            return Err(SchedError::InvalidTopology("all topology counts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeJob {
    pub id: u64,
    pub arrival: f64,
    pub plan: DecodePlan,
}

/// One worker's input to the per-GPU event loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSpec {
    pub job: u64,
    pub rank: usize,
    pub gpu: usize,
    /// When the worker may queue for admission: the job's arrival plus
    /// its demux time.
    pub arrival: f64,
    /// Segment durations in dispatch order.
    pub durations: Vec<f64>,
    /// Frames the rank emits (memory accounting only).
    pub frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    StallFree,
    WholeVideo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Admit,
    InitStart,
    InitDone,
    SegmentStart,
    SegmentEnd,
    WorkerDone,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Admit => "admit",
            EventKind::InitStart => "init-start",
            EventKind::InitDone => "init-done",
            EventKind::SegmentStart => "segment-start",
            EventKind::SegmentEnd => "segment-end",
            EventKind::WorkerDone => "worker-done",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: f64,
    pub gpu: usize,
    pub engine: Option<usize>,
    pub job: u64,
    pub rank: usize,
    pub segment: Option<usize>,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerRecord {
    pub job: u64,
    pub rank: usize,
    pub gpu: usize,
    pub arrival: f64,
    pub admitted: f64,
    pub ready: f64,
    pub done: f64,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: u64,
    pub arrival: f64,
    pub completion: f64,
    /// Frames the whole video emits.
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTrace {
    pub policy: Policy,
    pub topology: EngineTopology,
    pub events: Vec<TraceEvent>,
    pub workers: Vec<WorkerRecord>,
    pub jobs: Vec<JobRecord>,
}

impl ScheduleTrace {
    pub fn makespan(&self) -> f64 {
        self.jobs.iter().map(|j| j.completion).fold(0.0, f64::max)
    }

    pub fn job(&self, id: u64) -> Option<&JobRecord> {
        self.jobs.iter().find(|j| j.id == id)
    }

    /// Busy fraction of each engine over the makespan, indexed
    /// `[gpu][engine]`.
    pub fn engine_utilization(&self) -> Vec<Vec<f64>> {
        let span = self.makespan();
        let mut busy = vec![vec![0.0; self.topology.engines_per_gpu]; self.topology.num_gpus];
        let mut started: std::collections::HashMap<(usize, usize), f64> = Default::default();
        for e in &self.events {
            let Some(engine) = e.engine else { continue };
            match e.kind {
                EventKind::SegmentStart => {
                    started.insert((e.gpu, engine), e.time);
                }
                EventKind::SegmentEnd => {
                    if let Some(t0) = started.remove(&(e.gpu, engine)) {
                        busy[e.gpu][engine] += e.time - t0;
                    }
                }
                _ => {}
            }
        }
        if span > 0.0 {
            for row in &mut busy {
                for b in row.iter_mut() {
                    *b /= span;
                }
            }
        }
        busy
    }

    /// `time,gpu,engine,job,rank,segment,event` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,gpu,engine,job,rank,segment,event\n");
        for e in &self.events {
            let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{:.9},{},{},{},{},{},{}\n",
                e.time,
                e.gpu,
                opt(e.engine),
                e.job,
                e.rank,
                opt(e.segment),
                e.kind.as_str()
            ));
        }
        out
    }
}

/// Expands jobs into per-rank workers with segment durations.
///
/// Rank `r` runs on GPU `r % num_gpus`. Jitter, when enabled, is drawn in
/// job/rank/segment order from `seed`, so both policies see identical
/// durations.
pub fn build_workers(jobs: &[DecodeJob], topo: &EngineTopology, model: &DecodeCostModel, seed: u64) -> Vec<WorkerSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut workers = Vec::new();
    for job in jobs {
        let plan = &job.plan;
        let demuxed = job.arrival + plan.total_work() as f64 * model.demux_per_frame;
        for (rank, segs) in plan.ranks.iter().enumerate() {
            let durations = segs
                .iter()
                .map(|s| {
                    let base = estimate_work(s, plan.codec, plan.resolution, model);
                    if model.jitter > 0.0 {
                        base * (1.0 + model.jitter * (2.0 * rng.gen::<f64>() - 1.0))
                    } else {
                        base
                    }
                })
                .collect();
            workers.push(WorkerSpec {
                job: job.id,
                rank,
                gpu: rank % topo.num_gpus,
                arrival: demuxed,
                durations,
                frames: plan.emitted_frames(rank),
            });
        }
    }
    workers
}

pub fn schedule_stall_free(
    jobs: &[DecodeJob],
    topo: &EngineTopology,
    model: &DecodeCostModel,
    seed: u64,
) -> ScheduleTrace {
    let workers = build_workers(jobs, topo, model, seed);
    simulate(&workers, topo, model.worker_init_serialization, Policy::StallFree)
}

pub fn schedule_whole_video(
    jobs: &[DecodeJob],
    topo: &EngineTopology,
    model: &DecodeCostModel,
    seed: u64,
) -> ScheduleTrace {
    let workers = build_workers(jobs, topo, model, seed);
    simulate(&workers, topo, model.worker_init_serialization, Policy::WholeVideo)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Wake {
    Arrival(usize),
    InitDone(usize),
    SegmentDone { worker: usize, engine: usize, seg: usize },
}

#[derive(Debug)]
struct Pending {
    time: f64,
    seq: u64,
    wake: Wake,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    // min-heap on (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

struct WorkerState {
    queued: VecDeque<usize>,
    running: usize,
    admitted: f64,
    ready: Option<f64>,
    done: Option<f64>,
}

struct GpuLoop<'a> {
    gpu: usize,
    policy: Policy,
    worker_init: f64,
    max_tasks: usize,
    specs: &'a [WorkerSpec],
    /// Indices into `specs`, in FIFO order.
    order: Vec<usize>,
    state: Vec<WorkerState>,
    engines: Vec<Option<usize>>,
    heap: BinaryHeap<Pending>,
    seq: u64,
    waiting: VecDeque<usize>,
    active: usize,
    init_free_at: f64,
    events: Vec<TraceEvent>,
}

impl<'a> GpuLoop<'a> {
    fn push(&mut self, time: f64, wake: Wake) {
        self.seq += 1;
        self.heap.push(Pending {
            time,
            seq: self.seq,
            wake,
        });
    }

    fn log(&mut self, time: f64, w: usize, engine: Option<usize>, segment: Option<usize>, kind: EventKind) {
        let spec = &self.specs[w];
        self.events.push(TraceEvent {
            time,
            gpu: self.gpu,
            engine,
            job: spec.job,
            rank: spec.rank,
            segment,
            kind,
        });
    }

    fn capacity(&self) -> usize {
        match self.policy {
            Policy::StallFree => self.max_tasks,
            Policy::WholeVideo => 1,
        }
    }

    fn admit(&mut self, now: f64) {
        while self.active < self.capacity() {
            let Some(w) = self.waiting.pop_front() else { break };
            self.active += 1;
            let start = now.max(self.init_free_at);
            let end = start + self.worker_init;
            self.init_free_at = end;
            self.state[w].admitted = now;
            self.log(now, w, None, None, EventKind::Admit);
            self.log(start, w, None, None, EventKind::InitStart);
            self.push(end, Wake::InitDone(w));
        }
    }

    fn start_segment(&mut self, now: f64, w: usize, engine: usize) {
        let seg = self.state[w].queued.pop_front().expect("worker has a queued segment");
        self.state[w].running += 1;
        self.engines[engine] = Some(w);
        self.log(now, w, Some(engine), Some(seg), EventKind::SegmentStart);
        let end = now + self.specs[w].durations[seg];
        self.push(end, Wake::SegmentDone { worker: w, engine, seg });
    }

    /// Fills free engines from ready workers, longest-waiting first.
    fn dispatch(&mut self, now: f64) {
        loop {
            let Some(engine) = self.engines.iter().position(Option::is_none) else {
                return;
            };
            let next = self.order.iter().copied().find(|&w| {
                self.state[w].ready.is_some() && self.state[w].done.is_none() && !self.state[w].queued.is_empty()
            });
            let Some(w) = next else { return };
            self.start_segment(now, w, engine);
        }
    }

    fn finish_if_done(&mut self, now: f64, w: usize) {
        let st = &self.state[w];
        if st.done.is_none() && st.queued.is_empty() && st.running == 0 && st.ready.is_some() {
            self.state[w].done = Some(now);
            self.active -= 1;
            self.log(now, w, None, None, EventKind::WorkerDone);
            self.admit(now);
        }
    }

    fn run(mut self) -> (Vec<TraceEvent>, Vec<WorkerRecord>) {
        for i in 0..self.order.len() {
            let w = self.order[i];
            self.push(self.specs[w].arrival, Wake::Arrival(w));
        }
        while let Some(Pending { time: now, wake, .. }) = self.heap.pop() {
            match wake {
                Wake::Arrival(w) => {
                    self.waiting.push_back(w);
                    self.admit(now);
                }
                Wake::InitDone(w) => {
                    self.state[w].ready = Some(now);
                    self.log(now, w, None, None, EventKind::InitDone);
                    self.dispatch(now);
                    self.finish_if_done(now, w);
                }
                Wake::SegmentDone { worker: w, engine, seg } => {
                    self.state[w].running -= 1;
                    self.engines[engine] = None;
                    self.log(now, w, Some(engine), Some(seg), EventKind::SegmentEnd);
                    // the worker that just finished keeps the engine if it has more
                    if !self.state[w].queued.is_empty() {
                        self.start_segment(now, w, engine);
                    }
                    self.finish_if_done(now, w);
                    self.dispatch(now);
                }
            }
        }
        let records = self
            .order
            .iter()
            .map(|&w| {
                let spec = &self.specs[w];
                let st = &self.state[w];
                WorkerRecord {
                    job: spec.job,
                    rank: spec.rank,
                    gpu: spec.gpu,
                    arrival: spec.arrival,
                    admitted: st.admitted,
                    ready: st.ready.expect("every worker initializes"),
                    done: st.done.expect("every worker completes"),
                    frames: spec.frames,
                }
            })
            .collect();
        (self.events, records)
    }
}

/// Runs the per-GPU event loops for `workers` under `policy`.
///
/// Waiting workers are ordered by arrival, then job id, then rank.
pub fn simulate(workers: &[WorkerSpec], topo: &EngineTopology, worker_init: f64, policy: Policy) -> ScheduleTrace {
    let mut events = Vec::new();
    let mut records = Vec::new();
    for gpu in 0..topo.num_gpus {
        let mut order: Vec<usize> = (0..workers.len()).filter(|&w| workers[w].gpu == gpu).collect();
        order.sort_by(|&a, &b| {
            let (x, y) = (&workers[a], &workers[b]);
            x.arrival
                .total_cmp(&y.arrival)
                .then(x.job.cmp(&y.job))
                .then(x.rank.cmp(&y.rank))
        });
        let state = workers
            .iter()
            .map(|w| WorkerState {
                queued: (0..w.durations.len()).collect(),
                running: 0,
                admitted: 0.0,
                ready: None,
                done: None,
            })
            .collect();
        let engine_count = topo.engines_per_gpu;
        let gl = GpuLoop {
            gpu,
            policy,
            worker_init,
            max_tasks: topo.max_decode_tasks,
            specs: workers,
            order,
            state,
            engines: vec![None; engine_count],
            heap: BinaryHeap::new(),
            seq: 0,
            waiting: VecDeque::new(),
            active: 0,
            init_free_at: f64::NEG_INFINITY,
            events: Vec::new(),
        };
        let (ev, rec) = gl.run();
        events.extend(ev);
        records.extend(rec);
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.gpu.cmp(&b.gpu)));

    let mut jobs: Vec<JobRecord> = Vec::new();
    for r in &records {
        match jobs.iter_mut().find(|j| j.id == r.job) {
            Some(j) => {
                j.completion = j.completion.max(r.done);
                j.frames += r.frames;
            }
            None => jobs.push(JobRecord {
                id: r.job,
                arrival: r.arrival,
                completion: r.done,
                frames: r.frames,
            }),
        }
    }
    jobs.sort_by_key(|j| j.id);

    ScheduleTrace {
        policy,
        topology: *topo,
        events,
        workers: records,
        jobs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryPolicy {
    /// Whole-video frame buffer reserved when the request is accepted.
    Preallocate,
    /// Each rank's frames reserved when that rank finishes decoding.
    DeferredPerRank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub policy: MemoryPolicy,
    /// Peak resident frames per GPU.
    pub peak_frames: Vec<usize>,
    /// First time each GPU reached its peak.
    pub peak_time: Vec<f64>,
}

impl MemoryReport {
    pub fn max_peak(&self) -> usize {
        self.peak_frames.iter().copied().max().unwrap_or(0)
    }
}

/// Replays `trace` and reports resident decoded-frame memory per GPU.
///
/// Buffers are released when the whole video completes (handoff to the
/// encoder). At equal timestamps, reservations are applied before releases.
pub fn account_memory(trace: &ScheduleTrace, policy: MemoryPolicy) -> MemoryReport {
    let gpus = trace.topology.num_gpus;
    // (time, gpu, delta)
    let mut deltas: Vec<(f64, usize, i64)> = Vec::new();
    for job in &trace.jobs {
        let workers: Vec<&WorkerRecord> = trace.workers.iter().filter(|w| w.job == job.id).collect();
        match policy {
            MemoryPolicy::Preallocate => {
                let mut used: Vec<usize> = workers.iter().map(|w| w.gpu).collect();
                used.sort_unstable();
                used.dedup();
                for gpu in used {
                    deltas.push((job.arrival, gpu, job.frames as i64));
                    deltas.push((job.completion, gpu, -(job.frames as i64)));
                }
            }
            MemoryPolicy::DeferredPerRank => {
                for w in workers {
                    deltas.push((w.done, w.gpu, w.frames as i64));
                    deltas.push((job.completion, w.gpu, -(w.frames as i64)));
                }
            }
        }
    }
    deltas.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.2.cmp(&a.2)));
    let mut current = vec![0i64; gpus];
    let mut peak_frames = vec![0usize; gpus];
    let mut peak_time = vec![0.0; gpus];
    for (t, gpu, d) in deltas {
        current[gpu] += d;
        if current[gpu] > peak_frames[gpu] as i64 {
            peak_frames[gpu] = current[gpu] as usize;
            peak_time[gpu] = t;
        }
    }
    MemoryReport {
        policy,
        peak_frames,
        peak_time,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub num_gpus: usize,
    pub engines_per_gpu: usize,
    pub latency: f64,
    pub speedup: f64,
}

/// Single-video decode latency at each topology, relative to decoding the
/// same frames on one engine of one GPU.
pub fn decode_speedup(
    meta: &VideoMeta,
    policy: &SelectionPolicy,
    temporal_patch: usize,
    ladder: &[EngineTopology],
    model: &DecodeCostModel,
) -> Result<Vec<SpeedupRow>, SchedError> {
    model.validate()?;
    let latency = |topo: &EngineTopology| -> Result<f64, SchedError> {
        topo.validate()?;
        let plan = plan_video(meta, policy, topo.num_gpus, topo.engines_per_gpu, temporal_patch)?;
        let job = DecodeJob {
            id: 0,
            arrival: 0.0,
            plan,
        };
        Ok(schedule_stall_free(&[job], topo, model, 0).makespan())
    };
    let baseline = latency(&EngineTopology::new(1, 1, 1))?;
    ladder
        .iter()
        .map(|topo| {
            let l = latency(topo)?;
            Ok(SpeedupRow {
                num_gpus: topo.num_gpus,
                engines_per_gpu: topo.engines_per_gpu,
                latency: l,
                speedup: baseline / l,
            })
        })
        .collect()
}
