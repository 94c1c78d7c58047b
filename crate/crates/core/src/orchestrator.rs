//! Encode/prefill co-scheduling under token budgets, plus the decode batch.
//!
//! Every iteration of [`EpScheduler`] builds an encode batch `E` and a
//! prefill batch `B`:
//!
//! 1. requests already in `B` get their next prefill chunk, capped so the
//!    iteration's prefill tokens `n_p` stay within `tau`;
//! 2. multimodal requests whose visual preprocessing is done are pulled into
//!    `E` in arrival order while `n_e < alpha` and visual-buffer pages can be
//!    reserved; the scan stops at the first ready request that cannot be
//!    taken;
//! 3. the oldest waiting request that is ready for prefill (text-only, or
//!    its encode is done or happens this iteration) is admitted into `B`
//!    when its KV pages can be reserved.
//!
//! `E` runs to completion first, split into executions of at most `alpha`
//! patch tokens at encode-unit granularity (an image, or a temporal patch of
//! a video). `B` runs afterwards as a single execution.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed_buffer::{PagedBuffer, RequestId, TokenSpan, DEFAULT_PAGE_SIZE};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrchestratorError {
    #[error("invalid scheduler config: {0}")]
    InvalidConfig(String),
    #[error("invalid interference table: {0}")]
    InvalidInterference(String),
    #[error("invalid request {id}: {reason}")]
    InvalidRequest { id: RequestId, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Encode,
    Prefill,
    Decode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Modality {
    Text,
    Image { images: usize },
    Video { frames: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Request {
    pub id: RequestId,
    pub arrival: f64,
    pub modality: Modality,
    pub text_tokens: usize,
    /// Images, or temporal patches of a video.
    pub encode_units: usize,
    pub unit_patch_tokens: usize,
    pub unit_visual_tokens: usize,
    pub output_tokens: usize,
}

impl Request {
    pub fn text(id: RequestId, arrival: f64, text_tokens: usize, output_tokens: usize) -> Self {
        Request {
            id,
            arrival,
            modality: Modality::Text,
            text_tokens,
            encode_units: 0,
            unit_patch_tokens: 0,
            unit_visual_tokens: 0,
            output_tokens,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn multimodal(
        id: RequestId,
        arrival: f64,
        modality: Modality,
        encode_units: usize,
        unit_patch_tokens: usize,
        unit_visual_tokens: usize,
        text_tokens: usize,
        output_tokens: usize,
    ) -> Self {
        Request {
            id,
            arrival,
            modality,
            text_tokens,
            encode_units,
            unit_patch_tokens,
            unit_visual_tokens,
            output_tokens,
        }
    }

    pub fn is_multimodal(&self) -> bool {
        !matches!(self.modality, Modality::Text)
    }

    pub fn patch_tokens(&self) -> usize {
        self.encode_units * self.unit_patch_tokens
    }

    pub fn visual_tokens(&self) -> usize {
        self.encode_units * self.unit_visual_tokens
    }

    /// Visual tokens followed by text tokens.
    pub fn prompt_tokens(&self) -> usize {
        self.visual_tokens() + self.text_tokens
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |reason: &str| {
            Err(OrchestratorError::InvalidRequest {
                id: self.id,
                reason: reason.into(),
            })
        };
        if !self.arrival.is_finite() || self.arrival < 0.0 {
            return bad("arrival must be finite and >= 0");
        }
        if self.output_tokens == 0 {
            return bad("output_tokens must be >= 1");
        }
        if self.unit_patch_tokens < self.unit_visual_tokens {
            return bad("patch tokens must be >= visual tokens");
        }
        match self.modality {
            Modality::Text if self.encode_units != 0 => bad("text request with encode units"),
            Modality::Image { .. } | Modality::Video { .. }
                if self.encode_units == 0 || self.unit_patch_tokens == 0 =>
            {
                bad("multimodal request without patch tokens")
            }
            _ if self.prompt_tokens() == 0 => bad("empty prompt"),
            _ => Ok(()),
        }
    }
}

/// Stage timestamps of one request.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RequestTimes {
    pub arrival: f64,
    pub decode_done: Option<f64>,
    pub encode_done: Option<f64>,
    pub prefill_done: Option<f64>,
    /// First entry is the first token.
    pub token_times: Vec<f64>,
}

impl RequestTimes {
    pub fn new(arrival: f64) -> Self {
        RequestTimes {
            arrival,
            ..Default::default()
        }
    }

    pub fn first_token(&self) -> Option<f64> {
        self.token_times.first().copied()
    }

    pub fn last_token(&self) -> Option<f64> {
        self.token_times.last().copied()
    }

    pub fn ttft(&self) -> Option<f64> {
        self.first_token().map(|t| t - self.arrival)
    }

    pub fn tbt(&self) -> Vec<f64> {
        self.token_times.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Stages present so far appear in pipeline order.
    pub fn is_monotone(&self) -> bool {
        let mut stages = vec![self.arrival];
        stages.extend(self.decode_done);
        stages.extend(self.encode_done);
        stages.extend(self.prefill_done);
        stages.extend(self.token_times.iter().copied());
        stages.windows(2).all(|w| w[0] <= w[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerConfig {
    /// Prefill token budget per iteration.
    pub tau: usize,
    /// Encode token budget per iteration.
    pub alpha: usize,
    /// Capacity knob the budgets would be derived from; budgets are set
    /// directly, so this is carried for reporting only.
    pub t_max: Option<f64>,
    pub tbt_slo: f64,
    pub kv_pages: usize,
    pub kv_page_size: usize,
    pub visual_pages: usize,
    pub visual_page_size: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            tau: 2048,
            alpha: 10240,
            t_max: None,
            tbt_slo: 0.7,
            kv_pages: 16384,
            kv_page_size: DEFAULT_PAGE_SIZE,
            visual_pages: 2048,
            visual_page_size: DEFAULT_PAGE_SIZE,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: &str| Err(OrchestratorError::InvalidConfig(m.into()));
        if self.tau == 0 || self.alpha == 0 {
            return bad("tau and alpha must be >= 1");
        }
        if self.kv_page_size == 0 || self.visual_page_size == 0 {
            return bad("page sizes must be >= 1");
        }
        if self.kv_pages == 0 || self.visual_pages == 0 {
            return bad("page pools must be non-empty");
        }
        if !(self.tbt_slo > 0.0) {
            return bad("tbt_slo must be > 0");
        }
        Ok(())
    }
}

/// Seconds per phase on the whole serving instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseCostModel {
    pub prefill_per_token: f64,
    pub encode_per_patch_token: f64,
    pub decode_base: f64,
    pub decode_per_seq: f64,
}

impl Default for PhaseCostModel {
    fn default() -> Self {
        PhaseCostModel {
            prefill_per_token: 8.0e-5,
            encode_per_patch_token: 2.0e-5,
            decode_base: 0.03,
            decode_per_seq: 3.0e-4,
        }
    }
}

impl PhaseCostModel {
    pub fn prefill_time(&self, tokens: usize) -> f64 {
        self.prefill_per_token * tokens as f64
    }

    pub fn encode_time(&self, patch_tokens: usize) -> f64 {
        self.encode_per_patch_token * patch_tokens as f64
    }

    pub fn decode_time(&self, batch: usize) -> f64 {
        if batch == 0 {
            0.0
        } else {
            self.decode_base + self.decode_per_seq * batch as f64
        }
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        for (name, v) in [
            ("prefill_per_token", self.prefill_per_token),
            ("encode_per_patch_token", self.encode_per_patch_token),
            ("decode_base", self.decode_base),
            ("decode_per_seq", self.decode_per_seq),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(OrchestratorError::InvalidConfig(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Slowdown of `victim` while `aggressor` co-runs, sampled on a grid of
/// victim and aggressor intensities (batch size for decode, tokens for
/// encode and prefill).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterferenceGrid {
    pub victim: Phase,
    pub aggressor: Phase,
    pub victim_axis: Vec<f64>,
    pub aggressor_axis: Vec<f64>,
    /// `factors[i][j]` at `victim_axis[i]`, `aggressor_axis[j]`.
    pub factors: Vec<Vec<f64>>,
}

fn bracket(axis: &[f64], x: f64) -> (usize, usize, f64) {
    if axis.len() == 1 || x <= axis[0] {
        return (0, 0, 0.0);
    }
    let last = axis.len() - 1;
    if x >= axis[last] {
        return (last, last, 0.0);
    }
    let hi = axis.partition_point(|&a| a <= x);
    let lo = hi - 1;
    (lo, hi, (x - axis[lo]) / (axis[hi] - axis[lo]))
}

impl InterferenceGrid {
    /// Bilinear interpolation, clamped to the grid edges.
    pub fn lookup(&self, victim: f64, aggressor: f64) -> f64 {
        let (i0, i1, u) = bracket(&self.victim_axis, victim);
        let (j0, j1, v) = bracket(&self.aggressor_axis, aggressor);
        let f = &self.factors;
        let a = f[i0][j0] * (1.0 - v) + f[i0][j1] * v;
        let b = f[i1][j0] * (1.0 - v) + f[i1][j1] * v;
        a * (1.0 - u) + b * u
    }

    fn validate(&self) -> Result<(), String> {
        let increasing = |axis: &[f64]| {
            !axis.is_empty() && axis.windows(2).all(|w| w[0] < w[1]) && axis.iter().all(|a| a.is_finite())
        };
        if !increasing(&self.victim_axis) || !increasing(&self.aggressor_axis) {
            return Err(format!(
                "{:?}<-{:?}: axes must be non-empty and strictly increasing",
                self.victim, self.aggressor
            ));
        }
        if self.victim == self.aggressor {
            return Err(format!("{:?}: a phase cannot interfere with itself", self.victim));
        }
        if self.factors.len() != self.victim_axis.len()
            || self.factors.iter().any(|row| row.len() != self.aggressor_axis.len())
        {
            return Err(format!(
                "{:?}<-{:?}: factor grid shape mismatch",
                self.victim, self.aggressor
            ));
        }
        if self.factors.iter().flatten().any(|&f| !(f.is_finite() && f >= 1.0)) {
            return Err(format!(
                "{:?}<-{:?}: factors must be >= 1.0",
                self.victim, self.aggressor
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterferenceTable {
    pub grids: Vec<InterferenceGrid>,
}

impl Default for InterferenceTable {
    fn default() -> Self {
        use Phase::*;
        let decode_bs = vec![1.0, 32.0, 128.0];
        let ep_decode = |victim: Phase| InterferenceGrid {
            victim,
            aggressor: Decode,
            victim_axis: vec![1024.0, 10240.0],
            aggressor_axis: vec![0.0, 32.0, 128.0],
            factors: vec![vec![1.0, 1.1, 1.2], vec![1.0, 1.1, 1.2]],
        };
        InterferenceTable {
            grids: vec![
                InterferenceGrid {
                    victim: Decode,
                    aggressor: Prefill,
                    victim_axis: decode_bs.clone(),
                    aggressor_axis: vec![0.0, 512.0, 2048.0, 8192.0],
                    factors: vec![
                        vec![1.0, 1.4, 2.0, 2.8],
                        vec![1.0, 1.35, 1.9, 2.7],
                        vec![1.0, 1.3, 1.8, 2.5],
                    ],
                },
                InterferenceGrid {
                    victim: Decode,
                    aggressor: Encode,
                    victim_axis: decode_bs,
                    aggressor_axis: vec![0.0, 2048.0, 10240.0, 20480.0],
                    factors: vec![
                        vec![1.0, 1.5, 1.8, 2.2],
                        vec![1.0, 1.45, 1.75, 2.1],
                        vec![1.0, 1.4, 1.7, 2.0],
                    ],
                },
                ep_decode(Encode),
                ep_decode(Prefill),
            ],
        }
    }
}

impl InterferenceTable {
    /// No interference at all.
    pub fn none() -> Self {
        InterferenceTable { grids: Vec::new() }
    }

    pub fn grid(&self, victim: Phase, aggressor: Phase) -> Option<&InterferenceGrid> {
        self.grids
            .iter()
            .find(|g| g.victim == victim && g.aggressor == aggressor)
    }

    pub fn factor(&self, victim: Phase, victim_load: f64, aggressor: Phase, aggressor_load: f64) -> f64 {
        if aggressor_load <= 0.0 {
            return 1.0;
        }
        self.grid(victim, aggressor)
            .map_or(1.0, |g| g.lookup(victim_load, aggressor_load).max(1.0))
    }

    /// Product of the slowdowns from every co-running aggressor.
    pub fn apply_interference(&self, victim: Phase, victim_load: f64, aggressors: &[(Phase, f64)]) -> f64 {
        aggressors
            .iter()
            .map(|&(a, load)| self.factor(victim, victim_load, a, load))
            .product()
    }

    /// Grid sanity plus the ordering rule that prefill hurts decode at least
    /// as much as encode does at the same token count.
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: String| Err(OrchestratorError::InvalidInterference(m));
        for (i, g) in self.grids.iter().enumerate() {
            if let Err(m) = g.validate() {
                return bad(m);
            }
            if self.grids[..i]
                .iter()
                .any(|h| h.victim == g.victim && h.aggressor == g.aggressor)
            {
                return bad(format!("duplicate grid {:?}<-{:?}", g.victim, g.aggressor));
            }
        }
        let mut victims = Vec::new();
        let mut loads = Vec::new();
        for g in [
            self.grid(Phase::Decode, Phase::Prefill),
            self.grid(Phase::Decode, Phase::Encode),
        ]
        .into_iter()
        .flatten()
        {
            victims.extend(&g.victim_axis);
            loads.extend(&g.aggressor_axis);
        }
        for &v in &victims {
            for &a in &loads {
                let p = self.factor(Phase::Decode, v, Phase::Prefill, a);
                let e = self.factor(Phase::Decode, v, Phase::Encode, a);
                if p + 1e-12 < e {
                    return bad(format!(
                        "decode slowdown from prefill ({p:.3}) below encode ({e:.3}) at batch {v}, {a} tokens"
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefillChunk {
    pub request: RequestId,
    /// Prompt offset of the chunk.
    pub start: usize,
    pub tokens: usize,
}

/// One encoder execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeExec {
    /// `(request, units)` in batch order.
    pub units: Vec<(RequestId, usize)>,
    pub patch_tokens: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationPlan {
    pub encode: Vec<RequestId>,
    pub encode_execs: Vec<EncodeExec>,
    pub prefill: Vec<PrefillChunk>,
    pub n_e: usize,
    pub n_p: usize,
}

impl IterationPlan {
    pub fn is_empty(&self) -> bool {
        self.encode.is_empty() && self.prefill.is_empty()
    }

    pub fn prefill_requests(&self) -> Vec<RequestId> {
        self.prefill.iter().map(|c| c.request).collect()
    }
}

#[derive(Debug, Clone)]
struct EpEntry {
    req: Request,
    visual_ready: bool,
    encoded: bool,
    prefilled: usize,
}

/// Splits the encode batch into executions of at most `alpha` patch tokens,
/// never splitting an encode unit.
pub fn pack_encode(batch: &[(RequestId, usize, usize)], alpha: usize) -> Vec<EncodeExec> {
    let mut execs: Vec<EncodeExec> = Vec::new();
    let mut cur = EncodeExec {
        units: Vec::new(),
        patch_tokens: 0,
    };
    for &(req, units, unit_tokens) in batch {
        for _ in 0..units {
            if cur.patch_tokens > 0 && cur.patch_tokens + unit_tokens > alpha {
                execs.push(std::mem::replace(
                    &mut cur,
                    EncodeExec {
                        units: Vec::new(),
                        patch_tokens: 0,
                    },
                ));
            }
            match cur.units.last_mut() {
                Some((r, n)) if *r == req => *n += 1,
                _ => cur.units.push((req, 1)),
            }
            cur.patch_tokens += unit_tokens;
        }
    }
    if cur.patch_tokens > 0 {
        execs.push(cur);
    }
    execs
}

fn visual_word(req: RequestId, token: usize) -> u64 {
    (req << 32) ^ token as u64
}

/// Encode/prefill scheduler for one serving instance.
#[derive(Debug, Clone)]
pub struct EpScheduler {
    cfg: SchedulerConfig,
    entries: BTreeMap<RequestId, EpEntry>,
    /// Arrived, not yet admitted to prefill; arrival order.
    waiting: Vec<RequestId>,
    /// Admitted to prefill and not finished; admission order.
    running: Vec<RequestId>,
    visual: PagedBuffer,
    kv: PagedBuffer,
}

impl EpScheduler {
    pub fn new(cfg: SchedulerConfig) -> Result<Self, OrchestratorError> {
        cfg.validate()?;
        let visual = PagedBuffer::new(cfg.visual_page_size, cfg.visual_pages, 1)
            .map_err(|e| OrchestratorError::InvalidConfig(e.to_string()))?;
        let kv = PagedBuffer::new(cfg.kv_page_size, cfg.kv_pages, 1)
            .map_err(|e| OrchestratorError::InvalidConfig(e.to_string()))?;
        Ok(EpScheduler {
            cfg,
            entries: BTreeMap::new(),
            waiting: Vec::new(),
            running: Vec::new(),
            visual,
            kv,
        })
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.cfg
    }

    /// Registers an arrived request. Text requests are immediately ready.
    pub fn add_request(&mut self, req: Request) -> Result<(), OrchestratorError> {
        req.validate()?;
        let id = req.id;
        if self.entries.contains_key(&id) {
            return Err(OrchestratorError::InvalidRequest {
                id,
                reason: "duplicate id".into(),
            });
        }
        let visual_ready = !req.is_multimodal();
        self.entries.insert(
            id,
            EpEntry {
                req,
                visual_ready,
                encoded: false,
                prefilled: 0,
            },
        );
        self.waiting.push(id);
        Ok(())
    }

    /// Visual preprocessing (decode, patchify) of `id` has finished.
    pub fn mark_visual_ready(&mut self, id: RequestId) {
        if let Some(e) = self.entries.get_mut(&id) {
            e.visual_ready = true;
        }
    }

    pub fn waiting(&self) -> &[RequestId] {
        &self.waiting
    }

    pub fn running(&self) -> &[RequestId] {
        &self.running
    }

    pub fn kv_free_pages(&self) -> usize {
        self.kv.free_pages()
    }

    pub fn visual_free_pages(&self) -> usize {
        self.visual.free_pages()
    }

    pub fn visual_buffer(&self) -> &PagedBuffer {
        &self.visual
    }

    fn needs_encode(e: &EpEntry) -> bool {
        e.req.is_multimodal() && !e.encoded
    }

    fn kv_tokens(req: &Request) -> usize {
        req.prompt_tokens() + req.output_tokens
    }

    /// Builds this iteration's `E` and `B`, reserving buffer and KV pages
    /// for newly taken requests.
    pub fn schedule_iteration(&mut self) -> IterationPlan {
        let tau = self.cfg.tau;
        let alpha = self.cfg.alpha;
        let mut plan = IterationPlan::default();

        for &id in &self.running {
            let e = &self.entries[&id];
            let remaining = e.req.prompt_tokens() - e.prefilled;
            let c = remaining.min(tau - plan.n_p);
            if c > 0 {
                plan.prefill.push(PrefillChunk {
                    request: id,
                    start: e.prefilled,
                    tokens: c,
                });
                plan.n_p += c;
            }
        }

        let mut batch = Vec::new();
        for &id in &self.waiting {
            let e = &self.entries[&id];
            if !Self::needs_encode(e) || !e.visual_ready {
                continue;
            }
            let visual = e.req.visual_tokens();
            let reserved = self.visual.reserved(id) >= visual;
            if (reserved || self.visual.can_alloc(id, visual)) && plan.n_e < alpha {
                if !reserved {
                    self.visual.alloc_pages(id, visual).expect("checked can_alloc");
                }
                plan.n_e += e.req.patch_tokens();
                plan.encode.push(id);
                batch.push((id, e.req.encode_units, e.req.unit_patch_tokens));
            } else {
                break;
            }
        }
        plan.encode_execs = pack_encode(&batch, alpha);

        if plan.n_p < tau {
            let next = self.waiting.iter().position(|id| {
                let e = &self.entries[id];
                !Self::needs_encode(e) || plan.encode.contains(id)
            });
            if let Some(pos) = next {
                let id = self.waiting[pos];
                let req = &self.entries[&id].req;
                let need = Self::kv_tokens(req);
                let reserved = self.kv.reserved(id) >= need;
                if reserved || self.kv.can_alloc(id, need) {
                    if !reserved {
                        self.kv.alloc_pages(id, need).expect("checked can_alloc");
                    }
                    let c = req.prompt_tokens().min(tau - plan.n_p);
                    plan.prefill.push(PrefillChunk {
                        request: id,
                        start: 0,
                        tokens: c,
                    });
                    plan.n_p += c;
                    self.waiting.remove(pos);
                    self.running.push(id);
                }
            }
        }

        assert!(plan.n_p <= tau, "prefill batch {} exceeds budget {tau}", plan.n_p);
        plan
    }

    /// Encoder outputs of `plan` land in the visual buffer.
    pub fn finish_encode(&mut self, plan: &IterationPlan) {
        for &id in &plan.encode {
            let e = self.entries.get_mut(&id).expect("scheduled request exists");
            let n = e.req.visual_tokens();
            let payload = (0..n).map(|t| visual_word(id, t)).collect();
            self.visual
                .write(&TokenSpan::new(id, 0, 1, payload))
                .expect("visual pages reserved at scheduling");
            e.encoded = true;
        }
    }

    /// Applies the prefill chunks of `plan`; returns requests whose prefill
    /// finished, in batch order.
    pub fn finish_prefill(&mut self, plan: &IterationPlan) -> Vec<RequestId> {
        let mut done = Vec::new();
        for chunk in &plan.prefill {
            let id = chunk.request;
            let e = self.entries.get_mut(&id).expect("scheduled request exists");
            assert_eq!(e.prefilled, chunk.start, "prefill chunks out of order");
            let visual = e.req.visual_tokens();
            let end = chunk.start + chunk.tokens;
            if chunk.start < visual {
                let upto = end.min(visual);
                let (span, _) = self
                    .visual
                    .read(id, upto - chunk.start)
                    .expect("visual tokens written before prefill");
                let ok = span
                    .payload
                    .iter()
                    .enumerate()
                    .all(|(k, &w)| w == visual_word(id, chunk.start + k));
                assert!(ok, "visual buffer returned foreign tokens for request {id}");
            }
            e.prefilled = end;
            if end == e.req.prompt_tokens() {
                self.visual.release(id);
                self.running.retain(|&r| r != id);
                done.push(id);
            }
        }
        done
    }

    /// Frees the KV pages of a finished request.
    pub fn release(&mut self, id: RequestId) {
        self.kv.release(id);
        self.visual.release(id);
        self.entries.remove(&id);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeSeq {
    pub request: RequestId,
    pub remaining: usize,
    pub ready_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeStep {
    pub batch_size: usize,
    pub factor: f64,
    pub latency: f64,
    /// One token for each of these requests.
    pub emitted: Vec<RequestId>,
    pub finished: Vec<RequestId>,
}

/// Continuous decode batch fed by prefill handoffs.
#[derive(Debug, Clone, Default)]
pub struct DecodeBatch {
    active: Vec<DecodeSeq>,
    pending: VecDeque<DecodeSeq>,
}

impl DecodeBatch {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queues a prefilled request; it joins the first step starting at or
    /// after `ready_at` (prefill completion plus any transfer cost).
    pub fn handoff(&mut self, request: RequestId, ready_at: f64, remaining: usize) {
        if remaining > 0 {
            self.pending.push_back(DecodeSeq {
                request,
                remaining,
                ready_at,
            });
        }
    }

    pub fn active(&self) -> usize {
        self.active.len()
    }

    pub fn is_idle(&self) -> bool {
        self.active.is_empty() && self.pending.is_empty()
    }

    pub fn next_ready(&self) -> Option<f64> {
        self.pending.iter().map(|s| s.ready_at).min_by(f64::total_cmp)
    }

    /// Moves ready handoffs into the batch, preserving handoff order.
    pub fn admit_ready(&mut self, now: f64) {
        let mut keep = VecDeque::with_capacity(self.pending.len());
        while let Some(s) = self.pending.pop_front() {
            if s.ready_at <= now {
                self.active.push(s);
            } else {
                keep.push_back(s);
            }
        }
        self.pending = keep;
    }

    /// Batch size the next step would run with at `now`.
    pub fn batch_at(&self, now: f64) -> usize {
        self.active.len() + self.pending.iter().filter(|s| s.ready_at <= now).count()
    }

    /// One decode iteration starting at `now`.
    pub fn decode_step(&mut self, now: f64, cost: &PhaseCostModel, factor: f64) -> DecodeStep {
        self.admit_ready(now);
        let bs = self.active.len();
        let latency = cost.decode_time(bs) * factor;
        let emitted: Vec<RequestId> = self.active.iter().map(|s| s.request).collect();
        let mut finished = Vec::new();
        for s in &mut self.active {
            s.remaining -= 1;
            if s.remaining == 0 {
                finished.push(s.request);
            }
        }
        self.active.retain(|s| s.remaining > 0);
        DecodeStep {
            batch_size: bs,
            factor,
            latency,
            emitted,
            finished,
        }
    }
}
