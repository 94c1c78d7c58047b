//! Paged storage for patch-token and visual-token embeddings.
//!
//! Each request owns an ordered list of fixed-size pages. Token `t` of a
//! request lives in its `t / page_size`-th page (counting pages already
//! freed) at offset `t % page_size`. Reads consume a request's tokens as a
//! prefix; any page whose last token has been consumed is freed right away.
//!
//! Embeddings are split across `lanes` producers along the embedding
//! dimension. A token carries one `u64` word per lane, and one page table
//! addresses every lane.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type PageId = u32;
pub type RequestId = u64;

pub const DEFAULT_PAGE_SIZE: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BufferError {
    #[error("request {req}: need {needed} pages, {free} free")]
    OutOfPages { req: RequestId, needed: usize, free: usize },
    #[error("request {req}: write starts at token {start}, expected {expected}")]
    GapError {
        req: RequestId,
        start: usize,
        expected: usize,
    },
    #[error("request {req}: write to tokens {end_exclusive} exceeds reserved capacity {capacity}")]
    CapacityError {
        req: RequestId,
        end_exclusive: usize,
        capacity: usize,
    },
    #[error("request {req}: tokens {start}..{end} not fully written (written {written})")]
    UnwrittenRange {
        req: RequestId,
        start: usize,
        end: usize,
        written: usize,
    },
    #[error("request {req}: read starts at {start}, consumed prefix ends at {consumed}")]
    OutOfOrderRead {
        req: RequestId,
        start: usize,
        consumed: usize,
    },
    #[error("request {req}: page {page} is not owned by this request")]
    UseAfterFree { req: RequestId, page: PageId },
    #[error("unknown request {0}")]
    UnknownRequest(RequestId),
    #[error("request {0} missing from ragged index")]
    NotInIndex(RequestId),
    #[error("index/span mismatch: {0}")]
    IndexMismatch(String),
    #[error("invalid buffer config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueueError {
    #[error("write {write_id}: producers {missing:?} never submitted")]
    PartialSubmission { write_id: u64, missing: Vec<usize> },
    #[error("write {write_id}: producer {producer} out of range or submitted twice")]
    BadProducer { write_id: u64, producer: usize },
    #[error("write {write_id}: chunk metadata disagrees with earlier chunks")]
    InconsistentChunk { write_id: u64 },
    #[error(transparent)]
    Buffer(#[from] BufferError),
}

/// Contiguous tokens of one request, `lanes` words per token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub request: RequestId,
    pub start: usize,
    pub lanes: usize,
    /// Token-major: word `t * lanes + l` is lane `l` of token `start + t`.
    pub payload: Vec<u64>,
}

impl TokenSpan {
    pub fn new(request: RequestId, start: usize, lanes: usize, payload: Vec<u64>) -> Self {
        TokenSpan {
            request,
            start,
            lanes,
            payload,
        }
    }

    pub fn len(&self) -> usize {
        self.payload.len().checked_div(self.lanes).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len()
    }

    /// FNV-1a over the payload words.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for w in &self.payload {
            for b in w.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndptrEntry {
    pub start: usize,
    pub end: usize,
    pub count: usize,
}

/// Per-iteration addressing for a batch of requests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaggedIndex {
    pub requests: Vec<RequestId>,
    /// Batch-local token range of each request.
    pub pv_indptr: Vec<IndptrEntry>,
    pub pv_page_indices: Vec<PageId>,
    /// `pv_page_indices[pv_page_indptr[i]..pv_page_indptr[i + 1]]` are the
    /// pages touched by request `i`.
    pub pv_page_indptr: Vec<usize>,
    /// Tokens written (or consumed) by each request in earlier iterations.
    pub pv_cu_page_len: Vec<usize>,
    pub page_size: usize,
}

impl RaggedIndex {
    pub fn position(&self, req: RequestId) -> Option<usize> {
        self.requests.iter().position(|&r| r == req)
    }

    pub fn pages(&self, i: usize) -> &[PageId] {
        &self.pv_page_indices[self.pv_page_indptr[i]..self.pv_page_indptr[i + 1]]
    }

    /// Structural checks: brackets, counts, and page coverage.
    pub fn check(&self) -> Result<(), String> {
        let n = self.requests.len();
        if self.pv_indptr.len() != n || self.pv_cu_page_len.len() != n || self.pv_page_indptr.len() != n + 1 {
            return Err("per-request arrays disagree in length".into());
        }
        if self.pv_page_indptr[0] != 0 || self.pv_page_indptr[n] != self.pv_page_indices.len() {
            return Err("pv_page_indptr does not bracket pv_page_indices".into());
        }
        if self.pv_page_indptr.windows(2).any(|w| w[0] > w[1]) {
            return Err("pv_page_indptr decreases".into());
        }
        for i in 0..n {
            let e = self.pv_indptr[i];
            if e.end < e.start || e.end - e.start != e.count {
                return Err(format!("request {i}: count != end - start"));
            }
            let offset = self.pv_cu_page_len[i] % self.page_size;
            let pages = self.pages(i).len();
            if e.count > 0 && pages * self.page_size < offset + e.count {
                return Err(format!(
                    "request {i}: {pages} pages cannot hold {} tokens at offset {offset}",
                    e.count
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PageEventKind {
    Alloc,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageEvent {
    pub seq: u64,
    pub kind: PageEventKind,
    pub request: RequestId,
    pub page: PageId,
}

#[derive(Debug, Clone, Default)]
struct RequestState {
    pages: VecDeque<PageId>,
    /// Pages already released from the front of `pages`.
    freed_pages: usize,
    reserved: usize,
    written: usize,
    consumed: usize,
}

impl RequestState {
    fn capacity(&self, page_size: usize) -> usize {
        (self.freed_pages + self.pages.len()) * page_size
    }

    /// Pages holding tokens `range`, which must start at or after the first
    /// live page.
    fn pages_for(&self, range: Range<usize>, page_size: usize) -> Vec<PageId> {
        if range.is_empty() {
            return Vec::new();
        }
        let first = range.start / page_size - self.freed_pages;
        let last = (range.end - 1) / page_size - self.freed_pages;
        (first..=last).map(|i| self.pages[i]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct PagedBuffer {
    page_size: usize,
    total_pages: usize,
    lanes: usize,
    free: BTreeSet<PageId>,
    owner: Vec<Option<RequestId>>,
    /// Grown on demand up to the highest page written.
    storage: Vec<u64>,
    requests: BTreeMap<RequestId, RequestState>,
    events: Vec<PageEvent>,
    seq: u64,
}

impl PagedBuffer {
    pub fn new(page_size: usize, total_pages: usize, lanes: usize) -> Result<Self, BufferError> {
        if page_size == 0 || lanes == 0 {
            return Err(BufferError::InvalidConfig("page_size and lanes must be >= 1".into()));
        }
        if total_pages > PageId::MAX as usize {
            return Err(BufferError::InvalidConfig("too many pages".into()));
        }
        Ok(PagedBuffer {
            page_size,
            total_pages,
            lanes,
            free: (0..total_pages as PageId).collect(),
            owner: vec![None; total_pages],
            storage: Vec::new(),
            requests: BTreeMap::new(),
            events: Vec::new(),
            seq: 0,
        })
    }

    pub fn page_size(&self) -> usize {
        self.page_size
    }

    pub fn total_pages(&self) -> usize {
        self.total_pages
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }

    pub fn free_pages(&self) -> usize {
        self.free.len()
    }

    pub fn owned_pages(&self) -> usize {
        self.owner.iter().filter(|o| o.is_some()).count()
    }

    pub fn owner(&self, page: PageId) -> Option<RequestId> {
        self.owner.get(page as usize).copied().flatten()
    }

    /// Live pages of `req`, oldest first.
    pub fn request_pages(&self, req: RequestId) -> Vec<PageId> {
        self.requests
            .get(&req)
            .map(|s| s.pages.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn written(&self, req: RequestId) -> usize {
        self.requests.get(&req).map_or(0, |s| s.written)
    }

    pub fn consumed(&self, req: RequestId) -> usize {
        self.requests.get(&req).map_or(0, |s| s.consumed)
    }

    pub fn reserved(&self, req: RequestId) -> usize {
        self.requests.get(&req).map_or(0, |s| s.reserved)
    }

    pub fn events(&self) -> &[PageEvent] {
        &self.events
    }

    pub fn events_csv(&self) -> String {
        let mut out = String::from("seq,event,request,page\n");
        for e in &self.events {
            let kind = match e.kind {
                PageEventKind::Alloc => "alloc",
                PageEventKind::Free => "free",
            };
            out.push_str(&format!("{},{},{},{}\n", e.seq, kind, e.request, e.page));
        }
        out
    }

    /// Pages that `tokens` more tokens for `req` would need.
    pub fn pages_needed(&self, req: RequestId, tokens: usize) -> usize {
        let (reserved, have) = self
            .requests
            .get(&req)
            .map_or((0, 0), |s| (s.reserved, s.freed_pages + s.pages.len()));
        (reserved + tokens).div_ceil(self.page_size).saturating_sub(have)
    }

    pub fn can_alloc(&self, req: RequestId, tokens: usize) -> bool {
        self.pages_needed(req, tokens) <= self.free.len()
    }

    /// Reserves `tokens` more tokens for `req`, appending the fewest pages
    /// that cover the cumulative reservation. Fails without side effects.
    pub fn alloc_pages(&mut self, req: RequestId, tokens: usize) -> Result<Vec<PageId>, BufferError> {
        let needed = self.pages_needed(req, tokens);
        if needed > self.free.len() {
            return Err(BufferError::OutOfPages {
                req,
                needed,
                free: self.free.len(),
            });
        }
        let mut new_pages = Vec::with_capacity(needed);
        for _ in 0..needed {
            let page = self.free.pop_first().expect("checked above");
            self.owner[page as usize] = Some(req);
            self.log(PageEventKind::Alloc, req, page);
            new_pages.push(page);
        }
        let st = self.requests.entry(req).or_default();
        st.reserved += tokens;
        st.pages.extend(new_pages.iter().copied());
        Ok(new_pages)
    }

    fn log(&mut self, kind: PageEventKind, request: RequestId, page: PageId) {
        self.events.push(PageEvent {
            seq: self.seq,
            kind,
            request,
            page,
        });
        self.seq += 1;
    }

    fn release_page(&mut self, req: RequestId, page: PageId) {
        debug_assert_eq!(self.owner[page as usize], Some(req));
        self.owner[page as usize] = None;
        let fresh = self.free.insert(page);
        debug_assert!(fresh, "page {page} freed twice");
        self.log(PageEventKind::Free, req, page);
    }

    /// Index for writing `tokens` more tokens to each listed request.
    pub fn write_index(&self, batch: &[(RequestId, usize)]) -> Result<RaggedIndex, BufferError> {
        self.build_index(batch, |s| s.written)
    }

    /// Index for consuming `tokens` more tokens from each listed request.
    pub fn read_index(&self, batch: &[(RequestId, usize)]) -> Result<RaggedIndex, BufferError> {
        self.build_index(batch, |s| s.consumed)
    }

    fn build_index(
        &self,
        batch: &[(RequestId, usize)],
        cursor: impl Fn(&RequestState) -> usize,
    ) -> Result<RaggedIndex, BufferError> {
        let mut idx = RaggedIndex {
            requests: Vec::with_capacity(batch.len()),
            pv_indptr: Vec::with_capacity(batch.len()),
            pv_page_indices: Vec::new(),
            pv_page_indptr: vec![0],
            pv_cu_page_len: Vec::with_capacity(batch.len()),
            page_size: self.page_size,
        };
        let mut offset = 0;
        for &(req, count) in batch {
            let st = self.requests.get(&req).ok_or(BufferError::UnknownRequest(req))?;
            let cu = cursor(st);
            let end = cu + count;
            let cap = st.capacity(self.page_size);
            if end > cap {
                return Err(BufferError::CapacityError {
                    req,
                    end_exclusive: end,
                    capacity: cap,
                });
            }
            idx.requests.push(req);
            idx.pv_indptr.push(IndptrEntry {
                start: offset,
                end: offset + count,
                count,
            });
            idx.pv_page_indices.extend(st.pages_for(cu..end, self.page_size));
            idx.pv_page_indptr.push(idx.pv_page_indices.len());
            idx.pv_cu_page_len.push(cu);
            offset += count;
        }
        Ok(idx)
    }

    fn check_owned(&self, req: RequestId, pages: &[PageId]) -> Result<(), BufferError> {
        for &page in pages {
            if self.owner(page) != Some(req) {
                return Err(BufferError::UseAfterFree { req, page });
            }
        }
        Ok(())
    }

    /// Word offset of lane 0 for the `k`-th token addressed by `pages`
    /// starting at page-local offset `n`.
    fn slot(&self, pages: &[PageId], n: usize, k: usize) -> usize {
        let linear = n + k;
        let page = pages[linear / self.page_size] as usize;
        (page * self.page_size + linear % self.page_size) * self.lanes
    }

    /// Stores `span` through `idx`; the span must start exactly where the
    /// request's written prefix ends.
    pub fn write_chunk(&mut self, span: &TokenSpan, idx: &RaggedIndex) -> Result<(), BufferError> {
        let req = span.request;
        if span.lanes != self.lanes || !span.payload.len().is_multiple_of(self.lanes) {
            return Err(BufferError::IndexMismatch(format!(
                "span has {} lanes / {} words, buffer has {} lanes",
                span.lanes,
                span.payload.len(),
                self.lanes
            )));
        }
        let i = idx.position(req).ok_or(BufferError::NotInIndex(req))?;
        let st = self.requests.get(&req).ok_or(BufferError::UnknownRequest(req))?;
        let cu = idx.pv_cu_page_len[i];
        if span.start != cu || cu != st.written {
            return Err(BufferError::GapError {
                req,
                start: span.start,
                expected: st.written,
            });
        }
        let count = span.len();
        if count != idx.pv_indptr[i].count {
            return Err(BufferError::IndexMismatch(format!(
                "span carries {count} tokens, index says {}",
                idx.pv_indptr[i].count
            )));
        }
        let cap = st.capacity(self.page_size);
        if cu + count > cap {
            return Err(BufferError::CapacityError {
                req,
                end_exclusive: cu + count,
                capacity: cap,
            });
        }
        let pages = idx.pages(i);
        self.check_owned(req, pages)?;
        let n = cu % self.page_size;
        if count > 0 && pages.len() * self.page_size < n + count {
            return Err(BufferError::IndexMismatch("index pages cannot hold the span".into()));
        }
        let top = pages
            .iter()
            .copied()
            .max()
            .map_or(0, |p| (p as usize + 1) * self.page_size * self.lanes);
        if self.storage.len() < top {
            self.storage.resize(top, 0);
        }
        for k in 0..count {
            let at = self.slot(pages, n, k);
            let src = &span.payload[k * self.lanes..(k + 1) * self.lanes];
            self.storage[at..at + self.lanes].copy_from_slice(src);
        }
        self.requests.get_mut(&req).expect("checked").written += count;
        Ok(())
    }

    /// Consumes `range` of `req` (which must continue the consumed prefix)
    /// and frees every page whose last token is now consumed.
    pub fn read_chunk(
        &mut self,
        req: RequestId,
        range: Range<usize>,
        idx: &RaggedIndex,
    ) -> Result<(TokenSpan, Vec<PageId>), BufferError> {
        let empty = TokenSpan::new(req, range.start, self.lanes, Vec::new());
        if range.is_empty() {
            return Ok((empty, Vec::new()));
        }
        let st = self.requests.get(&req).ok_or(BufferError::UnknownRequest(req))?;
        let i = idx.position(req).ok_or(BufferError::NotInIndex(req))?;
        let pages = idx.pages(i);
        // a stale index pointing at recycled pages is a hard fault
        self.check_owned(req, pages)?;
        if range.start != st.consumed || idx.pv_cu_page_len[i] != st.consumed {
            return Err(BufferError::OutOfOrderRead {
                req,
                start: range.start,
                consumed: st.consumed,
            });
        }
        if range.end > st.written {
            return Err(BufferError::UnwrittenRange {
                req,
                start: range.start,
                end: range.end,
                written: st.written,
            });
        }
        let count = range.len();
        if count != idx.pv_indptr[i].count {
            return Err(BufferError::IndexMismatch(format!(
                "read of {count} tokens, index says {}",
                idx.pv_indptr[i].count
            )));
        }
        let n = range.start % self.page_size;
        let mut payload = Vec::with_capacity(count * self.lanes);
        for k in 0..count {
            let at = self.slot(pages, n, k);
            payload.extend_from_slice(&self.storage[at..at + self.lanes]);
        }
        let st = self.requests.get_mut(&req).expect("checked");
        st.consumed = range.end;
        let mut freed = Vec::new();
        while (st.freed_pages + 1) * self.page_size <= st.consumed {
            let Some(page) = st.pages.pop_front() else { break };
            st.freed_pages += 1;
            freed.push(page);
        }
        for &page in &freed {
            self.release_page(req, page);
        }
        Ok((TokenSpan::new(req, range.start, self.lanes, payload), freed))
    }

    /// Builds a single-request index and writes `span`.
    pub fn write(&mut self, span: &TokenSpan) -> Result<(), BufferError> {
        let idx = self.write_index(&[(span.request, span.len())])?;
        self.write_chunk(span, &idx)
    }

    /// Builds a single-request index and consumes the next `tokens` tokens.
    pub fn read(&mut self, req: RequestId, tokens: usize) -> Result<(TokenSpan, Vec<PageId>), BufferError> {
        let start = self.consumed(req);
        if tokens == 0 {
            return Ok((TokenSpan::new(req, start, self.lanes, Vec::new()), Vec::new()));
        }
        let st = self.requests.get(&req).ok_or(BufferError::UnknownRequest(req))?;
        if start + tokens > st.written {
            return Err(BufferError::UnwrittenRange {
                req,
                start,
                end: start + tokens,
                written: st.written,
            });
        }
        let idx = self.read_index(&[(req, tokens)])?;
        self.read_chunk(req, start..start + tokens, &idx)
    }

    /// Drops a finished request, freeing any pages it still holds.
    pub fn release(&mut self, req: RequestId) -> Vec<PageId> {
        let Some(st) = self.requests.remove(&req) else {
            return Vec::new();
        };
        let pages: Vec<PageId> = st.pages.into_iter().collect();
        for &page in &pages {
            self.release_page(req, page);
        }
        pages
    }

    /// Page-table consistency: every page is free or owned exactly once.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = vec![false; self.total_pages];
        for (&req, st) in &self.requests {
            for &p in &st.pages {
                let p = p as usize;
                if seen[p] {
                    return Err(format!("page {p} owned twice"));
                }
                seen[p] = true;
                if self.owner[p] != Some(req) {
                    return Err(format!("page {p} owner table disagrees"));
                }
            }
            if st.consumed > st.written || st.written > st.capacity(self.page_size) {
                return Err(format!("request {req}: cursors out of order"));
            }
            if st.freed_pages * self.page_size > st.consumed {
                return Err(format!("request {req}: freed an unconsumed page"));
            }
            if (st.freed_pages + 1) * self.page_size <= st.consumed && !st.pages.is_empty() {
                return Err(format!("request {req}: fully consumed page still owned"));
            }
        }
        for &p in &self.free {
            if seen[p as usize] || self.owner[p as usize].is_some() {
                return Err(format!("page {p} both free and owned"));
            }
        }
        let owned = seen.iter().filter(|&&s| s).count();
        if owned + self.free.len() != self.total_pages {
            return Err("owned + free != total".into());
        }
        Ok(())
    }
}

/// One producer's lane of a logical write.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardChunk {
    pub write_id: u64,
    pub producer: usize,
    pub request: RequestId,
    pub start: usize,
    /// One word per token for this producer's lane.
    pub payload: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commit {
    pub write_id: u64,
    pub request: RequestId,
    pub tokens: Range<usize>,
}

#[derive(Debug, Clone)]
struct PendingWrite {
    write_id: u64,
    request: RequestId,
    start: usize,
    tokens: usize,
    first_seen: f64,
    chunks: Vec<Option<Vec<u64>>>,
}

/// Serializes lane chunks from `world` producers into whole writes.
///
/// Writes commit one at a time in the order their first chunk arrived; a
/// write commits only once every producer has delivered its chunk.
#[derive(Debug, Clone)]
pub struct CollectiveWriteQueue {
    world: usize,
    timeout: f64,
    pending: VecDeque<PendingWrite>,
    committed: Vec<Commit>,
}

impl CollectiveWriteQueue {
    pub fn new(world: usize, timeout: f64) -> Self {
        CollectiveWriteQueue {
            world,
            timeout,
            pending: VecDeque::new(),
            committed: Vec::new(),
        }
    }

    pub fn committed(&self) -> &[Commit] {
        &self.committed
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn enqueue(&mut self, chunk: ShardChunk, now: f64) -> Result<(), QueueError> {
        let write_id = chunk.write_id;
        if chunk.producer >= self.world {
            return Err(QueueError::BadProducer {
                write_id,
                producer: chunk.producer,
            });
        }
        let slot = match self.pending.iter_mut().find(|p| p.write_id == write_id) {
            Some(p) => {
                if p.request != chunk.request || p.start != chunk.start || p.tokens != chunk.payload.len() {
                    return Err(QueueError::InconsistentChunk { write_id });
                }
                p
            }
            None => {
                self.pending.push_back(PendingWrite {
                    write_id,
                    request: chunk.request,
                    start: chunk.start,
                    tokens: chunk.payload.len(),
                    first_seen: now,
                    chunks: vec![None; self.world],
                });
                self.pending.back_mut().expect("just pushed")
            }
        };
        if slot.chunks[chunk.producer].is_some() {
            return Err(QueueError::BadProducer {
                write_id,
                producer: chunk.producer,
            });
        }
        slot.chunks[chunk.producer] = Some(chunk.payload);
        Ok(())
    }

    /// Commits complete writes from the head of the queue into `buf`.
    ///
    /// Stops at the first incomplete write unless it has waited longer than
    /// the timeout, in which case it is dropped with nothing committed and
    /// reported as `PartialSubmission`.
    pub fn drain(&mut self, buf: &mut PagedBuffer, now: f64) -> Vec<Result<Commit, QueueError>> {
        let mut out = Vec::new();
        while let Some(head) = self.pending.front() {
            let missing: Vec<usize> = (0..self.world).filter(|&p| head.chunks[p].is_none()).collect();
            if !missing.is_empty() {
                if now - head.first_seen >= self.timeout {
                    let head = self.pending.pop_front().expect("non-empty");
                    out.push(Err(QueueError::PartialSubmission {
                        write_id: head.write_id,
                        missing,
                    }));
                    continue;
                }
                break;
            }
            let head = self.pending.pop_front().expect("non-empty");
            let mut payload = Vec::with_capacity(head.tokens * self.world);
            for t in 0..head.tokens {
                for lane in &head.chunks {
                    payload.push(lane.as_ref().expect("complete")[t]);
                }
            }
            let span = TokenSpan::new(head.request, head.start, self.world, payload);
            match buf.write(&span) {
                Ok(()) => {
                    let c = Commit {
                        write_id: head.write_id,
                        request: head.request,
                        tokens: span.range(),
                    };
                    self.committed.push(c.clone());
                    out.push(Ok(c));
                }
                Err(e) => out.push(Err(e.into())),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(req: RequestId, start: usize, n: usize) -> TokenSpan {
        TokenSpan::new(
            req,
            start,
            1,
            (start..start + n).map(|t| (req << 32) | t as u64).collect(),
        )
    }

    #[test]
    fn zero_tokens_allocates_nothing() {
        let mut b = PagedBuffer::new(128, 4, 1).unwrap();
        assert!(b.alloc_pages(1, 0).unwrap().is_empty());
        assert_eq!(b.free_pages(), 4);
    }

    #[test]
    fn three_hundred_tokens_take_three_pages() {
        let mut b = PagedBuffer::new(128, 8, 1).unwrap();
        assert_eq!(b.alloc_pages(1, 300).unwrap().len(), 3);
        // cumulative: 300 + 84 still fits in 3 pages
        assert!(b.alloc_pages(1, 84).unwrap().is_empty());
        assert_eq!(b.alloc_pages(1, 1).unwrap().len(), 1);
    }

    #[test]
    fn out_of_pages_is_atomic() {
        let mut b = PagedBuffer::new(128, 2, 1).unwrap();
        let err = b.alloc_pages(1, 300).unwrap_err();
        assert!(matches!(err, BufferError::OutOfPages { needed: 3, free: 2, .. }));
        assert_eq!(b.free_pages(), 2);
        assert_eq!(b.reserved(1), 0);
    }

    #[test]
    fn full_page_write_then_next_page() {
        let mut b = PagedBuffer::new(128, 4, 1).unwrap();
        b.alloc_pages(1, 256).unwrap();
        let idx = b.write_index(&[(1, 128)]).unwrap();
        assert_eq!(idx.pages(0), &[0]);
        b.write_chunk(&span(1, 0, 128), &idx).unwrap();
        let idx = b.write_index(&[(1, 10)]).unwrap();
        assert_eq!(idx.pages(0), &[1]);
        assert_eq!(idx.pv_cu_page_len[0] % 128, 0);
    }

    #[test]
    fn straddling_write_splits_across_pages() {
        let mut b = PagedBuffer::new(128, 4, 1).unwrap();
        b.alloc_pages(1, 156).unwrap();
        b.write(&span(1, 0, 100)).unwrap();
        let idx = b.write_index(&[(1, 56)]).unwrap();
        assert_eq!(idx.pv_cu_page_len, vec![100]);
        assert_eq!(idx.pages(0), &[0, 1]);
        b.write_chunk(&span(1, 100, 56), &idx).unwrap();
        // linear token 127 is the last slot of page 0, 128 the first of page 1
        assert_eq!(b.storage[127], (1 << 32) | 127);
        assert_eq!(b.storage[128], (1 << 32) | 128);
        assert_eq!(b.storage[128 + 27], (1 << 32) | 155);
    }

    #[test]
    fn gap_is_rejected() {
        let mut b = PagedBuffer::new(128, 4, 1).unwrap();
        b.alloc_pages(1, 200).unwrap();
        b.write(&span(1, 0, 10)).unwrap();
        let idx = b.write_index(&[(1, 5)]).unwrap();
        let err = b.write_chunk(&span(1, 15, 5), &idx).unwrap_err();
        assert!(matches!(
            err,
            BufferError::GapError {
                start: 15,
                expected: 10,
                ..
            }
        ));
    }

    #[test]
    fn capacity_is_enforced() {
        let mut b = PagedBuffer::new(4, 4, 1).unwrap();
        b.alloc_pages(1, 4).unwrap();
        assert!(matches!(
            b.write(&span(1, 0, 5)),
            Err(BufferError::CapacityError { .. })
        ));
    }

    #[test]
    fn consumed_pages_freed_like_figure() {
        // requests 0 and 2 take pages 0..8; request 1 ends up owning 8 and 11
        let mut b = PagedBuffer::new(4, 16, 1).unwrap();
        b.alloc_pages(0, 32).unwrap();
        assert_eq!(b.alloc_pages(1, 4).unwrap(), vec![8]);
        assert_eq!(b.alloc_pages(2, 8).unwrap(), vec![9, 10]);
        assert_eq!(b.alloc_pages(1, 6).unwrap(), vec![11, 12]);
        b.write(&span(1, 0, 10)).unwrap();
        let (got, freed) = b.read(1, 9).unwrap();
        assert_eq!(got, span(1, 0, 9));
        assert_eq!(freed, vec![8, 11]);
        assert_eq!(b.request_pages(1), vec![12]);
        b.check_invariants().unwrap();
    }

    #[test]
    fn empty_read_frees_nothing() {
        let mut b = PagedBuffer::new(4, 4, 1).unwrap();
        b.alloc_pages(1, 4).unwrap();
        b.write(&span(1, 0, 4)).unwrap();
        let idx = b.read_index(&[(1, 0)]).unwrap();
        let (got, freed) = b.read_chunk(1, 0..0, &idx).unwrap();
        assert!(got.is_empty() && freed.is_empty());
    }

    #[test]
    fn stale_index_is_use_after_free() {
        let mut b = PagedBuffer::new(4, 4, 1).unwrap();
        b.alloc_pages(1, 8).unwrap();
        b.write(&span(1, 0, 8)).unwrap();
        let stale = b.read_index(&[(1, 4)]).unwrap();
        b.read(1, 4).unwrap();
        let err = b.read_chunk(1, 0..4, &stale).unwrap_err();
        assert_eq!(err, BufferError::UseAfterFree { req: 1, page: 0 });
    }

    #[test]
    fn reads_must_follow_prefix() {
        let mut b = PagedBuffer::new(4, 4, 1).unwrap();
        b.alloc_pages(1, 8).unwrap();
        b.write(&span(1, 0, 8)).unwrap();
        let idx = b.read_index(&[(1, 4)]).unwrap();
        assert!(matches!(
            b.read_chunk(1, 2..6, &idx),
            Err(BufferError::OutOfOrderRead { .. })
        ));
        assert!(matches!(b.read(1, 9), Err(BufferError::UnwrittenRange { .. })));
    }

    #[test]
    fn release_returns_everything() {
        let mut b = PagedBuffer::new(4, 8, 1).unwrap();
        b.alloc_pages(1, 10).unwrap();
        b.write(&span(1, 0, 6)).unwrap();
        b.read(1, 5).unwrap();
        b.release(1);
        assert_eq!(b.free_pages(), 8);
        b.check_invariants().unwrap();
    }

    #[test]
    fn batched_index_brackets_pages() {
        let mut b = PagedBuffer::new(4, 16, 1).unwrap();
        b.alloc_pages(1, 10).unwrap();
        b.alloc_pages(2, 3).unwrap();
        b.write(&span(1, 0, 3)).unwrap();
        let idx = b.write_index(&[(1, 7), (2, 3)]).unwrap();
        idx.check().unwrap();
        assert_eq!(idx.pv_page_indptr, vec![0, 3, 4]);
        assert_eq!(
            idx.pv_indptr[1],
            IndptrEntry {
                start: 7,
                end: 10,
                count: 3
            }
        );
        b.write_chunk(&span(1, 3, 7), &idx).unwrap();
        b.write_chunk(&span(2, 0, 3), &idx).unwrap();
    }

    fn chunk(write_id: u64, producer: usize, req: RequestId, start: usize, n: usize) -> ShardChunk {
        ShardChunk {
            write_id,
            producer,
            request: req,
            start,
            payload: (0..n)
                .map(|t| (write_id << 40) | ((producer as u64) << 20) | t as u64)
                .collect(),
        }
    }

    #[test]
    fn interleaved_collective_writes_commit_in_first_chunk_order() {
        let mut b = PagedBuffer::new(4, 8, 4).unwrap();
        b.alloc_pages(1, 6).unwrap();
        b.alloc_pages(2, 5).unwrap();
        let mut q = CollectiveWriteQueue::new(4, 1.0);
        for p in 0..4 {
            q.enqueue(chunk(7, p, 2, 0, 5), 0.0).unwrap();
            q.enqueue(chunk(3, p, 1, 0, 6), 0.0).unwrap();
        }
        let out: Vec<u64> = q.drain(&mut b, 0.0).into_iter().map(|r| r.unwrap().write_id).collect();
        assert_eq!(out, vec![7, 3]);
        let (s, _) = b.read(2, 5).unwrap();
        assert_eq!(s.payload[1], chunk(7, 1, 2, 0, 5).payload[0]);
    }

    #[test]
    fn missing_producer_times_out_with_nothing_committed() {
        let mut b = PagedBuffer::new(4, 8, 4).unwrap();
        b.alloc_pages(1, 4).unwrap();
        let mut q = CollectiveWriteQueue::new(4, 1.0);
        for p in [0, 1, 3] {
            q.enqueue(chunk(1, p, 1, 0, 4), 0.0).unwrap();
        }
        assert!(q.drain(&mut b, 0.5).is_empty());
        let out = q.drain(&mut b, 1.0);
        assert_eq!(
            out,
            vec![Err(QueueError::PartialSubmission {
                write_id: 1,
                missing: vec![2]
            })]
        );
        assert_eq!(b.written(1), 0);
    }

    #[test]
    fn duplicate_producer_rejected() {
        let mut q = CollectiveWriteQueue::new(2, 1.0);
        q.enqueue(chunk(1, 0, 1, 0, 4), 0.0).unwrap();
        assert!(q.enqueue(chunk(1, 0, 1, 0, 4), 0.0).is_err());
        assert!(q.enqueue(chunk(1, 5, 1, 0, 4), 0.0).is_err());
    }

    #[test]
    fn event_log_csv() {
        let mut b = PagedBuffer::new(4, 2, 1).unwrap();
        b.alloc_pages(9, 4).unwrap();
        b.release(9);
        assert_eq!(b.events_csv(), "seq,event,request,page\n0,alloc,9,0\n1,free,9,0\n");
    }
}
