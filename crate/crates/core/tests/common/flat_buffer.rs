//! Reference model of the paged embedding buffer: one growable vector per
//! request and a free-page counter. No page table, no indices.

use std::collections::BTreeMap;

#[derive(Debug, Default, Clone)]
pub struct FlatReq {
    pub data: Vec<u64>,
    pub consumed: usize,
    pub reserved: usize,
    /// Pages handed out so far, including ones already recycled.
    pub pages_ever: usize,
}

#[derive(Debug, Clone)]
pub struct FlatBuffer {
    pub page_size: usize,
    pub total_pages: usize,
    pub lanes: usize,
    pub reqs: BTreeMap<u64, FlatReq>,
}

impl FlatBuffer {
    pub fn new(page_size: usize, total_pages: usize, lanes: usize) -> Self {
        FlatBuffer {
            page_size,
            total_pages,
            lanes,
            reqs: BTreeMap::new(),
        }
    }

    fn live_pages(&self, r: &FlatReq) -> usize {
        r.pages_ever - r.consumed / self.page_size
    }

    pub fn free_pages(&self) -> usize {
        self.total_pages - self.reqs.values().map(|r| self.live_pages(r)).sum::<usize>()
    }

    pub fn tokens(&self, req: u64) -> usize {
        self.reqs.get(&req).map_or(0, |r| r.data.len() / self.lanes)
    }

    /// Returns false when the pool is too small (nothing changes).
    pub fn alloc(&mut self, req: u64, tokens: usize) -> bool {
        let (reserved, ever) = self.reqs.get(&req).map_or((0, 0), |r| (r.reserved, r.pages_ever));
        let need = (reserved + tokens).div_ceil(self.page_size).saturating_sub(ever);
        if need > self.free_pages() {
            return false;
        }
        let r = self.reqs.entry(req).or_default();
        r.reserved += tokens;
        r.pages_ever += need;
        true
    }

    /// Appends `payload`; false if it would exceed the page capacity or the
    /// request is unknown.
    pub fn write(&mut self, req: u64, payload: &[u64]) -> bool {
        let ps = self.page_size;
        let lanes = self.lanes;
        let Some(r) = self.reqs.get_mut(&req) else {
            return false;
        };
        if r.data.len() / lanes + payload.len() / lanes > r.pages_ever * ps {
            return false;
        }
        r.data.extend_from_slice(payload);
        true
    }

    /// Consumes the next `n` tokens; None if fewer are written.
    pub fn read(&mut self, req: u64, n: usize) -> Option<Vec<u64>> {
        let lanes = self.lanes;
        if n == 0 {
            return Some(Vec::new());
        }
        let r = self.reqs.get_mut(&req)?;
        if r.consumed + n > r.data.len() / lanes {
            return None;
        }
        let out = r.data[r.consumed * lanes..(r.consumed + n) * lanes].to_vec();
        r.consumed += n;
        Some(out)
    }

    pub fn release(&mut self, req: u64) {
        self.reqs.remove(&req);
    }
}
