//! Line-by-line interpreter of the encode/prefill orchestration loop, kept
//! deliberately naive: page pools are plain counters and every list is
//! rescanned each iteration.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use vidserve_core::orchestrator::{EpScheduler, Modality, Request, SchedulerConfig};

#[derive(Debug, Clone)]
pub struct ScenarioReq {
    pub id: u64,
    pub arrive_iter: usize,
    /// Iteration at which visual preprocessing ends; None for text.
    pub ready_iter: Option<usize>,
    pub text: usize,
    pub output: usize,
    pub units: usize,
    pub unit_patch: usize,
    pub unit_visual: usize,
    /// Iterations between prefill completion and KV release.
    pub release_delay: usize,
}

impl ScenarioReq {
    fn multimodal(&self) -> bool {
        self.ready_iter.is_some()
    }
    fn visual(&self) -> usize {
        if self.multimodal() {
            self.units * self.unit_visual
        } else {
            0
        }
    }
    fn patch(&self) -> usize {
        if self.multimodal() {
            self.units * self.unit_patch
        } else {
            0
        }
    }
    fn prompt(&self) -> usize {
        self.visual() + self.text
    }

    pub fn request(&self) -> Request {
        if self.multimodal() {
            Request::multimodal(
                self.id,
                self.arrive_iter as f64,
                Modality::Image { images: self.units },
                self.units,
                self.unit_patch,
                self.unit_visual,
                self.text,
                self.output,
            )
        } else {
            Request::text(self.id, self.arrive_iter as f64, self.text, self.output)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: SchedulerConfig,
    pub iterations: usize,
    pub reqs: Vec<ScenarioReq>,
}

/// `(E, B)` of one iteration: encode ids and `(request, start, tokens)`
/// prefill chunks.
pub type Step = (Vec<u64>, Vec<(u64, usize, usize)>);

pub fn random_scenario(rng: &mut impl Rng) -> Scenario {
    let n = rng.gen_range(1..=5);
    let mut arrive = 0;
    let reqs = (0..n as u64)
        .map(|id| {
            arrive += rng.gen_range(0..=3);
            let mm = rng.gen_bool(0.7);
            let unit_visual = rng.gen_range(1..=10);
            ScenarioReq {
                id,
                arrive_iter: arrive,
                ready_iter: mm.then(|| arrive + rng.gen_range(0..=4)),
                text: if mm {
                    rng.gen_range(0..=40)
                } else {
                    rng.gen_range(1..=60)
                },
                output: rng.gen_range(1..=12),
                units: rng.gen_range(1..=4),
                // merging never grows the token count
                unit_patch: rng.gen_range(unit_visual..=24),
                unit_visual,
                release_delay: rng.gen_range(0..=4),
            }
        })
        .collect();
    let cfg = SchedulerConfig {
        tau: rng.gen_range(4..=48),
        alpha: rng.gen_range(8..=80),
        t_max: None,
        tbt_slo: 0.1,
        kv_pages: rng.gen_range(4..=24),
        kv_page_size: rng.gen_range(2..=8),
        visual_pages: rng.gen_range(2..=12),
        visual_page_size: rng.gen_range(2..=8),
    };
    Scenario {
        cfg,
        iterations: rng.gen_range(5..=30),
        reqs,
    }
}

pub fn run_reference(sc: &Scenario) -> Vec<Step> {
    let tau = sc.cfg.tau;
    let alpha = sc.cfg.alpha;
    let pages = |tokens: usize, size: usize| tokens.div_ceil(size);
    let by_id: BTreeMap<u64, &ScenarioReq> = sc.reqs.iter().map(|r| (r.id, r)).collect();

    let mut waiting: Vec<u64> = Vec::new();
    let mut b: Vec<u64> = Vec::new();
    let mut prefilled: BTreeMap<u64, usize> = BTreeMap::new();
    let mut encoded: BTreeSet<u64> = BTreeSet::new();
    let mut ready: BTreeSet<u64> = BTreeSet::new();
    let mut vis_held: BTreeMap<u64, usize> = BTreeMap::new();
    let mut kv_held: BTreeMap<u64, usize> = BTreeMap::new();
    let mut vis_free = sc.cfg.visual_pages;
    let mut kv_free = sc.cfg.kv_pages;
    let mut release_at: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    let mut out = Vec::new();

    for it in 0..sc.iterations {
        for id in release_at.remove(&it).unwrap_or_default() {
            kv_free += kv_held.remove(&id).unwrap_or(0);
        }
        for r in &sc.reqs {
            if r.arrive_iter == it {
                waiting.push(r.id);
                prefilled.insert(r.id, 0);
            }
        }
        for r in &sc.reqs {
            if r.ready_iter.is_some_and(|k| k <= it) && r.arrive_iter <= it {
                ready.insert(r.id);
            }
        }

        // lines 4-6
        let mut n_p = 0usize;
        let mut n_e = 0usize;
        let mut e: Vec<u64> = Vec::new();
        let mut chunks: Vec<(u64, usize, usize)> = Vec::new();

        // lines 8-11: running requests first
        for &r in &b {
            let req = by_id[&r];
            let done = prefilled[&r];
            if done < req.prompt() {
                let c = (req.prompt() - done).min(tau - n_p);
                if c > 0 {
                    chunks.push((r, done, c));
                    n_p += c;
                }
            }
        }

        // lines 14-22: pending encodes in arrival order
        for &r in &waiting {
            let req = by_id[&r];
            if !req.multimodal() || encoded.contains(&r) {
                continue;
            }
            if !ready.contains(&r) {
                continue;
            }
            let need = pages(req.visual(), sc.cfg.visual_page_size);
            let allocated = vis_held.contains_key(&r);
            if (allocated || vis_free >= need) && n_e < alpha {
                if !allocated {
                    vis_free -= need;
                    vis_held.insert(r, need);
                }
                n_e += req.patch();
                e.push(r);
            } else {
                break;
            }
        }

        // lines 12-13, 23-28: one new request into the prefill batch
        let r_new = waiting.iter().copied().find(|r| {
            let req = by_id[r];
            !req.multimodal() || encoded.contains(r) || e.contains(r)
        });
        if let Some(r) = r_new {
            let req = by_id[&r];
            let mut scheduled = 0usize;
            loop {
                let need = pages(req.prompt() + req.output, sc.cfg.kv_page_size);
                let allocated = kv_held.contains_key(&r);
                if !((allocated || kv_free >= need) && n_p < tau) {
                    break;
                }
                if !allocated {
                    kv_free -= need;
                    kv_held.insert(r, need);
                }
                let c = (req.prompt() - scheduled).min(tau - n_p);
                if c > 0 {
                    chunks.push((r, scheduled, c));
                    n_p += c;
                    scheduled += c;
                    if !b.contains(&r) {
                        b.push(r);
                        waiting.retain(|&w| w != r);
                    }
                } else {
                    break;
                }
            }
        }
        assert!(n_p <= tau);

        // lines 29-31
        for &r in &e {
            encoded.insert(r);
        }
        for &(r, _, c) in &chunks {
            let p = prefilled.get_mut(&r).unwrap();
            let req = by_id[&r];
            // visual tokens lead the prompt; a page goes back once its last
            // token has been read
            let ps = sc.cfg.visual_page_size;
            let freed = req.visual().min(*p + c) / ps - req.visual().min(*p) / ps;
            if let Some(h) = vis_held.get_mut(&r) {
                *h -= freed;
                vis_free += freed;
            }
            *p += c;
            if *p == req.prompt() {
                vis_free += vis_held.remove(&r).unwrap_or(0);
                b.retain(|&x| x != r);
                release_at.entry(it + 1 + req.release_delay).or_default().push(r);
            }
        }
        out.push((e, chunks));
    }
    out
}

/// Same driver around the library scheduler.
pub fn run_impl(sc: &Scenario) -> Vec<Step> {
    let mut s = EpScheduler::new(sc.cfg.clone()).expect("valid scenario config");
    let mut release_at: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    let mut out = Vec::new();
    for it in 0..sc.iterations {
        for id in release_at.remove(&it).unwrap_or_default() {
            s.release(id);
        }
        for r in &sc.reqs {
            if r.arrive_iter == it {
                s.add_request(r.request()).expect("valid request");
            }
        }
        for r in &sc.reqs {
            if r.ready_iter.is_some_and(|k| k <= it) && r.arrive_iter <= it {
                s.mark_visual_ready(r.id);
            }
        }
        let plan = s.schedule_iteration();
        assert!(plan.n_p <= sc.cfg.tau, "n_p {} > tau {}", plan.n_p, sc.cfg.tau);
        s.finish_encode(&plan);
        for id in s.finish_prefill(&plan) {
            let delay = sc.reqs.iter().find(|r| r.id == id).unwrap().release_delay;
            release_at.entry(it + 1 + delay).or_default().push(id);
        }
        out.push((
            plan.encode.clone(),
            plan.prefill.iter().map(|c| (c.request, c.start, c.tokens)).collect(),
        ));
    }
    out
}
