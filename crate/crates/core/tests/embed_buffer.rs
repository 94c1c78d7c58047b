use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vidserve_core::embed_buffer::{CollectiveWriteQueue, PagedBuffer, ShardChunk, TokenSpan};

#[derive(Debug, Clone)]
enum Op {
    Alloc(u64, usize),
    Write(u64, usize),
    Read(u64, usize),
    Release(u64),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0u64..4, 0usize..24).prop_map(|(r, n)| Op::Alloc(r, n)),
        3 => (0u64..4, 0usize..12).prop_map(|(r, n)| Op::Write(r, n)),
        3 => (0u64..4, 0usize..10).prop_map(|(r, n)| Op::Read(r, n)),
        1 => (0u64..4).prop_map(Op::Release),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    /// Page ids move alloc -> free -> alloc without repeats, every fully
    /// read page is returned by the read that finished it, and nothing
    /// leaks.
    #[test]
    fn pages_free_once_and_eagerly(page_size in 1usize..8, total in 1usize..20, ops in prop::collection::vec(op(), 1..200)) {
        let mut buf = PagedBuffer::new(page_size, total, 1).unwrap();
        let mut live: BTreeSet<u32> = BTreeSet::new();
        let mut freed_by_read: BTreeMap<u64, usize> = BTreeMap::new();
        let mut word = 0u64;
        for op in &ops {
            match *op {
                Op::Alloc(r, n) => {
                    if let Ok(pages) = buf.alloc_pages(r, n) {
                        for p in pages {
                            prop_assert!(live.insert(p), "page {} handed out twice", p);
                        }
                    }
                }
                Op::Write(r, n) => {
                    let start = buf.written(r);
                    let payload = (0..n).map(|_| { word += 1; word }).collect();
                    let _ = buf.write(&TokenSpan::new(r, start, 1, payload));
                }
                Op::Read(r, n) => {
                    if let Ok((span, freed)) = buf.read(r, n) {
                        prop_assert_eq!(span.len(), n);
                        for p in freed {
                            prop_assert!(live.remove(&p), "page {} freed while free", p);
                            *freed_by_read.entry(r).or_default() += 1;
                        }
                        // every page whose last token was consumed is gone
                        prop_assert_eq!(freed_by_read.get(&r).copied().unwrap_or(0), buf.consumed(r) / page_size);
                    }
                }
                Op::Release(r) => {
                    for p in buf.release(r) {
                        prop_assert!(live.remove(&p), "page {} freed while free", p);
                    }
                    freed_by_read.remove(&r);
                }
            }
            prop_assert_eq!(buf.check_invariants(), Ok(()));
            prop_assert_eq!(buf.owned_pages(), live.len());
            prop_assert_eq!(buf.free_pages() + buf.owned_pages(), total);
        }
        for r in 0..4 {
            buf.release(r);
        }
        prop_assert_eq!(buf.free_pages(), total);
    }

    /// Lane chunks arriving in any order commit whole writes in first-seen
    /// order, and the committed tokens interleave the producers' lanes.
    #[test]
    fn write_queue_commits_in_first_seen_order(
        world in 1usize..4,
        lens in prop::collection::vec(1usize..6, 1..5),
        perm_seed in any::<u64>(),
    ) {
        let mut buf = PagedBuffer::new(4, 64, world).unwrap();
        let mut chunks = Vec::new();
        for (w, &len) in lens.iter().enumerate() {
            buf.alloc_pages(w as u64, len).unwrap();
            for p in 0..world {
                let payload = (0..len).map(|t| ((w * 100 + p) * 100 + t) as u64).collect();
                chunks.push(ShardChunk { write_id: w as u64, producer: p, request: w as u64, start: 0, payload });
            }
        }
        chunks.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let mut first_seen = Vec::new();
        let mut q = CollectiveWriteQueue::new(world, f64::INFINITY);
        for (k, c) in chunks.into_iter().enumerate() {
            if !first_seen.contains(&c.write_id) {
                first_seen.push(c.write_id);
            }
            q.enqueue(c, k as f64).unwrap();
            for res in q.drain(&mut buf, k as f64) {
                prop_assert!(res.is_ok());
            }
        }
        prop_assert_eq!(q.pending(), 0);
        let order: Vec<u64> = q.committed().iter().map(|c| c.write_id).collect();
        prop_assert_eq!(order, first_seen);
        for (w, &len) in lens.iter().enumerate() {
            let (span, _) = buf.read(w as u64, len).unwrap();
            let want: Vec<u64> = (0..len)
                .flat_map(|t| (0..world).map(move |p| ((w * 100 + p) * 100 + t) as u64))
                .collect();
            prop_assert_eq!(span.payload, want);
        }
    }
}
