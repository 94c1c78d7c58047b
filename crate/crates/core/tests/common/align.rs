//! Brute-force search over rank boundary shifts for temporal-patch
//! alignment.

/// Cumulative target boundaries after the cheapest legal upward shift.
///
/// `counts` are per-rank target counts before alignment. Every boundary
/// `b` may move up by `0..=t` targets; a shifted boundary must land on a
/// multiple of `t` or swallow everything after it. Among all legal
/// combinations (boundaries non-decreasing) the one moving the fewest
/// targets in total wins. Returns the non-empty per-rank counts.
pub fn best_counts(counts: &[usize], t: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let mut bounds = Vec::new();
    let mut acc = 0;
    for &c in &counts[..counts.len().saturating_sub(1)] {
        acc += c;
        bounds.push(acc);
    }
    let k = bounds.len();
    let mut best: Option<(usize, Vec<usize>)> = None;
    let mut shift = vec![0usize; k];
    loop {
        let moved: Vec<usize> = bounds.iter().zip(&shift).map(|(b, s)| b + s).collect();
        let legal =
            moved.iter().all(|&m| m <= total && (m % t == 0 || m == total)) && moved.windows(2).all(|w| w[0] <= w[1]);
        if legal {
            let cost: usize = shift.iter().sum();
            if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                best = Some((cost, moved.clone()));
            }
        }
        // odometer over 0..=t per boundary
        let mut i = 0;
        while i < k {
            shift[i] += 1;
            if shift[i] <= t {
                break;
            }
            shift[i] = 0;
            i += 1;
        }
        if i == k {
            break;
        }
    }
    let cuts = best.expect("shifting every boundary to the end is legal").1;
    let mut out = Vec::new();
    let mut prev = 0;
    for c in cuts.into_iter().chain(std::iter::once(total)) {
        if c > prev {
            out.push(c - prev);
        }
        prev = c;
    }
    if out.is_empty() {
        out.push(0);
    }
    out
}
