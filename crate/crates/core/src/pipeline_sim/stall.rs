//! Generation stalls: stretches where the whole system emits no token while
//! some request is waiting for one.

use serde::{Deserialize, Serialize};

use super::metrics::MetricsLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StallCause {
    /// A request already generating was frozen across the gap.
    EncodeBlock,
    /// Only requests still waiting for their first token were in flight.
    FirstTokenStarvation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stall {
    pub start: f64,
    pub end: f64,
    pub cause: StallCause,
}

impl Stall {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StallReport {
    pub median_tbt: f64,
    pub threshold: f64,
    pub stalls: Vec<Stall>,
}

impl StallReport {
    pub fn total(&self) -> f64 {
        self.stalls.iter().map(Stall::duration).sum()
    }

    pub fn count(&self, cause: StallCause) -> usize {
        self.stalls.iter().filter(|s| s.cause == cause).count()
    }
}

/// Gaps between consecutive emitted tokens (any request) longer than `k`
/// times the median pooled TBT. Gaps during which no request was in flight
/// are idle time, not stalls.
pub fn stall_report(m: &MetricsLog, k: f64) -> StallReport {
    let mut all: Vec<f64> = m
        .requests
        .iter()
        .flat_map(|r| r.times.token_times.iter().copied())
        .collect();
    if all.is_empty() || m.tbt.count == 0 {
        return StallReport::default();
    }
    all.sort_by(f64::total_cmp);
    all.dedup();
    let median = m.tbt.p50;
    let threshold = k * median;
    let mut stalls = Vec::new();
    for w in all.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a <= threshold {
            continue;
        }
        let mut waiting = false;
        let mut frozen = false;
        for r in &m.requests {
            let tt = &r.times.token_times;
            let done_after_gap = !r.completed || tt.last().is_some_and(|&l| l >= b);
            if r.arrival > a || !done_after_gap {
                continue;
            }
            waiting = true;
            if tt.first().is_some_and(|&f| f <= a) {
                frozen = true;
                break;
            }
        }
        if waiting {
            let cause = if frozen {
                StallCause::EncodeBlock
            } else {
                StallCause::FirstTokenStarvation
            };
            stalls.push(Stall {
                start: a,
                end: b,
                cause,
            });
        }
    }
    StallReport {
        median_tbt: median,
        threshold,
        stalls,
    }
}
