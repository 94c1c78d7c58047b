//! Latency summaries, throughput and SLO attainment.

use serde::{Deserialize, Serialize};

use crate::embed_buffer::RequestId;
use crate::orchestrator::RequestTimes;

/// Nearest-rank percentile of an ascending slice; `p` in `(0, 100]`.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Summary::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let pct = |p| percentile(&s, p).expect("non-empty");
        Summary {
            count: s.len(),
            mean: s.iter().sum::<f64>() / s.len() as f64,
            p50: pct(50.0),
            p90: pct(90.0),
            p95: pct(95.0),
            p99: pct(99.0),
            max: s[s.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub id: RequestId,
    pub arrival: f64,
    pub completed: bool,
    pub ttft: Option<f64>,
    pub e2e: Option<f64>,
    /// This request's own P99 time between tokens.
    pub tbt_p99: Option<f64>,
    pub tokens: usize,
    pub output_tokens: usize,
    pub meets_slo: bool,
    pub times: RequestTimes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SloTargets {
    pub ttft: f64,
    pub tbt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub slo: SloTargets,
    pub requests: Vec<RequestRecord>,
    pub ttft: Summary,
    /// Pooled over every request's token gaps.
    pub tbt: Summary,
    pub e2e: Summary,
    pub completed: usize,
    pub in_flight: usize,
    /// From the first arrival to the last completion.
    pub span: f64,
    pub throughput_rps: f64,
    pub throughput_tps: f64,
    /// Requests meeting both the TTFT target and, for their own P99 TBT,
    /// the TBT target, over all requests.
    pub slo_attainment: f64,
}

impl MetricsLog {
    /// `outputs[i]` is the requested output length of `times[i]`.
    pub fn build(ids: &[RequestId], times: &[RequestTimes], outputs: &[usize], slo: SloTargets) -> Self {
        let mut requests = Vec::with_capacity(times.len());
        let mut ttfts = Vec::new();
        let mut tbts = Vec::new();
        let mut e2es = Vec::new();
        let mut tokens_total = 0usize;
        let mut first_arrival = f64::INFINITY;
        let mut last_done = f64::NEG_INFINITY;
        for ((&id, t), &output) in ids.iter().zip(times).zip(outputs) {
            first_arrival = first_arrival.min(t.arrival);
            let completed = t.token_times.len() == output;
            let ttft = t.ttft();
            let gaps = t.tbt();
            let mut sorted = gaps.clone();
            sorted.sort_by(f64::total_cmp);
            let tbt_p99 = percentile(&sorted, 99.0);
            let e2e = if completed {
                t.last_token().map(|l| l - t.arrival)
            } else {
                None
            };
            if let Some(x) = ttft {
                ttfts.push(x);
            }
            if let Some(x) = e2e {
                e2es.push(x);
                last_done = last_done.max(t.arrival + x);
            }
            tbts.extend(gaps);
            tokens_total += t.token_times.len();
            let meets_slo = completed && ttft.is_some_and(|x| x <= slo.ttft) && tbt_p99.is_none_or(|x| x <= slo.tbt);
            requests.push(RequestRecord {
                id,
                arrival: t.arrival,
                completed,
                ttft,
                e2e,
                tbt_p99,
                tokens: t.token_times.len(),
                output_tokens: output,
                meets_slo,
                times: t.clone(),
            });
        }
        let completed = requests.iter().filter(|r| r.completed).count();
        let span = if completed > 0 { last_done - first_arrival } else { 0.0 };
        let rate = |x: f64| if span > 0.0 { x / span } else { 0.0 };
        let met = requests.iter().filter(|r| r.meets_slo).count();
        MetricsLog {
            slo,
            ttft: Summary::of(&ttfts),
            tbt: Summary::of(&tbts),
            e2e: Summary::of(&e2es),
            completed,
            in_flight: requests.len() - completed,
            span,
            throughput_rps: rate(completed as f64),
            throughput_tps: rate(tokens_total as f64),
            slo_attainment: if requests.is_empty() {
                1.0
            } else {
                met as f64 / requests.len() as f64
            },
            requests,
        }
    }

    /// `request,index,time` for every emitted token.
    pub fn tokens_csv(&self) -> String {
        let mut out = String::from("request,index,time\n");
        for r in &self.requests {
            for (i, t) in r.times.token_times.iter().enumerate() {
                out.push_str(&format!("{},{},{:.9}\n", r.id, i, t));
            }
        }
        out
    }
}
