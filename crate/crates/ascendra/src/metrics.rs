//! Post-processing of finished requests into the reported statistics:
//! goodput, nearest-rank percentiles, throughput, and scheduling delay.
//!
//! A request counts toward goodput only when it completed, met its TTFT
//! target, and kept its mean inter-token latency within the TBT target.
//! Dropped requests stay in the denominator: a shed request is a failed
//! request. Everything here is a pure function of the outcome list, so any
//! summary can be recomputed offline (for instance against rescaled SLOs).

use crate::scheduler::InstanceRole;
use crate::workload::{Request, RequestState, SloSpec};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("metric undefined on empty input: {0}")]
    EmptyInput(&'static str),
    #[error("percentile {0} outside [0, 100]")]
    BadPercentile(f64),
}

/// Flattened per-request results, the unit metrics are computed from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestOutcome {
    pub id: u64,
    pub arrival_time: f64,
    /// First-token latency; present iff a first token was emitted.
    pub ttft: Option<f64>,
    /// Mean inter-token latency; `None` for single-token responses, which
    /// satisfy any TBT target by definition.
    pub mean_tbt: Option<f64>,
    pub completed: bool,
    pub dropped: bool,
    /// Wait from arrival until prefill first started.
    pub scheduling_delay: Option<f64>,
    /// Wait inside the serving instance's queue: from entering that queue
    /// (arrival, or offload hand-off) until prefill first started. Equal to
    /// `scheduling_delay` for requests that were never transferred.
    pub instance_queue_delay: Option<f64>,
    /// Whether the request finished on an HP instance (ticketed or
    /// offloaded) rather than its original LP home.
    pub served_by_hp: bool,
    pub offloaded: bool,
    pub output_tokens: u64,
    pub preemptions: u32,
}

/// Build one outcome from a finished request. `roles` maps instance index
/// to its role for the LP/HP path split.
pub fn outcome(req: &Request, roles: &[InstanceRole]) -> RequestOutcome {
    let completed = req.state == RequestState::Completed;
    let ttft = req.first_token_time.map(|t| t - req.arrival_time);
    let mean_tbt = match (req.first_token_time, req.completion_time) {
        (Some(first), Some(done)) if req.output_len() > 1 => {
            Some((done - first) / (req.output_len() - 1) as f64)
        }
        _ => None,
    };
    let served_by_hp = req
        .home_instance
        .map(|idx| roles.get(idx) == Some(&InstanceRole::Hp))
        .unwrap_or(false);
    RequestOutcome {
        id: req.id,
        arrival_time: req.arrival_time,
        ttft,
        mean_tbt,
        completed,
        dropped: req.state == RequestState::Dropped,
        scheduling_delay: req.prefill_start_time.map(|t| t - req.arrival_time),
        instance_queue_delay: req.prefill_start_time.map(|t| t - req.queue_entered_time),
        served_by_hp,
        offloaded: req.offloaded,
        output_tokens: if completed { req.tokens_decoded } else { 0 },
        preemptions: req.preemption_count,
    }
}

pub fn outcomes(finished: &[Request], roles: &[InstanceRole]) -> Vec<RequestOutcome> {
    let mut list: Vec<RequestOutcome> = finished.iter().map(|r| outcome(r, roles)).collect();
    list.sort_by_key(|o| o.id);
    list
}

/// Does this outcome meet both SLOs under the given (possibly rescaled)
/// targets?
pub fn meets_slo(outcome: &RequestOutcome, slo: &SloSpec) -> bool {
    if !outcome.completed {
        return false;
    }
    let ttft_ok = outcome.ttft.is_some_and(|t| t <= slo.scaled_ttft());
    let tbt_ok = outcome.mean_tbt.is_none_or(|t| t <= slo.scaled_tbt());
    ttft_ok && tbt_ok
}

/// Fraction of all outcomes (dropped included) meeting both SLOs.
pub fn goodput(outcomes: &[RequestOutcome], slo: &SloSpec) -> Result<f64, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::EmptyInput("goodput"));
    }
    let good = outcomes.iter().filter(|o| meets_slo(o, slo)).count();
    Ok(good as f64 / outcomes.len() as f64)
}

/// Nearest-rank percentile: the ceil(q/100 * n)-th order statistic, with
/// q = 0 mapping to the minimum.
pub fn percentile(values: &[f64], q: f64) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput("percentile"));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(MetricsError::BadPercentile(q));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((q / 100.0) * n as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

/// Measurement window: outcomes with `start <= arrival_time < end` count;
/// the span normalizes rate metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsWindow {
    pub start: f64,
    pub end: f64,
}

impl MetricsWindow {
    pub fn new(start: f64, end: f64) -> Self {
        assert!(end > start, "window must have positive span");
        MetricsWindow { start, end }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, arrival_time: f64) -> bool {
        arrival_time >= self.start && arrival_time < self.end
    }
}

/// Aggregate statistics over one run's outcomes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryStats {
    pub goodput: f64,
    pub throughput_tokens_per_s: f64,
    pub throughput_requests_per_s: f64,
    pub ttft_p50: Option<f64>,
    pub ttft_p90: Option<f64>,
    pub ttft_p99: Option<f64>,
    pub mean_ttft: Option<f64>,
    pub mean_tbt: Option<f64>,
    /// Mean in-queue delay of requests whose prefill ran on an LP home.
    pub scheduling_delay_lp: Option<f64>,
    /// Mean in-queue delay at the serving instance for requests handled by
    /// an HP (ticketed or offloaded); the offload wait on LP is excluded so
    /// the two columns compare per-instance queues.
    pub scheduling_delay_hp: Option<f64>,
    pub arrivals: u64,
    pub completed: u64,
    pub dropped: u64,
    /// Completed requests that missed at least one SLO.
    pub slo_violations: u64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in values {
        sum += v;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

/// Summarize the outcomes arriving inside the window.
pub fn summarize(
    outcomes: &[RequestOutcome],
    slo: &SloSpec,
    window: &MetricsWindow,
) -> Result<SummaryStats, MetricsError> {
    let windowed: Vec<&RequestOutcome> = outcomes.iter().filter(|o| window.contains(o.arrival_time)).collect();
    if windowed.is_empty() {
        return Err(MetricsError::EmptyInput("summarize"));
    }
    let goodput_count = windowed.iter().filter(|o| meets_slo(o, slo)).count();
    let completed = windowed.iter().filter(|o| o.completed).count() as u64;
    let dropped = windowed.iter().filter(|o| o.dropped).count() as u64;
    let total_tokens: u64 = windowed.iter().map(|o| o.output_tokens).sum();
    let ttfts: Vec<f64> = windowed.iter().filter_map(|o| o.ttft).collect();
    let pct = |q: f64| -> Option<f64> { percentile(&ttfts, q).ok() };

    Ok(SummaryStats {
        goodput: goodput_count as f64 / windowed.len() as f64,
        throughput_tokens_per_s: total_tokens as f64 / window.duration(),
        throughput_requests_per_s: completed as f64 / window.duration(),
        ttft_p50: pct(50.0),
        ttft_p90: pct(90.0),
        ttft_p99: pct(99.0),
        mean_ttft: mean(ttfts.iter().copied()),
        mean_tbt: mean(windowed.iter().filter_map(|o| o.mean_tbt)),
        scheduling_delay_lp: mean(
            windowed
                .iter()
                .filter(|o| !o.served_by_hp)
                .filter_map(|o| o.instance_queue_delay),
        ),
        scheduling_delay_hp: mean(
            windowed
                .iter()
                .filter(|o| o.served_by_hp)
                .filter_map(|o| o.instance_queue_delay),
        ),
        arrivals: windowed.len() as u64,
        completed,
        dropped,
        slo_violations: windowed.iter().filter(|o| o.completed && !meets_slo(o, slo)).count() as u64,
    })
}
