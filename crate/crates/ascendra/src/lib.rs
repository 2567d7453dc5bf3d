//! Batch-level discrete-event simulation of two-tier LLM serving.
//!
//! This crate models a serving fleet split into low-priority (LP) instances,
//! which maximize throughput by batching requests out of arrival order, and
//! high-priority (HP) instances, which run prefill-first to rescue requests
//! that are about to miss their time-to-first-token deadline. Batch latencies
//! come from an analytical FLOPs/memory-access model fed through a calibrated
//! roofline regression, so scheduling behavior can be studied on a laptop
//! without GPUs.
//!
//! The crate is organized around the flow of a simulated request:
//!
//! * [`workload`] generates request streams (trace-driven or synthetic
//!   lengths, Poisson arrivals, SLO assignment) and owns the request
//!   lifecycle type.
//! * [`cost_model`] counts FLOPs and bytes moved for prefill, decode, and
//!   hybrid batches of a transformer forward pass.
//! * [`latency_model`] maps those counts to predicted batch latency via a
//!   five-coefficient regression over roofline features.
//! * [`scheduler`] forms batches: value-function out-of-order selection with
//!   piggybacked decodes on LP, elastic prefill-first batching on HP, plus
//!   vLLM-like and Sarathi-like baselines behind the same interface.
//! * [`controller`] routes arrivals round-robin over the LP pool, honors
//!   HP idle tickets, and dispatches offloaded requests.
//! * [`engine`] advances simulated time batch by batch, deterministically.
//! * [`metrics`] turns finished requests into goodput, percentiles, and
//!   throughput summaries.
//! * [`config`] and [`cli`] load experiment descriptions and run sweeps.
//!
//! A narrative guide with runnable examples lives in the `book/` directory of
//! the repository; its code snippets are compiled as doc-tests by the
//! `ascendra-book` crate.

pub mod cli;
pub mod config;
pub mod controller;
pub mod cost_model;
pub mod engine;
pub mod latency_model;
pub mod metrics;
pub mod scheduler;
pub mod workload;

pub use config::{Overrides, SchedulerVariant, SimConfig};
pub use cost_model::{decode_cost, hybrid_cost, prefill_cost, BatchComposition, CostBreakdown, ModelArch, PrefillChunk};
pub use engine::{run, SimResult};
pub use latency_model::{fit, BatchRecord, HardwareCaps, LatencyModel};
pub use metrics::{goodput, percentile, summarize, MetricsWindow, RequestOutcome, SummaryStats};
pub use scheduler::{InstanceRole, InstanceState, ValuePolicy};
pub use workload::{Request, RequestState, SloSpec, TraceEntry};
