//! Deterministic discrete-event simulation at batch granularity.
//!
//! Simulated time advances through a (time, seq) ordered event heap:
//! arrivals enter instance queues, idle instances form batches, and each
//! batch completes as one atomic step charged with its predicted latency.
//! All requests in a batch finish together; a decode step's inter-token
//! sample equals the full batch latency. One run is one single-threaded
//! event loop, bit-reproducible for a fixed config and seed; parallelism
//! only exists across independent runs.
//!
//! Token accounting: completing a prefill emits the first response token
//! (setting TTFT); every decode selection emits exactly one further token
//! and one inter-token sample, so a finished request has `output_len - 1`
//! samples. KV blocks are reserved at admission (prompt plus one decode
//! step), grown by one block whenever a decode crosses a block boundary,
//! and released on completion, drop, or preemption. The block ledger and
//! the arrival/completion counts are checked at every event when
//! `strict_checks` is on.

use crate::config::{ConfigError, SchedulerVariant, SimConfig};
use crate::controller::{ControllerError, RoutingState};
use crate::cost_model::{BatchComposition, CostBreakdown, CostModelError, ModelArch};
use crate::latency_model::{BatchRecord, LatencyModel, LatencyModelError};
use crate::metrics::{outcomes, RequestOutcome};
use crate::scheduler::{self, InstanceRole, InstanceState, ValuePolicy};
use crate::workload::{
    build_requests, load_trace, poisson_arrivals, synth_trace, Request, RequestState, WorkloadError,
};
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Latency(#[from] LatencyModelError),
    #[error(transparent)]
    Cost(#[from] CostModelError),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("simulator invariant violated: {0}")]
    Invariant(String),
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !($cond) {
            return Err(SimError::Invariant(format!($($arg)*)));
        }
    };
}

/// What happens at a point in simulated time.
#[derive(Debug, Clone)]
pub enum EventKind {
    Arrival(Box<Request>),
    BatchComplete { instance: usize },
    OffloadArrive { instance: usize, request: Box<Request> },
    /// Re-evaluate an idle LP instance when a queued request first becomes
    /// offload-eligible (keeps starvation impossible without arrivals).
    Wake { instance: usize },
    EndOfRun,
}

#[derive(Debug)]
struct ScheduledEvent {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for ScheduledEvent {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for ScheduledEvent {}
impl PartialOrd for ScheduledEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for ScheduledEvent {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Reversed: BinaryHeap is a max-heap, we pop earliest (time, seq).
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// The batch an instance is currently executing.
#[derive(Debug)]
struct ActiveBatch {
    prefills: Vec<(Request, u64)>,
    decode_ids: Vec<u64>,
    composition: BatchComposition,
    cost: CostBreakdown,
    predicted_latency: f64,
}

#[derive(Debug)]
struct SimInstance {
    state: InstanceState,
    active: Option<ActiveBatch>,
    /// The request admitted through this HP instance's ticket, alive until
    /// it completes; at most one may exist at a time.
    ticketed_request: Option<u64>,
}

/// One exported event-log row (delimited text when written out).
#[derive(Debug, Clone, PartialEq)]
pub struct EventLogRow {
    pub time: f64,
    pub instance: i64,
    pub kind: &'static str,
    pub request: i64,
    pub detail: String,
}

impl std::fmt::Display for EventLogRow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:.9},{},{},{},{}",
            self.time, self.instance, self.kind, self.request, self.detail
        )
    }
}

/// Run counters surfaced beside the per-request outcomes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EngineStats {
    pub arrivals: u64,
    pub batches: u64,
    pub offloads: u64,
    pub tickets_issued: u64,
    pub preemptions: u64,
    pub dropped: u64,
    pub completed: u64,
    /// Times the latency regression extrapolated below zero and was clamped;
    /// nonzero values are a calibration warning.
    pub negative_latency_clamps: u64,
}

/// Everything a finished simulation leaves behind.
#[derive(Debug)]
pub struct SimResult {
    /// Completed and dropped requests, in finish order.
    pub finished: Vec<Request>,
    pub instance_roles: Vec<InstanceRole>,
    pub batch_records: Vec<BatchRecord>,
    pub event_log: Option<Vec<EventLogRow>>,
    pub stats: EngineStats,
    pub duration_s: f64,
    pub warmup_s: f64,
}

impl SimResult {
    pub fn outcomes(&self) -> Vec<RequestOutcome> {
        outcomes(&self.finished, &self.instance_roles)
    }

    /// Event log as delimited text (header plus one row per event).
    pub fn event_log_text(&self) -> Option<String> {
        let log = self.event_log.as_ref()?;
        let mut out = String::from("time,instance,kind,request,detail\n");
        for row in log {
            let _ = writeln!(out, "{row}");
        }
        Some(out)
    }
}

struct Engine {
    variant: SchedulerVariant,
    policy: ValuePolicy,
    arch: ModelArch,
    model: LatencyModel,
    tbt_slo: f64,
    offload_enabled: bool,
    tickets_enabled: bool,
    offload_margin: f64,
    hp_reference_budget: u64,
    transfer_delay: f64,
    strict_checks: bool,

    instances: Vec<SimInstance>,
    routing: RoutingState,
    events: BinaryHeap<ScheduledEvent>,
    seq: u64,
    now: f64,

    finished: Vec<Request>,
    batch_records: Vec<BatchRecord>,
    log: Option<Vec<EventLogRow>>,
    stats: EngineStats,
    in_flight_offloads: u64,
}

impl Engine {
    fn push_event(&mut self, time: f64, kind: EventKind) {
        let event = ScheduledEvent {
            time,
            seq: self.seq,
            kind,
        };
        self.seq += 1;
        self.events.push(event);
    }

    fn log(&mut self, instance: i64, kind: &'static str, request: i64, detail: String) {
        if let Some(log) = self.log.as_mut() {
            log.push(EventLogRow {
                time: self.now,
                instance,
                kind,
                request,
                detail,
            });
        }
    }

    fn live_count(&self) -> u64 {
        let on_instances: usize = self
            .instances
            .iter()
            .map(|i| {
                i.state.waiting.len()
                    + i.state.decoding.len()
                    + i.state.offload_outbox.len()
                    + i.active.as_ref().map_or(0, |a| a.prefills.len())
            })
            .sum();
        on_instances as u64 + self.in_flight_offloads
    }

    fn check_invariants(&self) -> Result<(), SimError> {
        if !self.strict_checks {
            return Ok(());
        }
        ensure!(
            self.stats.arrivals == self.stats.completed + self.stats.dropped + self.live_count(),
            "request conservation broken at t={}: {} arrived, {} completed, {} dropped, {} live",
            self.now,
            self.stats.arrivals,
            self.stats.completed,
            self.stats.dropped,
            self.live_count()
        );
        for inst in &self.instances {
            let held: u64 = inst
                .state
                .waiting
                .iter()
                .chain(inst.state.decoding.iter())
                .chain(inst.state.offload_outbox.iter())
                .map(|r| r.kv_blocks_held)
                .sum::<u64>()
                + inst
                    .active
                    .as_ref()
                    .map_or(0, |a| a.prefills.iter().map(|(r, _)| r.kv_blocks_held).sum::<u64>());
            ensure!(
                held + inst.state.kv_blocks_free == inst.state.kv_blocks_total,
                "KV ledger broken on instance {} at t={}: held {} + free {} != total {}",
                inst.state.id,
                self.now,
                held,
                inst.state.kv_blocks_free,
                inst.state.kv_blocks_total
            );
        }
        Ok(())
    }

    fn record_preemptions(&mut self, before: u64, inst_idx: usize) {
        let after: u64 = self.instances[inst_idx]
            .state
            .waiting
            .iter()
            .map(|r| u64::from(r.preemption_count))
            .sum();
        self.stats.preemptions += after.saturating_sub(before);
    }

    fn waiting_preemption_total(&self, inst_idx: usize) -> u64 {
        self.instances[inst_idx]
            .state
            .waiting
            .iter()
            .map(|r| u64::from(r.preemption_count))
            .sum()
    }

    /// Form and launch the next batch on an idle instance; park it (with a
    /// wake for future offload eligibility) when nothing can run.
    fn schedule_instance(&mut self, idx: usize) -> Result<(), SimError> {
        if self.instances[idx].active.is_some() {
            return Ok(());
        }
        let now = self.now;
        let role = self.instances[idx].state.role;

        let dropped = scheduler::drop_expired(&mut self.instances[idx].state, now);
        for req in dropped {
            self.release_ticket_if_held(idx, req.id);
            self.log(idx as i64, "drop", req.id as i64, format!("deadline={:.6}", req.deadline()));
            self.stats.dropped += 1;
            self.finished.push(req);
        }

        let preempt_before = self.waiting_preemption_total(idx);
        let is_ascendra = self.variant == SchedulerVariant::Ascendra;
        let plan = {
            let state = &mut self.instances[idx].state;
            match self.variant {
                SchedulerVariant::Ascendra => match role {
                    InstanceRole::Lp => scheduler::form_batch_lp(
                        state,
                        now,
                        &self.policy,
                        &self.model,
                        &self.arch,
                        self.tbt_slo,
                    ),
                    InstanceRole::Hp => scheduler::form_batch_hp(state, now, &self.model, &self.arch),
                },
                SchedulerVariant::Vllm => scheduler::form_batch_vllm_like(state, now, &self.model, &self.arch),
                SchedulerVariant::Sarathi => {
                    scheduler::form_batch_sarathi_like(state, now, &self.model, &self.arch)
                }
            }
        };
        self.record_preemptions(preempt_before, idx);

        // Launch before flagging: offload eligibility applies only to
        // requests the plan did not select.
        let launched = !plan.is_empty();
        if launched {
            let mut prefills = Vec::with_capacity(plan.prefill_selections.len());
            for &(id, chunk) in &plan.prefill_selections {
                let state = &mut self.instances[idx].state;
                let pos = state
                    .waiting
                    .iter()
                    .position(|r| r.id == id)
                    .expect("planned prefill must be waiting");
                let mut req = state.waiting.remove(pos);
                if req.state == RequestState::Queued {
                    req.transition(RequestState::Prefilling);
                }
                if req.prefill_start_time.is_none() {
                    req.prefill_start_time = Some(now);
                }
                prefills.push((req, chunk));
            }

            let cost = plan.cost.expect("non-empty plan carries cost");
            if self.model.predict_raw(&cost) < 0.0 {
                self.stats.negative_latency_clamps += 1;
            }
            let composition = plan.composition.expect("non-empty plan carries composition");
            self.stats.batches += 1;
            self.log(
                idx as i64,
                "batch_start",
                -1,
                format!(
                    "b_p={},b_d={},prefill_tokens={},latency={:.9}",
                    composition.num_prefills(),
                    composition.num_decodes(),
                    composition.prefill_tokens(),
                    plan.predicted_latency
                ),
            );
            self.instances[idx].active = Some(ActiveBatch {
                prefills,
                decode_ids: plan.decode_selections,
                composition,
                cost,
                predicted_latency: plan.predicted_latency,
            });
            self.push_event(now + plan.predicted_latency, EventKind::BatchComplete { instance: idx });
        }

        if is_ascendra && role == InstanceRole::Lp && self.offload_enabled {
            let moved = scheduler::flag_offloads(
                &mut self.instances[idx].state,
                now,
                &self.model,
                &self.arch,
                self.hp_reference_budget,
                self.offload_margin,
            );
            for id in &moved {
                self.log(idx as i64, "offload_flag", *id as i64, String::new());
            }
            let outbox = std::mem::take(&mut self.instances[idx].state.offload_outbox);
            if !outbox.is_empty() {
                let assignments = self.routing.dispatch_offloads(outbox)?;
                for (target, mut req) in assignments {
                    debug_assert_eq!(req.kv_blocks_held, 0, "offloads carry no KV");
                    req.offloaded = true;
                    self.stats.offloads += 1;
                    self.in_flight_offloads += 1;
                    self.log(idx as i64, "offload_dispatch", req.id as i64, format!("to={target}"));
                    self.push_event(
                        now + self.transfer_delay,
                        EventKind::OffloadArrive {
                            instance: target,
                            request: Box::new(req),
                        },
                    );
                }
            }
        }

        if !launched {
            let state = &self.instances[idx].state;
            ensure!(
                state.decoding.is_empty(),
                "instance {idx} parked with {} decoding requests at t={now}",
                state.decoding.len()
            );
            if state.has_queued_waiting() {
                // Only an ascendra LP may idle with queued work (a prompt too
                // large for its budgets); it must wake when offload
                // eligibility arrives. Anything else is a lost request.
                ensure!(
                    is_ascendra && role == InstanceRole::Lp && self.offload_enabled,
                    "instance {idx} parked with queued requests at t={now}"
                );
                if let Some(at) = scheduler::next_offload_eligibility(
                    state,
                    &self.model,
                    &self.arch,
                    self.hp_reference_budget,
                    self.offload_margin,
                ) {
                    // The eligibility instant can disagree with the flagging
                    // comparison by one rounding step; waking a nanosecond
                    // late resolves it without spinning.
                    let wake_at = if at > now { at } else { now + 1e-9 };
                    self.log(idx as i64, "park_until", -1, format!("wake={wake_at:.9}"));
                    self.push_event(wake_at, EventKind::Wake { instance: idx });
                }
            }
        }
        Ok(())
    }

    /// A ticketed request leaving the system frees its HP's ticket slot.
    fn release_ticket_if_held(&mut self, idx: usize, request_id: u64) {
        if self.instances[idx].ticketed_request == Some(request_id) {
            self.instances[idx].ticketed_request = None;
            self.instances[idx].state.ticket_outstanding = false;
        }
    }

    fn complete_request(&mut self, idx: usize, mut req: Request) -> Result<(), SimError> {
        req.transition(RequestState::Completed);
        req.completion_time = Some(self.now);
        self.release_ticket_if_held(idx, req.id);
        let state = &mut self.instances[idx].state;
        state.kv_blocks_free += req.kv_blocks_held;
        req.kv_blocks_held = 0;
        if state.role == InstanceRole::Hp {
            state.record_decode_len(req.tokens_decoded);
        }
        ensure!(
            req.tbt_samples == req.output_len() - 1,
            "request {} finished with {} inter-token samples, expected {}",
            req.id,
            req.tbt_samples,
            req.output_len() - 1
        );
        ensure!(
            req.tokens_decoded == req.output_len(),
            "request {} completed with {} of {} tokens",
            req.id,
            req.tokens_decoded,
            req.output_len()
        );
        self.stats.completed += 1;
        self.log(idx as i64, "complete", req.id as i64, format!("tokens={}", req.tokens_decoded));
        self.finished.push(req);
        Ok(())
    }

    fn apply_batch_completion(&mut self, idx: usize) -> Result<(), SimError> {
        let active = self.instances[idx]
            .active
            .take()
            .expect("completion event for an idle instance");
        self.batch_records.push(BatchRecord {
            flops: active.cost.flops,
            mem_bytes: active.cost.mem_bytes,
            latency_s: active.predicted_latency.max(f64::MIN_POSITIVE),
            num_prefills: active.composition.num_prefills() as u32,
            num_decodes: active.composition.num_decodes() as u32,
            prefill_tokens: active.composition.prefill_tokens(),
            decode_tokens: active.composition.num_decodes() as u64,
        });

        // Decode selections emit one token each.
        for id in active.decode_ids {
            let state = &mut self.instances[idx].state;
            let pos = state
                .decoding
                .iter()
                .position(|r| r.id == id)
                .expect("decode selection must still be decoding");
            let req = &mut state.decoding[pos];
            req.tokens_decoded += 1;
            req.tbt_samples += 1;
            if req.tokens_decoded == req.output_len() {
                let req = state.decoding.remove(pos);
                self.complete_request(idx, req)?;
            }
        }

        // Prefill chunks advance; a finished prompt emits a token.
        for (mut req, chunk) in active.prefills {
            req.tokens_prefilled += chunk;
            ensure!(
                req.tokens_prefilled <= req.effective_prompt_len,
                "request {} prefilled past its prompt",
                req.id
            );
            if req.tokens_prefilled == req.effective_prompt_len {
                req.transition(RequestState::Decoding);
                if req.first_token_time.is_none() {
                    req.first_token_time = Some(self.now);
                    req.tokens_decoded = 1;
                    self.log(idx as i64, "first_token", req.id as i64, format!("ttft={:.6}", self.now - req.arrival_time));
                } else {
                    // Recomputed after preemption: the re-prefill emits the
                    // next token of an already-started response.
                    req.tokens_decoded += 1;
                    req.tbt_samples += 1;
                }
                if req.tokens_decoded == req.output_len() {
                    self.complete_request(idx, req)?;
                } else {
                    self.instances[idx].state.insert_decoding(req);
                }
            } else {
                // Partial chunk: back to the queue, still mid-prefill.
                self.instances[idx].state.insert_waiting(req);
            }
        }
        self.log(idx as i64, "batch_complete", -1, String::new());
        Ok(())
    }

    /// Issue a ticket when an HP instance has an empty waiting queue and no
    /// ticket outstanding.
    fn ticket_check(&mut self, idx: usize) {
        if !self.tickets_enabled || self.variant != SchedulerVariant::Ascendra {
            return;
        }
        let state = &mut self.instances[idx].state;
        if state.role != InstanceRole::Hp || state.ticket_outstanding || !state.waiting.is_empty() {
            return;
        }
        if self.routing.issue_ticket(state.id) {
            state.ticket_outstanding = true;
            self.stats.tickets_issued += 1;
            self.log(idx as i64, "ticket_issue", -1, String::new());
        }
    }

    fn handle_event(&mut self, kind: EventKind) -> Result<(), SimError> {
        match kind {
            EventKind::Arrival(req) => {
                let mut req = *req;
                let target = self.routing.route_arrival();
                req.home_instance = Some(target);
                self.stats.arrivals += 1;
                let via_ticket = self.instances[target].state.role == InstanceRole::Hp;
                if via_ticket {
                    // The ticket slot stays occupied until this request
                    // completes; only one ticketed request at a time.
                    self.instances[target].ticketed_request = Some(req.id);
                    self.log(target as i64, "ticket_consume", req.id as i64, String::new());
                }
                self.log(target as i64, "arrival", req.id as i64, format!("prompt={}", req.prompt_len));
                self.instances[target].state.insert_waiting(req);
                self.schedule_instance(target)?;
                self.ticket_check(target);
            }
            EventKind::OffloadArrive { instance, request } => {
                let mut req = *request;
                self.in_flight_offloads -= 1;
                req.home_instance = Some(instance);
                req.queue_entered_time = self.now;
                self.log(instance as i64, "offload_arrive", req.id as i64, String::new());
                self.instances[instance].state.insert_waiting(req);
                self.schedule_instance(instance)?;
                self.ticket_check(instance);
            }
            EventKind::BatchComplete { instance } => {
                self.apply_batch_completion(instance)?;
                self.schedule_instance(instance)?;
                self.ticket_check(instance);
            }
            EventKind::Wake { instance } => {
                self.schedule_instance(instance)?;
                self.ticket_check(instance);
            }
            EventKind::EndOfRun => {
                self.log(-1, "end_of_run", -1, String::new());
            }
        }
        Ok(())
    }
}

/// Build the request stream described by the config. Seeds are derived from
/// the workload seed: arrivals use it directly, synthetic lengths use
/// seed+1, and short-trace resampling uses seed+2.
fn build_workload(config: &SimConfig) -> Result<Vec<Request>, SimError> {
    let w = &config.workload;
    let slo = config.resolved_slo()?;
    let arrivals = poisson_arrivals(w.qps, w.duration_s, w.seed);
    let entries = match config.resolved_synth()? {
        Some(spec) => synth_trace(&spec, arrivals.len(), w.seed.wrapping_add(1))?,
        None => load_trace(w.trace.as_ref().expect("validated: trace set"))?,
    };
    if arrivals.is_empty() {
        return Ok(Vec::new());
    }
    Ok(build_requests(&entries, &arrivals, &slo, w.seed.wrapping_add(2)))
}

/// Run one simulation to completion: all arrivals are processed and every
/// request drains to Completed or Dropped before the engine returns.
pub fn run(config: &SimConfig) -> Result<SimResult, SimError> {
    config.validate()?;
    let arch = config.resolved_arch()?;
    let model = config.resolved_latency_model()?;
    let slo = config.resolved_slo()?;
    let variant = config.scheduler.variant;

    let roles = config.instance_roles();
    let instances: Vec<SimInstance> = roles
        .iter()
        .enumerate()
        .map(|(idx, &role)| SimInstance {
            state: InstanceState::new(idx, role, config.instance_params(idx)),
            active: None,
            ticketed_request: None,
        })
        .collect();

    // Baselines treat every instance as an ordinary pool member.
    let (lp_ids, hp_ids): (Vec<usize>, Vec<usize>) = if variant == SchedulerVariant::Ascendra {
        (
            roles
                .iter()
                .enumerate()
                .filter(|(_, r)| **r == InstanceRole::Lp)
                .map(|(i, _)| i)
                .collect(),
            roles
                .iter()
                .enumerate()
                .filter(|(_, r)| **r == InstanceRole::Hp)
                .map(|(i, _)| i)
                .collect(),
        )
    } else {
        ((0..roles.len()).collect(), Vec::new())
    };
    let routing = RoutingState::new(lp_ids, hp_ids)?;

    let requests = build_workload(config)?;

    // A request whose full KV footprint cannot fit the smallest instance
    // would thrash between preemption and re-admission forever.
    let min_capacity_tokens = config
        .topology
        .instances
        .iter()
        .map(|i| i.kv_blocks_total * i.block_size_tokens)
        .min()
        .expect("validated: at least one instance");
    for req in &requests {
        let need = req.prompt_len + req.output_len() + 1;
        if need > min_capacity_tokens {
            return Err(SimError::Capacity(format!(
                "request {} needs KV for {} tokens but the smallest instance holds {}",
                req.id, need, min_capacity_tokens
            )));
        }
    }

    // Out-of-order selection never admits a prompt at or above the token
    // budget; without the HP offload path such a request would starve.
    if variant == SchedulerVariant::Ascendra && !config.scheduler.offload {
        let min_lp_budget = config
            .topology
            .instances
            .iter()
            .filter(|i| i.role == crate::config::RoleName::Lp)
            .map(|i| i.token_budget)
            .min()
            .unwrap_or(u64::MAX);
        for req in &requests {
            if req.prompt_len >= min_lp_budget {
                return Err(SimError::Capacity(format!(
                    "request {} ({} prompt tokens) can never fit an LP token budget of {} and offloading is disabled",
                    req.id, req.prompt_len, min_lp_budget
                )));
            }
        }
    }

    // The offload threshold references the largest prefill batch an HP
    // instance would run (its base token budget, the elastic floor).
    let hp_reference_budget = config
        .topology
        .instances
        .iter()
        .filter(|i| i.role == crate::config::RoleName::Hp)
        .map(|i| i.token_budget)
        .max()
        .unwrap_or(default_reference_budget());

    let mut engine = Engine {
        variant,
        policy: config.scheduler.policy.to_policy(),
        arch,
        model,
        tbt_slo: slo.scaled_tbt(),
        offload_enabled: variant == SchedulerVariant::Ascendra && config.scheduler.offload,
        tickets_enabled: config.scheduler.tickets,
        offload_margin: config.scheduler.offload_margin_s,
        hp_reference_budget,
        transfer_delay: config.topology.offload_transfer_delay_s,
        strict_checks: config.engine.strict_checks,
        instances,
        routing,
        events: BinaryHeap::new(),
        seq: 0,
        now: 0.0,
        finished: Vec::new(),
        batch_records: Vec::new(),
        log: config.engine.event_log.then(Vec::new),
        stats: EngineStats::default(),
        in_flight_offloads: 0,
    };

    let total_arrivals = requests.len() as u64;
    for req in requests {
        engine.push_event(req.arrival_time, EventKind::Arrival(Box::new(req)));
    }
    engine.push_event(config.workload.duration_s, EventKind::EndOfRun);

    // Idle HP instances issue their first tickets at time zero.
    for idx in 0..engine.instances.len() {
        engine.ticket_check(idx);
    }

    while let Some(event) = engine.events.pop() {
        debug_assert!(event.time >= engine.now, "time went backwards");
        engine.now = event.time;
        engine.handle_event(event.kind)?;
        engine.check_invariants()?;
    }

    ensure!(
        engine.stats.arrivals == total_arrivals,
        "processed {} arrivals, expected {total_arrivals}",
        engine.stats.arrivals
    );
    ensure!(
        engine.live_count() == 0,
        "{} requests still live after drain",
        engine.live_count()
    );
    for inst in &engine.instances {
        ensure!(
            inst.state.kv_blocks_free == inst.state.kv_blocks_total,
            "instance {} leaked KV blocks at drain",
            inst.state.id
        );
    }

    Ok(SimResult {
        finished: engine.finished,
        instance_roles: roles,
        batch_records: engine.batch_records,
        event_log: engine.log,
        stats: engine.stats,
        duration_s: config.workload.duration_s,
        warmup_s: config.engine.warmup_s,
    })
}

fn default_reference_budget() -> u64 {
    2048
}
