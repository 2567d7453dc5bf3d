//! Batch formation for LP, HP, and baseline instances.
//!
//! LP instances keep decodes flowing and pack prefills around them out of
//! arrival order: every queued request gets a value from the configured
//! policy, candidates are scanned in descending value order, and the scan
//! stops at the first request that does not fit the remaining compute,
//! memory, and token budgets. Requests that will not survive the wait are
//! flagged for offload to an HP instance. HP instances (and the vLLM-like
//! baseline) run prefill-first FCFS batches; the Sarathi-like baseline
//! splits prompts into budget-sized chunks appended behind the decodes.
//!
//! Batch formation may mutate the instance: decode admissions grow KV
//! allocations (preempting the most recently arrived decode when blocks run
//! out) and prefill admissions reserve blocks for the prompt plus one decode
//! step. Moving requests in and out of the running batch is the engine's
//! job; the returned [`BatchPlan`] only names them.

use crate::cost_model::{decode_cost, hybrid_cost, prefill_cost, BatchComposition, CostBreakdown, ModelArch, PrefillChunk};
use crate::latency_model::LatencyModel;
use crate::workload::{Request, RequestState};
use std::collections::VecDeque;
use std::sync::Arc;
use thiserror::Error;

/// Completed decode lengths remembered for the elastic reserve estimate.
pub const DECODE_HISTORY_CAP: usize = 128;
/// Reserve estimate (tokens per decode) used before any decode completes.
pub const DEFAULT_DECODE_RESERVE_TOKENS: f64 = 256.0;
/// Tokens of KV reserved beyond the prompt when admitting a prefill, so the
/// first decode step cannot immediately preempt the request it produced.
pub const DECODE_RESERVE_TOKENS: u64 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("cannot preempt: no decoding requests on instance")]
    NothingToPreempt,
}

/// Which tier an instance serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceRole {
    /// Low priority: throughput-optimized, out-of-order prefill selection.
    Lp,
    /// High priority: latency-optimized, prefill-first FCFS.
    Hp,
}

/// Ordering policy for out-of-order prefill selection. Higher value means
/// higher priority; ties break by request id ascending.
#[derive(Clone)]
pub enum ValuePolicy {
    /// Earliest deadline first (the default).
    Edf,
    /// Shortest predicted prefill first.
    Sjf,
    /// Arrival order.
    Fcfs,
    /// Longest predicted prefill first.
    Ljf,
    /// User-supplied scoring rule over (request, now).
    Custom(Arc<dyn Fn(&Request, f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for ValuePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ValuePolicy::Edf => write!(f, "Edf"),
            ValuePolicy::Sjf => write!(f, "Sjf"),
            ValuePolicy::Fcfs => write!(f, "Fcfs"),
            ValuePolicy::Ljf => write!(f, "Ljf"),
            ValuePolicy::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Per-request cost estimates feeding selection: predicted standalone
/// prefill seconds and the KV blocks an admission would reserve.
pub trait PrefillCostModel {
    fn prefill_seconds(&self, req: &Request) -> f64;
    fn admission_blocks(&self, req: &Request) -> u64;
}

/// The production estimator: latency model over the analytical cost of the
/// request's effective prompt.
pub struct Predictor<'a> {
    pub model: &'a LatencyModel,
    pub arch: &'a ModelArch,
    pub block_size_tokens: u64,
}

impl PrefillCostModel for Predictor<'_> {
    fn prefill_seconds(&self, req: &Request) -> f64 {
        let cost = prefill_cost(self.arch, &[req.effective_prompt_len]).expect("validated arch, prompt >= 1");
        self.model.predict(&cost)
    }

    fn admission_blocks(&self, req: &Request) -> u64 {
        blocks_to_cover(req.kv_token_footprint() + DECODE_RESERVE_TOKENS, self.block_size_tokens)
    }
}

pub fn blocks_to_cover(tokens: u64, block_size_tokens: u64) -> u64 {
    tokens.div_ceil(block_size_tokens)
}

/// Priority score for a queued request. Scan order is descending score.
pub fn value_of(policy: &ValuePolicy, req: &Request, now: f64, cost: &dyn PrefillCostModel) -> f64 {
    match policy {
        ValuePolicy::Edf => -req.deadline(),
        ValuePolicy::Sjf => -cost.prefill_seconds(req),
        ValuePolicy::Ljf => cost.prefill_seconds(req),
        ValuePolicy::Fcfs => -req.arrival_time,
        ValuePolicy::Custom(score) => score(req, now),
    }
}

/// A queued request annotated with its value and budget costs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrefillCandidate {
    pub id: u64,
    pub value: f64,
    pub compute_seconds: f64,
    pub memory_blocks: u64,
    pub prefill_tokens: u64,
}

/// Annotate the queued requests of a waiting list for selection.
pub fn annotate_waiting(
    waiting: &[Request],
    now: f64,
    policy: &ValuePolicy,
    cost: &dyn PrefillCostModel,
) -> Vec<PrefillCandidate> {
    waiting
        .iter()
        .filter(|r| r.state == RequestState::Queued)
        .map(|r| PrefillCandidate {
            id: r.id,
            value: value_of(policy, r, now, cost),
            compute_seconds: cost.prefill_seconds(r),
            memory_blocks: cost.admission_blocks(r),
            prefill_tokens: r.effective_prompt_len,
        })
        .collect()
}

/// Out-of-order selection over annotated candidates: sort by value
/// descending (ties by id ascending), scan in order, take a candidate only
/// while all three remaining budgets strictly exceed its costs, and stop the
/// scan at the first candidate that does not fit. Returns ids in scan order.
pub fn select_from_candidates(
    candidates: &[PrefillCandidate],
    compute_budget: f64,
    memory_budget: u64,
    token_budget: u64,
) -> Vec<u64> {
    let mut order: Vec<&PrefillCandidate> = candidates.iter().collect();
    order.sort_by(|a, b| b.value.total_cmp(&a.value).then(a.id.cmp(&b.id)));

    let mut selected = Vec::new();
    let mut compute = compute_budget;
    let mut memory = memory_budget;
    let mut tokens = token_budget;
    for cand in order {
        if !(compute > 0.0 && memory > 0 && tokens > 0) {
            continue;
        }
        if compute > cand.compute_seconds && memory > cand.memory_blocks && tokens > cand.prefill_tokens {
            selected.push(cand.id);
            compute -= cand.compute_seconds;
            memory -= cand.memory_blocks;
            tokens -= cand.prefill_tokens;
        } else {
            break;
        }
    }
    selected
}

/// Annotate a waiting list and run the out-of-order selection scan.
pub fn select_prefills(
    waiting: &[Request],
    compute_budget: f64,
    memory_budget: u64,
    token_budget: u64,
    policy: &ValuePolicy,
    cost: &dyn PrefillCostModel,
    now: f64,
) -> Vec<u64> {
    let candidates = annotate_waiting(waiting, now, policy, cost);
    select_from_candidates(&candidates, compute_budget, memory_budget, token_budget)
}

/// Static limits of one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceParams {
    pub kv_blocks_total: u64,
    pub block_size_tokens: u64,
    pub max_batch_requests: usize,
    pub token_budget: u64,
    pub elastic_enabled: bool,
    pub drop_enabled: bool,
}

/// One LP or HP instance: its queues, KV ledger, and batching limits.
///
/// `waiting` and `decoding` stay sorted by (arrival time, id); every request
/// the instance owns lives in exactly one of `waiting`, `decoding`, or
/// `offload_outbox` (the engine additionally holds requests of the running
/// batch).
#[derive(Debug, Clone)]
pub struct InstanceState {
    pub id: usize,
    pub role: InstanceRole,
    pub waiting: Vec<Request>,
    pub decoding: Vec<Request>,
    pub offload_outbox: Vec<Request>,
    pub kv_blocks_total: u64,
    pub kv_blocks_free: u64,
    pub block_size_tokens: u64,
    pub max_batch_requests: usize,
    /// Prefill token budget per batch (the elastic base on HP).
    pub token_budget: u64,
    pub elastic_enabled: bool,
    pub drop_enabled: bool,
    pub ticket_outstanding: bool,
    /// Completed decode lengths (HP), newest last.
    pub decode_len_history: VecDeque<u64>,
}

impl InstanceState {
    pub fn new(id: usize, role: InstanceRole, params: InstanceParams) -> Self {
        InstanceState {
            id,
            role,
            waiting: Vec::new(),
            decoding: Vec::new(),
            offload_outbox: Vec::new(),
            kv_blocks_total: params.kv_blocks_total,
            kv_blocks_free: params.kv_blocks_total,
            block_size_tokens: params.block_size_tokens,
            max_batch_requests: params.max_batch_requests,
            token_budget: params.token_budget,
            elastic_enabled: params.elastic_enabled,
            drop_enabled: params.drop_enabled,
            ticket_outstanding: false,
            decode_len_history: VecDeque::with_capacity(DECODE_HISTORY_CAP),
        }
    }

    fn insert_sorted(list: &mut Vec<Request>, req: Request) {
        let key = (req.arrival_time, req.id);
        let pos = list
            .binary_search_by(|r| (r.arrival_time, r.id).partial_cmp(&key).unwrap())
            .unwrap_or_else(|p| p);
        list.insert(pos, req);
    }

    pub fn insert_waiting(&mut self, req: Request) {
        Self::insert_sorted(&mut self.waiting, req);
    }

    pub fn insert_decoding(&mut self, req: Request) {
        Self::insert_sorted(&mut self.decoding, req);
    }

    pub fn has_queued_waiting(&self) -> bool {
        self.waiting.iter().any(|r| r.state == RequestState::Queued)
    }

    pub fn has_work(&self) -> bool {
        !self.waiting.is_empty() || !self.decoding.is_empty()
    }

    pub fn record_decode_len(&mut self, len: u64) {
        if self.decode_len_history.len() == DECODE_HISTORY_CAP {
            self.decode_len_history.pop_front();
        }
        self.decode_len_history.push_back(len);
    }

    fn waiting_mut(&mut self, id: u64) -> &mut Request {
        self.waiting
            .iter_mut()
            .find(|r| r.id == id)
            .expect("selected request must be in waiting")
    }

    /// KV blocks a decode needs on top of its current holding to store the
    /// next emitted token.
    fn decode_growth_blocks(&self, req: &Request) -> u64 {
        blocks_to_cover(req.kv_token_footprint() + 1, self.block_size_tokens).saturating_sub(req.kv_blocks_held)
    }
}

/// A planned batch: selections by request id, the token-level composition,
/// and its predicted latency. Formation already reserved KV blocks for every
/// selection.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    /// (request id, prefill chunk length) pairs.
    pub prefill_selections: Vec<(u64, u64)>,
    pub decode_selections: Vec<u64>,
    pub composition: Option<BatchComposition>,
    pub cost: Option<CostBreakdown>,
    pub predicted_latency: f64,
}

impl BatchPlan {
    pub fn empty() -> Self {
        BatchPlan {
            prefill_selections: Vec::new(),
            decode_selections: Vec::new(),
            composition: None,
            cost: None,
            predicted_latency: 0.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.prefill_selections.is_empty() && self.decode_selections.is_empty()
    }
}

struct DecodeAdmission {
    ids: Vec<u64>,
    contexts: Vec<u64>,
}

/// Admit up to `cap` decoding requests (oldest first), growing their KV
/// allocations for one step and preempting the newest decode while blocks
/// run short.
fn admit_decodes(inst: &mut InstanceState, cap: usize) -> DecodeAdmission {
    loop {
        let take = inst.decoding.len().min(cap);
        let total_need: u64 = inst.decoding[..take]
            .iter()
            .map(|r| inst.decode_growth_blocks(r))
            .sum();
        if total_need <= inst.kv_blocks_free {
            let mut ids = Vec::with_capacity(take);
            let mut contexts = Vec::with_capacity(take);
            let block_size = inst.block_size_tokens;
            for req in inst.decoding[..take].iter_mut() {
                let need = blocks_to_cover(req.kv_token_footprint() + 1, block_size)
                    .saturating_sub(req.kv_blocks_held);
                req.kv_blocks_held += need;
                ids.push(req.id);
                contexts.push(req.decode_context_len());
            }
            inst.kv_blocks_free -= total_need;
            return DecodeAdmission { ids, contexts };
        }
        preempt(inst).expect("memory shortfall implies a decode exists to evict");
    }
}

/// Evict the most recently arrived decoding request: release its blocks,
/// fold generated tokens into its prompt, and requeue it. Its first-token
/// time is retained; TTFT was already served.
pub fn preempt(inst: &mut InstanceState) -> Result<u64, SchedulerError> {
    let mut victim = inst.decoding.pop().ok_or(SchedulerError::NothingToPreempt)?;
    inst.kv_blocks_free += victim.kv_blocks_held;
    victim.kv_blocks_held = 0;
    victim.effective_prompt_len = victim.prompt_len + victim.tokens_decoded;
    victim.tokens_prefilled = 0;
    victim.preemption_count += 1;
    victim.transition(RequestState::Queued);
    let id = victim.id;
    inst.insert_waiting(victim);
    Ok(id)
}

/// Drop every queued request whose TTFT deadline has passed. No-op unless
/// the instance runs in drop mode; requests that started prefill or decode
/// are never dropped.
pub fn drop_expired(inst: &mut InstanceState, now: f64) -> Vec<Request> {
    if !inst.drop_enabled {
        return Vec::new();
    }
    let mut dropped = Vec::new();
    let mut i = 0;
    while i < inst.waiting.len() {
        let expired = inst.waiting[i].state == RequestState::Queued && now > inst.waiting[i].deadline();
        if expired {
            let mut req = inst.waiting.remove(i);
            req.transition(RequestState::Dropped);
            dropped.push(req);
        } else {
            i += 1;
        }
    }
    dropped
}

/// HP prefill token limit for the next batch: the base budget, expanded by
/// whatever free KV remains beyond a reserve for ongoing decodes when that
/// surplus exceeds 10% of total memory.
pub fn elastic_limit(inst: &InstanceState) -> u64 {
    let base = inst.token_budget;
    if !inst.elastic_enabled {
        return base;
    }
    let mean_decode_len = if inst.decode_len_history.is_empty() {
        DEFAULT_DECODE_RESERVE_TOKENS
    } else {
        inst.decode_len_history.iter().sum::<u64>() as f64 / inst.decode_len_history.len() as f64
    };
    let reserve_tokens = mean_decode_len * (inst.decoding.len() as f64 + 1.0);
    let total_tokens = (inst.kv_blocks_total * inst.block_size_tokens) as f64;
    let free_tokens = (inst.kv_blocks_free * inst.block_size_tokens) as f64;
    let available = free_tokens - reserve_tokens;
    if available > 0.10 * total_tokens {
        base + available as u64
    } else {
        base
    }
}

/// Move every queued request that can no longer wait into the offload
/// outbox. A request must leave when its remaining slack is at most its own
/// predicted prefill time plus the worst-case HP batch plus the margin.
/// Returns the moved ids; only requests that have not started prefill are
/// eligible.
pub fn flag_offloads(
    inst: &mut InstanceState,
    now: f64,
    model: &LatencyModel,
    arch: &ModelArch,
    hp_token_budget: u64,
    margin: f64,
) -> Vec<u64> {
    let worst_hp_batch = model
        .worst_case_batch_latency(arch, hp_token_budget)
        .expect("hp token budget validated >= 1");
    let predictor = Predictor {
        model,
        arch,
        block_size_tokens: inst.block_size_tokens,
    };
    let mut moved = Vec::new();
    let mut i = 0;
    while i < inst.waiting.len() {
        let req = &inst.waiting[i];
        let eligible = req.state == RequestState::Queued && req.tokens_prefilled == 0;
        if eligible {
            let slack = req.deadline() - now;
            if slack <= predictor.prefill_seconds(req) + worst_hp_batch + margin {
                let req = inst.waiting.remove(i);
                moved.push(req.id);
                inst.offload_outbox.push(req);
                continue;
            }
        }
        i += 1;
    }
    moved
}

/// The earliest time any queued request on this instance becomes offload
/// eligible, for waking an otherwise idle LP instance. `None` when nothing
/// is queued.
pub fn next_offload_eligibility(
    inst: &InstanceState,
    model: &LatencyModel,
    arch: &ModelArch,
    hp_token_budget: u64,
    margin: f64,
) -> Option<f64> {
    let worst_hp_batch = model.worst_case_batch_latency(arch, hp_token_budget).ok()?;
    let predictor = Predictor {
        model,
        arch,
        block_size_tokens: inst.block_size_tokens,
    };
    inst.waiting
        .iter()
        .filter(|r| r.state == RequestState::Queued && r.tokens_prefilled == 0)
        .map(|r| r.deadline() - predictor.prefill_seconds(r) - worst_hp_batch - margin)
        .min_by(|a, b| f64::total_cmp(a, b))
}

fn finish_plan(
    arch: &ModelArch,
    model: &LatencyModel,
    prefill_selections: Vec<(u64, u64)>,
    decode_selections: Vec<u64>,
    composition: BatchComposition,
) -> BatchPlan {
    if composition.prefill_chunks.is_empty() && composition.decode_contexts.is_empty() {
        return BatchPlan::empty();
    }
    let cost = hybrid_cost(arch, &composition).expect("composition built from admitted requests");
    let predicted_latency = model.predict(&cost);
    BatchPlan {
        prefill_selections,
        decode_selections,
        composition: Some(composition),
        cost: Some(cost),
        predicted_latency,
    }
}

/// LP batch formation: admit all decodes up to the batch-size cap, convert
/// the TBT headroom left by the decode-only latency into the compute budget,
/// then pack whole-prompt prefills by value. LP never chunks.
pub fn form_batch_lp(
    inst: &mut InstanceState,
    now: f64,
    policy: &ValuePolicy,
    model: &LatencyModel,
    arch: &ModelArch,
    tbt_slo: f64,
) -> BatchPlan {
    debug_assert_eq!(inst.role, InstanceRole::Lp);
    let cap = inst.max_batch_requests;
    let decode = admit_decodes(inst, cap);
    let decode_latency = if decode.contexts.is_empty() {
        0.0
    } else {
        model.predict(&decode_cost(arch, &decode.contexts).expect("nonempty contexts"))
    };
    let compute_budget = (tbt_slo - decode_latency).max(0.0);
    let slots = cap - decode.ids.len();

    let predictor = Predictor {
        model,
        arch,
        block_size_tokens: inst.block_size_tokens,
    };
    let mut selected = if slots == 0 {
        Vec::new()
    } else {
        select_prefills(
            &inst.waiting,
            compute_budget,
            inst.kv_blocks_free,
            inst.token_budget,
            policy,
            &predictor,
            now,
        )
    };
    selected.truncate(slots);

    let mut prefill_selections = Vec::with_capacity(selected.len());
    let mut chunks = Vec::with_capacity(selected.len());
    for id in selected {
        let block_size = inst.block_size_tokens;
        let need;
        let prompt;
        {
            let req = inst.waiting_mut(id);
            need = blocks_to_cover(req.kv_token_footprint() + DECODE_RESERVE_TOKENS, block_size);
            req.kv_blocks_held += need;
            prompt = req.effective_prompt_len;
        }
        prefill_selections.push((id, prompt));
        chunks.push(PrefillChunk::whole(prompt));
        inst.kv_blocks_free -= need;
    }

    let composition = BatchComposition {
        prefill_chunks: chunks,
        decode_contexts: decode.contexts,
    };
    finish_plan(arch, model, prefill_selections, decode.ids, composition)
}

/// Plan a prefill-first FCFS admission pass (pure). Whole prompts are taken
/// in arrival order while cumulative tokens stay within `token_limit` and KV
/// blocks suffice; an oversized head-of-queue prompt is admitted alone.
fn plan_prefills_fcfs(inst: &InstanceState, token_limit: u64) -> Vec<(u64, u64, u64)> {
    let mut admitted: Vec<(u64, u64, u64)> = Vec::new();
    let mut acc_tokens = 0u64;
    let mut free = inst.kv_blocks_free;
    for req in inst.waiting.iter().filter(|r| r.state == RequestState::Queued) {
        let tokens = req.effective_prompt_len;
        let oversized_alone = admitted.is_empty() && tokens > token_limit;
        if !oversized_alone && acc_tokens + tokens > token_limit {
            break;
        }
        let need = blocks_to_cover(req.kv_token_footprint() + DECODE_RESERVE_TOKENS, inst.block_size_tokens);
        if need > free {
            break;
        }
        admitted.push((req.id, tokens, need));
        acc_tokens += tokens;
        free -= need;
        if oversized_alone {
            break;
        }
    }
    admitted
}

/// Prefill-first formation shared by HP and the vLLM-like baseline: serve a
/// prefill-only batch whenever anything is queued (preempting decodes when
/// the head prompt cannot get KV blocks), otherwise decode everything.
fn form_prefill_first(
    inst: &mut InstanceState,
    model: &LatencyModel,
    arch: &ModelArch,
    token_limit: u64,
) -> BatchPlan {
    while inst.has_queued_waiting() {
        let admitted = plan_prefills_fcfs(inst, token_limit);
        if admitted.is_empty() {
            // Head of queue is KV-blocked; make room or give up on prefill.
            if preempt(inst).is_err() {
                break;
            }
            continue;
        }
        let mut prefill_selections = Vec::with_capacity(admitted.len());
        let mut chunks = Vec::with_capacity(admitted.len());
        for (id, tokens, need) in admitted {
            inst.waiting_mut(id).kv_blocks_held += need;
            prefill_selections.push((id, tokens));
            chunks.push(PrefillChunk::whole(tokens));
            inst.kv_blocks_free -= need;
        }
        let composition = BatchComposition {
            prefill_chunks: chunks,
            decode_contexts: Vec::new(),
        };
        return finish_plan(arch, model, prefill_selections, Vec::new(), composition);
    }

    let decode = admit_decodes(inst, usize::MAX);
    let composition = BatchComposition {
        prefill_chunks: Vec::new(),
        decode_contexts: decode.contexts,
    };
    finish_plan(arch, model, Vec::new(), decode.ids, composition)
}

/// HP batch formation: prefill-first FCFS under the elastic token limit.
pub fn form_batch_hp(inst: &mut InstanceState, _now: f64, model: &LatencyModel, arch: &ModelArch) -> BatchPlan {
    debug_assert_eq!(inst.role, InstanceRole::Hp);
    let limit = elastic_limit(inst);
    form_prefill_first(inst, model, arch, limit)
}

/// vLLM-like baseline: prefill-prioritizing FCFS under a fixed token budget.
/// Ongoing decodes stall while anything waits for prefill.
pub fn form_batch_vllm_like(inst: &mut InstanceState, _now: f64, model: &LatencyModel, arch: &ModelArch) -> BatchPlan {
    let limit = inst.token_budget;
    form_prefill_first(inst, model, arch, limit)
}

/// Plan Sarathi-style chunk admissions (pure): walk the waiting queue in
/// arrival order and hand out `min(remaining budget, remaining prompt)`
/// sized chunks while the token budget and KV blocks last.
fn plan_chunks_fcfs(inst: &InstanceState, token_budget: u64) -> Vec<(u64, u64, u64)> {
    let mut admitted = Vec::new();
    let mut budget = token_budget;
    let mut free = inst.kv_blocks_free;
    for req in &inst.waiting {
        if budget == 0 {
            break;
        }
        let remaining = req.effective_prompt_len - req.tokens_prefilled;
        let chunk = budget.min(remaining);
        let completes = req.tokens_prefilled + chunk == req.effective_prompt_len;
        let covered = req.tokens_prefilled + chunk + u64::from(completes) * DECODE_RESERVE_TOKENS;
        let need = blocks_to_cover(covered, inst.block_size_tokens).saturating_sub(req.kv_blocks_held);
        if need > free {
            break;
        }
        admitted.push((req.id, chunk, need));
        budget -= chunk;
        free -= need;
    }
    admitted
}

/// Sarathi-like baseline: admit all decodes, then append FCFS prefill
/// chunks until the token budget is spent. Chunks persist across batches
/// until the prompt completes; decodes do not consume the token budget.
pub fn form_batch_sarathi_like(
    inst: &mut InstanceState,
    _now: f64,
    model: &LatencyModel,
    arch: &ModelArch,
) -> BatchPlan {
    let cap = inst.max_batch_requests;
    let decode = admit_decodes(inst, cap);
    let admitted = plan_chunks_fcfs(inst, inst.token_budget);

    let mut prefill_selections = Vec::with_capacity(admitted.len());
    let mut chunks = Vec::with_capacity(admitted.len());
    for (id, chunk, need) in admitted {
        let req = inst.waiting_mut(id);
        req.kv_blocks_held += need;
        chunks.push(PrefillChunk {
            processed_len: req.tokens_prefilled,
            chunk_len: chunk,
            full_prompt_len: req.effective_prompt_len,
        });
        prefill_selections.push((id, chunk));
        inst.kv_blocks_free -= need;
    }

    let composition = BatchComposition {
        prefill_chunks: chunks,
        decode_contexts: decode.contexts,
    };
    finish_plan(arch, model, prefill_selections, decode.ids, composition)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latency_model::HardwareCaps;
    use crate::workload::SloSpec;

    fn arch() -> ModelArch {
        ModelArch {
            hidden_size: 64,
            num_heads: 4,
            head_size: 16,
            num_kv_heads: 4,
            ffn_intermediate: 128,
            num_layers: 2,
            attn_block_size: 16,
            dtype_bytes: 2,
            tp_degree: 1,
        }
    }

    fn model() -> LatencyModel {
        LatencyModel::synthetic_default(HardwareCaps {
            flops_per_sec: 1e9,
            mem_bytes_per_sec: 1e9,
        })
    }

    fn params() -> InstanceParams {
        InstanceParams {
            kv_blocks_total: 1000,
            block_size_tokens: 16,
            max_batch_requests: 128,
            token_budget: 2048,
            elastic_enabled: true,
            drop_enabled: false,
        }
    }

    fn request(id: u64, arrival: f64, prompt: u64, output: u64, ttft: f64) -> Request {
        Request::new(id, arrival, prompt, output, &SloSpec::new(ttft, 0.15))
    }

    fn decoding_request(id: u64, arrival: f64, prompt: u64, decoded: u64, held: u64) -> Request {
        let mut r = request(id, arrival, prompt, 50, 1.0);
        r.transition(RequestState::Prefilling);
        r.transition(RequestState::Decoding);
        r.tokens_prefilled = prompt;
        r.tokens_decoded = decoded;
        r.kv_blocks_held = held;
        r
    }

    /// Fixed costs derived from the prompt length, for selection tests.
    struct StubCost;
    impl PrefillCostModel for StubCost {
        fn prefill_seconds(&self, req: &Request) -> f64 {
            req.effective_prompt_len as f64 * 1e-3
        }
        fn admission_blocks(&self, req: &Request) -> u64 {
            blocks_to_cover(req.kv_token_footprint() + 1, 16)
        }
    }

    #[test]
    fn value_policies_order_as_documented() {
        let stub = StubCost;
        let early = request(0, 0.0, 100, 10, 5.0);
        let late = request(1, 1.0, 100, 10, 5.0);
        assert!(value_of(&ValuePolicy::Edf, &early, 2.0, &stub) > value_of(&ValuePolicy::Edf, &late, 2.0, &stub));
        assert!(value_of(&ValuePolicy::Fcfs, &early, 2.0, &stub) > value_of(&ValuePolicy::Fcfs, &late, 2.0, &stub));

        let short = request(2, 0.0, 100, 10, 5.0);
        let long = request(3, 0.0, 1000, 10, 5.0);
        assert!(value_of(&ValuePolicy::Sjf, &short, 0.0, &stub) > value_of(&ValuePolicy::Sjf, &long, 0.0, &stub));
        assert!(value_of(&ValuePolicy::Ljf, &long, 0.0, &stub) > value_of(&ValuePolicy::Ljf, &short, 0.0, &stub));
    }

    #[test]
    fn selection_breaks_at_first_misfit() {
        // Values 3 > 2 > 1; the 500-token candidate breaks the scan even
        // though the 10-token one after it would fit.
        let candidates = vec![
            PrefillCandidate { id: 0, value: 3.0, compute_seconds: 0.001, memory_blocks: 1, prefill_tokens: 50 },
            PrefillCandidate { id: 1, value: 2.0, compute_seconds: 0.001, memory_blocks: 1, prefill_tokens: 500 },
            PrefillCandidate { id: 2, value: 1.0, compute_seconds: 0.001, memory_blocks: 1, prefill_tokens: 10 },
        ];
        let selected = select_from_candidates(&candidates, 1e9, u64::MAX, 100);
        assert_eq!(selected, vec![0]);
    }

    #[test]
    fn selection_empty_queue_and_zero_budgets() {
        assert!(select_from_candidates(&[], 1.0, 10, 10).is_empty());
        let candidates = vec![PrefillCandidate {
            id: 0,
            value: 1.0,
            compute_seconds: 0.0,
            memory_blocks: 0,
            prefill_tokens: 0,
        }];
        assert!(select_from_candidates(&candidates, 0.0, 0, 0).is_empty());
    }

    #[test]
    fn selection_ties_break_by_id() {
        let mk = |id| PrefillCandidate { id, value: 1.0, compute_seconds: 0.1, memory_blocks: 1, prefill_tokens: 1 };
        let selected = select_from_candidates(&[mk(4), mk(2), mk(9)], 10.0, 100, 100);
        assert_eq!(selected, vec![2, 4, 9]);
    }

    #[test]
    fn lp_decode_only_when_nothing_waits() {
        let mut inst = InstanceState::new(0, InstanceRole::Lp, params());
        for id in 0..3 {
            inst.kv_blocks_free -= 1;
            inst.insert_decoding(decoding_request(id, 0.0, 10, 1, 1));
        }
        let plan = form_batch_lp(&mut inst, 0.0, &ValuePolicy::Edf, &model(), &arch(), 0.15);
        assert_eq!(plan.decode_selections.len(), 3);
        assert!(plan.prefill_selections.is_empty());
    }

    #[test]
    fn lp_zero_compute_budget_blocks_prefills() {
        let mut inst = InstanceState::new(0, InstanceRole::Lp, params());
        inst.kv_blocks_free -= 1;
        inst.insert_decoding(decoding_request(0, 0.0, 10, 1, 1));
        inst.insert_waiting(request(1, 0.0, 10, 5, 1.0));
        // A tbt_slo of zero leaves no compute headroom for prefill.
        let plan = form_batch_lp(&mut inst, 0.0, &ValuePolicy::Edf, &model(), &arch(), 0.0);
        assert_eq!(plan.decode_selections.len(), 1);
        assert!(plan.prefill_selections.is_empty());
    }

    #[test]
    fn lp_full_batch_leaves_no_prefill_slots() {
        let mut p = params();
        p.max_batch_requests = 4;
        let mut inst = InstanceState::new(0, InstanceRole::Lp, p);
        for id in 0..4 {
            inst.kv_blocks_free -= 1;
            inst.insert_decoding(decoding_request(id, 0.0, 10, 1, 1));
        }
        inst.insert_waiting(request(9, 0.0, 10, 5, 100.0));
        let plan = form_batch_lp(&mut inst, 0.0, &ValuePolicy::Edf, &model(), &arch(), 10.0);
        assert_eq!(plan.decode_selections.len(), 4);
        assert!(plan.prefill_selections.is_empty(), "no slots left at the batch cap");
    }

    #[test]
    fn lp_budget_safety() {
        let mut inst = InstanceState::new(0, InstanceRole::Lp, params());
        for id in 0..20 {
            inst.insert_waiting(request(id, id as f64 * 0.01, 100 + 13 * id, 5, 1.0));
        }
        let free_before = inst.kv_blocks_free;
        let plan = form_batch_lp(&mut inst, 0.0, &ValuePolicy::Edf, &model(), &arch(), 0.15);
        let total_tokens: u64 = plan.prefill_selections.iter().map(|(_, t)| t).sum();
        assert!(total_tokens <= inst.token_budget);
        let allocated: u64 = inst.waiting.iter().map(|r| r.kv_blocks_held).sum();
        assert_eq!(free_before - inst.kv_blocks_free, allocated);
        assert!(allocated <= free_before);
    }

    #[test]
    fn hp_prioritizes_prefill_over_decode() {
        let mut inst = InstanceState::new(0, InstanceRole::Hp, params());
        for id in 0..5 {
            inst.kv_blocks_free -= 1;
            inst.insert_decoding(decoding_request(id, 0.0, 10, 1, 1));
        }
        inst.insert_waiting(request(10, 1.0, 20, 5, 1.0));
        inst.insert_waiting(request(11, 2.0, 30, 5, 1.0));
        let plan = form_batch_hp(&mut inst, 2.0, &model(), &arch());
        assert_eq!(plan.prefill_selections.len(), 2);
        assert!(plan.decode_selections.is_empty(), "decodes stall one batch");

        // Empty waiting queue: decode-only batch over all decodes.
        inst.waiting.clear();
        let plan = form_batch_hp(&mut inst, 3.0, &model(), &arch());
        assert!(plan.prefill_selections.is_empty());
        assert_eq!(plan.decode_selections.len(), 5);
    }

    #[test]
    fn hp_admits_oversized_prompt_alone() {
        let mut inst = InstanceState::new(0, InstanceRole::Hp, params());
        inst.elastic_enabled = false;
        inst.token_budget = 100;
        inst.insert_waiting(request(0, 0.0, 5000, 5, 1.0));
        inst.insert_waiting(request(1, 1.0, 10, 5, 1.0));
        let plan = form_batch_hp(&mut inst, 1.0, &model(), &arch());
        assert_eq!(plan.prefill_selections, vec![(0, 5000)]);
    }

    #[test]
    fn elastic_limit_branches() {
        let mut inst = InstanceState::new(0, InstanceRole::Hp, params());
        // Nearly all memory free, empty history: expansion branch.
        let limit = elastic_limit(&inst);
        assert!(limit > inst.token_budget);

        // Free memory at 5% of total: no expansion.
        let total = inst.kv_blocks_total;
        inst.kv_blocks_free = total / 20;
        assert_eq!(elastic_limit(&inst), inst.token_budget);

        // Ablation switch.
        inst.kv_blocks_free = total;
        inst.elastic_enabled = false;
        assert_eq!(elastic_limit(&inst), inst.token_budget);
    }

    #[test]
    fn preempt_evicts_latest_arrival_and_returns_blocks() {
        let mut inst = InstanceState::new(0, InstanceRole::Lp, params());
        for (id, arrival) in [(0u64, 0.0), (1, 5.0)] {
            inst.kv_blocks_free -= 7;
            let mut r = decoding_request(id, arrival, 100, 3, 7);
            r.tokens_decoded = 3;
            inst.insert_decoding(r);
        }
        let free_before = inst.kv_blocks_free;
        let victim = preempt(&mut inst).unwrap();
        assert_eq!(victim, 1, "LIFO eviction picks the latest arrival");
        assert_eq!(inst.kv_blocks_free, free_before + 7);
        let requeued = inst.waiting.iter().find(|r| r.id == 1).unwrap();
        assert_eq!(requeued.state, RequestState::Queued);
        assert_eq!(requeued.effective_prompt_len, 103);
        assert_eq!(requeued.tokens_prefilled, 0);
        assert_eq!(requeued.preemption_count, 1);

        preempt(&mut inst).unwrap();
        assert_eq!(preempt(&mut inst), Err(SchedulerError::NothingToPreempt));
    }

    #[test]
    fn drop_expired_only_in_drop_mode_and_only_queued() {
        let mut inst = InstanceState::new(0, InstanceRole::Lp, params());
        inst.insert_waiting(request(0, 0.0, 10, 5, 1.0));
        assert!(drop_expired(&mut inst, 100.0).is_empty(), "drop mode off");

        inst.drop_enabled = true;
        inst.insert_waiting(request(1, 0.0, 10, 5, 200.0));
        let mut partial = request(2, 0.0, 10, 5, 1.0);
        partial.transition(RequestState::Prefilling);
        partial.tokens_prefilled = 4;
        inst.insert_waiting(partial);
        let dropped = drop_expired(&mut inst, 100.0);
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped[0].id, 0);
        assert_eq!(dropped[0].state, RequestState::Dropped);
        assert_eq!(inst.waiting.len(), 2, "unexpired and mid-prefill requests stay");
    }

    #[test]
    fn offload_threshold_boundary() {
        let m = model();
        let a = arch();
        let mut inst = InstanceState::new(0, InstanceRole::Lp, params());
        let predictor = Predictor { model: &m, arch: &a, block_size_tokens: 16 };
        let hp_budget = 2048;
        let worst = m.worst_case_batch_latency(&a, hp_budget).unwrap();

        // Request with 100 s of slack is not offloaded at margin 0.
        inst.insert_waiting(request(0, 0.0, 100, 5, 100.0));
        assert!(flag_offloads(&mut inst, 0.0, &m, &a, hp_budget, 0.0).is_empty());

        // Slack exactly at the threshold offloads (<= comparison).
        let req = request(1, 0.0, 100, 5, 1.0);
        let threshold = predictor.prefill_seconds(&req) + worst;
        let now = req.deadline() - threshold;
        inst.insert_waiting(req);
        let moved = flag_offloads(&mut inst, now, &m, &a, hp_budget, 0.0);
        assert_eq!(moved, vec![1]);
        assert_eq!(inst.offload_outbox.len(), 1);

        // Epsilon more slack stays put.
        inst.insert_waiting(request(2, 0.0, 100, 5, 1.0));
        let moved = flag_offloads(&mut inst, now - 1e-6, &m, &a, hp_budget, 0.0);
        assert!(moved.is_empty());

        // Infinite margin offloads everything queued.
        let moved = flag_offloads(&mut inst, 0.0, &m, &a, hp_budget, f64::INFINITY);
        assert_eq!(moved.len(), 2);
    }

    #[test]
    fn offload_skips_started_prefills() {
        let m = model();
        let a = arch();
        let mut inst = InstanceState::new(0, InstanceRole::Lp, params());
        let mut partial = request(0, 0.0, 100, 5, 1.0);
        partial.transition(RequestState::Prefilling);
        partial.tokens_prefilled = 10;
        inst.insert_waiting(partial);
        let moved = flag_offloads(&mut inst, 1e9, &m, &a, 2048, f64::INFINITY);
        assert!(moved.is_empty());
    }

    #[test]
    fn vllm_like_is_fcfs_and_deterministic() {
        let m = model();
        let a = arch();
        let mk = || {
            let mut inst = InstanceState::new(0, InstanceRole::Lp, params());
            inst.insert_waiting(request(1, 0.3, 50, 5, 1.0));
            inst.insert_waiting(request(0, 0.1, 700, 5, 1.0));
            inst.insert_waiting(request(2, 0.9, 60, 5, 1.0));
            inst
        };
        let mut inst = mk();
        let plan = form_batch_vllm_like(&mut inst, 1.0, &m, &a);
        let order: Vec<u64> = plan.prefill_selections.iter().map(|(id, _)| *id).collect();
        assert_eq!(order, vec![0, 1, 2], "admission follows arrival order");
        let mut inst2 = mk();
        assert_eq!(form_batch_vllm_like(&mut inst2, 1.0, &m, &a), plan);
    }

    #[test]
    fn sarathi_chunks_head_of_queue() {
        let m = model();
        let a = arch();
        let mut p = params();
        p.token_budget = 512;
        let mut inst = InstanceState::new(0, InstanceRole::Lp, p);
        inst.insert_waiting(request(0, 0.0, 2000, 5, 1.0));
        inst.insert_waiting(request(1, 0.5, 100, 5, 1.0));

        let plan = form_batch_sarathi_like(&mut inst, 1.0, &m, &a);
        assert_eq!(plan.prefill_selections, vec![(0, 512)]);
        let chunk = &plan.composition.as_ref().unwrap().prefill_chunks[0];
        assert_eq!(chunk.processed_len, 0);
        assert_eq!(chunk.chunk_len, 512);

        // The chunk persists until the prompt completes.
        inst.waiting[0].transition(RequestState::Prefilling);
        inst.waiting[0].tokens_prefilled = 512;
        let plan = form_batch_sarathi_like(&mut inst, 2.0, &m, &a);
        assert_eq!(plan.prefill_selections, vec![(0, 512)]);
        let chunk = &plan.composition.as_ref().unwrap().prefill_chunks[0];
        assert_eq!(chunk.processed_len, 512);

        // A short prompt that fits the leftover budget joins the same batch.
        inst.waiting[0].tokens_prefilled = 1900;
        let plan = form_batch_sarathi_like(&mut inst, 3.0, &m, &a);
        assert_eq!(plan.prefill_selections, vec![(0, 100), (1, 100)]);
    }

    #[test]
    fn sarathi_pure_decode_when_queue_empty() {
        let m = model();
        let a = arch();
        let mut inst = InstanceState::new(0, InstanceRole::Lp, params());
        inst.kv_blocks_free -= 1;
        inst.insert_decoding(decoding_request(0, 0.0, 10, 1, 1));
        let plan = form_batch_sarathi_like(&mut inst, 1.0, &m, &a);
        assert!(plan.prefill_selections.is_empty());
        assert_eq!(plan.decode_selections, vec![0]);
    }

    #[test]
    fn decode_admission_preempts_when_memory_short() {
        let mut p = params();
        p.kv_blocks_total = 20;
        let mut inst = InstanceState::new(0, InstanceRole::Lp, p);
        // Three decodes, each holding 6 blocks (96 tokens of KV) and about
        // to cross a block boundary (footprint 96 -> a 7th block each).
        for (id, arrival) in [(0u64, 0.0), (1, 1.0), (2, 2.0)] {
            inst.kv_blocks_free -= 6;
            inst.insert_decoding(decoding_request(id, arrival, 90, 6, 6));
        }
        assert_eq!(inst.kv_blocks_free, 2);
        // Growth needs 3 blocks but only 2 are free: the newest decode is
        // evicted, returning its 6 blocks.
        let plan = form_batch_lp(&mut inst, 3.0, &ValuePolicy::Edf, &model(), &arch(), 0.0);
        assert_eq!(plan.decode_selections, vec![0, 1]);
        assert!(inst.waiting.iter().any(|r| r.id == 2 && r.preemption_count == 1));
        let held: u64 = inst
            .decoding
            .iter()
            .chain(inst.waiting.iter())
            .map(|r| r.kv_blocks_held)
            .sum();
        assert_eq!(held + inst.kv_blocks_free, 20);
    }
}
