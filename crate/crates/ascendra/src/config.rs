//! Experiment configuration: a TOML file with `[arch]`, `[topology]`,
//! `[slo]`, `[scheduler]`, `[workload]`, and `[engine]` sections, plus the
//! preset tables for model shapes, SLO targets, and synthetic workloads.
//!
//! Unknown keys are hard errors. Every run-affecting knob lives here; CLI
//! flags only override config fields, so a resolved config (and its hash)
//! fully determines a run.

use crate::cost_model::{CostModelError, ModelArch};
use crate::latency_model::{HardwareCaps, LatencyModel};
use crate::scheduler::{InstanceParams, InstanceRole, ValuePolicy};
use crate::workload::{LengthDist, SloSpec, SynthSpec};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown {kind} preset {name:?}; run the presets subcommand to list them")]
    UnknownPreset { kind: &'static str, name: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Arch(#[from] CostModelError),
}

/// Scheduler implementation under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerVariant {
    /// Two-tier LP/HP with out-of-order selection and offloading.
    Ascendra,
    /// Prefill-prioritizing FCFS baseline.
    Vllm,
    /// Chunked-prefill piggybacking baseline.
    Sarathi,
}

impl FromStr for SchedulerVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ascendra" => Ok(SchedulerVariant::Ascendra),
            "vllm" => Ok(SchedulerVariant::Vllm),
            "sarathi" => Ok(SchedulerVariant::Sarathi),
            other => Err(format!("unknown scheduler {other:?} (expected ascendra|vllm|sarathi)")),
        }
    }
}

impl std::fmt::Display for SchedulerVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            SchedulerVariant::Ascendra => "ascendra",
            SchedulerVariant::Vllm => "vllm",
            SchedulerVariant::Sarathi => "sarathi",
        };
        f.write_str(name)
    }
}

/// Value policy selected by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyName {
    Edf,
    Sjf,
    Fcfs,
    Ljf,
}

impl PolicyName {
    pub fn to_policy(self) -> ValuePolicy {
        match self {
            PolicyName::Edf => ValuePolicy::Edf,
            PolicyName::Sjf => ValuePolicy::Sjf,
            PolicyName::Fcfs => ValuePolicy::Fcfs,
            PolicyName::Ljf => ValuePolicy::Ljf,
        }
    }
}

impl FromStr for PolicyName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "edf" => Ok(PolicyName::Edf),
            "sjf" => Ok(PolicyName::Sjf),
            "fcfs" => Ok(PolicyName::Fcfs),
            "ljf" => Ok(PolicyName::Ljf),
            other => Err(format!("unknown policy {other:?} (expected edf|sjf|fcfs|ljf)")),
        }
    }
}

impl std::fmt::Display for PolicyName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            PolicyName::Edf => "edf",
            PolicyName::Sjf => "sjf",
            PolicyName::Fcfs => "fcfs",
            PolicyName::Ljf => "ljf",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleName {
    Lp,
    Hp,
}

impl RoleName {
    pub fn to_role(self) -> InstanceRole {
        match self {
            RoleName::Lp => InstanceRole::Lp,
            RoleName::Hp => InstanceRole::Hp,
        }
    }
}

// -- sections ---------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    pub preset: Option<String>,
    pub hidden_size: Option<u64>,
    pub num_heads: Option<u64>,
    pub head_size: Option<u64>,
    pub num_kv_heads: Option<u64>,
    pub ffn_intermediate: Option<u64>,
    pub num_layers: Option<u64>,
    pub attn_block_size: Option<u64>,
    pub dtype_bytes: Option<u64>,
    pub tp_degree: Option<u64>,
}

fn default_kv_blocks() -> u64 {
    25_000
}
fn default_block_size() -> u64 {
    16
}
fn default_max_batch() -> usize {
    128
}
fn default_token_budget() -> u64 {
    2048
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub role: RoleName,
    #[serde(default = "default_kv_blocks")]
    pub kv_blocks_total: u64,
    #[serde(default = "default_block_size")]
    pub block_size_tokens: u64,
    #[serde(default = "default_max_batch")]
    pub max_batch_requests: usize,
    #[serde(default = "default_token_budget")]
    pub token_budget: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    #[serde(default)]
    pub instances: Vec<InstanceSpec>,
    #[serde(default)]
    pub offload_transfer_delay_s: f64,
}

fn default_slo_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SloSection {
    pub preset: Option<String>,
    pub ttft_slo: Option<f64>,
    pub tbt_slo: Option<f64>,
    #[serde(default = "default_slo_scale")]
    pub slo_scale: f64,
}

impl Default for SloSection {
    fn default() -> Self {
        SloSection {
            preset: None,
            ttft_slo: None,
            tbt_slo: None,
            slo_scale: 1.0,
        }
    }
}

fn default_true() -> bool {
    true
}
fn default_offload_margin() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSection {
    #[serde(default = "default_variant")]
    pub variant: SchedulerVariant,
    #[serde(default = "default_policy")]
    pub policy: PolicyName,
    #[serde(default)]
    pub drop: bool,
    #[serde(default = "default_true")]
    pub elastic: bool,
    #[serde(default = "default_true")]
    pub tickets: bool,
    #[serde(default = "default_true")]
    pub offload: bool,
    #[serde(default = "default_offload_margin")]
    pub offload_margin_s: f64,
}

fn default_variant() -> SchedulerVariant {
    SchedulerVariant::Ascendra
}
fn default_policy() -> PolicyName {
    PolicyName::Edf
}

impl Default for SchedulerSection {
    fn default() -> Self {
        SchedulerSection {
            variant: default_variant(),
            policy: default_policy(),
            drop: false,
            elastic: true,
            tickets: true,
            offload: true,
            offload_margin_s: default_offload_margin(),
        }
    }
}

fn default_qps() -> f64 {
    2.0
}
fn default_duration() -> f64 {
    120.0
}
fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    #[serde(default = "default_qps")]
    pub qps: f64,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Two-column trace file (prompt_len, output_len per line).
    pub trace: Option<PathBuf>,
    /// Inline synthetic length distributions.
    pub synth: Option<SynthSpec>,
    /// Named synthetic workload shape; the default when nothing is given.
    pub synth_preset: Option<String>,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        WorkloadSection {
            qps: default_qps(),
            duration_s: default_duration(),
            seed: default_seed(),
            trace: None,
            synth: None,
            synth_preset: None,
        }
    }
}

fn default_warmup() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencySection {
    /// Regression coefficients (sum, max, t_M, t_F, intercept).
    #[serde(default = "default_coeffs")]
    pub coeffs: [f64; 5],
    #[serde(default = "default_flops_cap")]
    pub flops_cap: f64,
    #[serde(default = "default_mem_bw")]
    pub mem_bw: f64,
    /// Fitted model file (as written by the fit-model subcommand);
    /// overrides the inline coefficients and caps.
    pub model_file: Option<PathBuf>,
}

fn default_coeffs() -> [f64; 5] {
    LatencyModel::synthetic_default(HardwareCaps::A100_80G).coeffs
}
fn default_flops_cap() -> f64 {
    HardwareCaps::A100_80G.flops_per_sec
}
fn default_mem_bw() -> f64 {
    HardwareCaps::A100_80G.mem_bytes_per_sec
}

impl Default for LatencySection {
    fn default() -> Self {
        LatencySection {
            coeffs: default_coeffs(),
            flops_cap: default_flops_cap(),
            mem_bw: default_mem_bw(),
            model_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    #[serde(default = "default_warmup")]
    pub warmup_s: f64,
    #[serde(default)]
    pub event_log: bool,
    /// Per-event conservation and ledger checks.
    #[serde(default = "default_true")]
    pub strict_checks: bool,
    #[serde(default)]
    pub latency: LatencySection,
}

impl Default for EngineSection {
    fn default() -> Self {
        EngineSection {
            warmup_s: default_warmup(),
            event_log: false,
            strict_checks: true,
            latency: LatencySection::default(),
        }
    }
}

/// A complete experiment description.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub arch: ArchSection,
    #[serde(default)]
    pub topology: TopologySection,
    #[serde(default)]
    pub slo: SloSection,
    #[serde(default)]
    pub scheduler: SchedulerSection,
    #[serde(default)]
    pub workload: WorkloadSection,
    #[serde(default)]
    pub engine: EngineSection,
}

/// CLI-level overrides applied on top of a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub qps: Option<f64>,
    pub seed: Option<u64>,
    pub duration_s: Option<f64>,
    pub scheduler: Option<SchedulerVariant>,
    pub policy: Option<PolicyName>,
    pub slo_scale: Option<f64>,
    pub drop: Option<bool>,
    pub elastic: Option<bool>,
    pub tickets: Option<bool>,
    pub event_log: Option<bool>,
}

// -- presets ----------------------------------------------------------------

/// Model shape presets.
pub fn arch_preset(name: &str) -> Option<ModelArch> {
    let shape = |hidden, heads, kv, ffn, layers| ModelArch {
        hidden_size: hidden,
        num_heads: heads,
        head_size: hidden / heads,
        num_kv_heads: kv,
        ffn_intermediate: ffn,
        num_layers: layers,
        attn_block_size: 128,
        dtype_bytes: 2,
        tp_degree: 1,
    };
    match name.to_ascii_lowercase().as_str() {
        "mistral-7b" => Some(shape(4096, 32, 8, 14336, 32)),
        "llama3.1-8b" => Some(shape(4096, 32, 8, 14336, 32)),
        "qwen-14b" => Some(shape(5120, 40, 40, 13696, 40)),
        _ => None,
    }
}

pub const ARCH_PRESETS: &[&str] = &["mistral-7b", "llama3.1-8b", "qwen-14b"];

/// (TTFT, TBT) SLO presets per (model, dataset) pair.
pub fn slo_preset(name: &str) -> Option<(f64, f64)> {
    match name.to_ascii_lowercase().as_str() {
        "mistral7b-sharegpt" | "llama3.1-8b-sharegpt" => Some((1.0, 0.15)),
        "mistral7b-longbench" | "llama3.1-8b-longbench" => Some((2.5, 0.15)),
        "qwen14b-sharegpt" => Some((1.5, 0.15)),
        "qwen14b-longbench" => Some((3.0, 0.15)),
        _ => None,
    }
}

pub const SLO_PRESETS: &[&str] = &[
    "mistral7b-sharegpt",
    "mistral7b-longbench",
    "llama3.1-8b-sharegpt",
    "llama3.1-8b-longbench",
    "qwen14b-sharegpt",
    "qwen14b-longbench",
];

/// Synthetic workload shapes: chat-style short prompts with mid-length
/// responses, and summarization-style long prompts with short, low-variance
/// responses.
pub fn synth_preset(name: &str) -> Option<SynthSpec> {
    match name.to_ascii_lowercase().as_str() {
        "sharegpt-like" => Some(SynthSpec {
            prompt: LengthDist::Lognormal { mu: 5.4, sigma: 0.9 },
            output: LengthDist::Lognormal { mu: 5.1, sigma: 0.7 },
            max_len: 4096,
        }),
        "longbench-like" => Some(SynthSpec {
            prompt: LengthDist::Lognormal { mu: 8.0, sigma: 0.7 },
            output: LengthDist::Lognormal { mu: 4.6, sigma: 0.35 },
            max_len: 16384,
        }),
        _ => None,
    }
}

pub const SYNTH_PRESETS: &[&str] = &["sharegpt-like", "longbench-like"];

/// On-disk format of a fitted latency model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModelFile {
    pub coeffs: [f64; 5],
    pub flops_cap: f64,
    pub mem_bw: f64,
}

impl From<LatencyModelFile> for LatencyModel {
    fn from(file: LatencyModelFile) -> Self {
        LatencyModel {
            coeffs: file.coeffs,
            caps: HardwareCaps {
                flops_per_sec: file.flops_cap,
                mem_bytes_per_sec: file.mem_bw,
            },
        }
    }
}

impl From<LatencyModel> for LatencyModelFile {
    fn from(model: LatencyModel) -> Self {
        LatencyModelFile {
            coeffs: model.coeffs,
            flops_cap: model.caps.flops_per_sec,
            mem_bw: model.caps.mem_bytes_per_sec,
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: SimConfig = toml::from_str(text)?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn apply_overrides(&mut self, overrides: &Overrides) {
        if let Some(qps) = overrides.qps {
            self.workload.qps = qps;
        }
        if let Some(seed) = overrides.seed {
            self.workload.seed = seed;
        }
        if let Some(duration) = overrides.duration_s {
            self.workload.duration_s = duration;
        }
        if let Some(variant) = overrides.scheduler {
            self.scheduler.variant = variant;
        }
        if let Some(policy) = overrides.policy {
            self.scheduler.policy = policy;
        }
        if let Some(scale) = overrides.slo_scale {
            self.slo.slo_scale = scale;
        }
        if let Some(drop) = overrides.drop {
            self.scheduler.drop = drop;
        }
        if let Some(elastic) = overrides.elastic {
            self.scheduler.elastic = elastic;
        }
        if let Some(tickets) = overrides.tickets {
            self.scheduler.tickets = tickets;
        }
        if let Some(event_log) = overrides.event_log {
            self.engine.event_log = event_log;
        }
    }

    /// Model shape after preset resolution and field overrides.
    pub fn resolved_arch(&self) -> Result<ModelArch, ConfigError> {
        let a = &self.arch;
        let mut arch = match &a.preset {
            Some(name) => arch_preset(name).ok_or_else(|| ConfigError::UnknownPreset {
                kind: "arch",
                name: name.clone(),
            })?,
            None => {
                let required = |field: Option<u64>, name: &str| {
                    field.ok_or_else(|| {
                        ConfigError::Invalid(format!("[arch] needs a preset or an explicit {name}"))
                    })
                };
                let hidden_size = required(a.hidden_size, "hidden_size")?;
                let num_heads = required(a.num_heads, "num_heads")?;
                ModelArch {
                    hidden_size,
                    num_heads,
                    head_size: required(a.head_size.or(Some(hidden_size / num_heads.max(1))), "head_size")?,
                    num_kv_heads: a.num_kv_heads.unwrap_or(num_heads),
                    ffn_intermediate: required(a.ffn_intermediate, "ffn_intermediate")?,
                    num_layers: required(a.num_layers, "num_layers")?,
                    attn_block_size: a.attn_block_size.unwrap_or(128),
                    dtype_bytes: a.dtype_bytes.unwrap_or(2),
                    tp_degree: a.tp_degree.unwrap_or(1),
                }
            }
        };
        if a.preset.is_some() {
            // Individual fields may override preset values.
            if let Some(v) = a.hidden_size {
                arch.hidden_size = v;
            }
            if let Some(v) = a.num_heads {
                arch.num_heads = v;
            }
            if let Some(v) = a.head_size {
                arch.head_size = v;
            }
            if let Some(v) = a.num_kv_heads {
                arch.num_kv_heads = v;
            }
            if let Some(v) = a.ffn_intermediate {
                arch.ffn_intermediate = v;
            }
            if let Some(v) = a.num_layers {
                arch.num_layers = v;
            }
            if let Some(v) = a.attn_block_size {
                arch.attn_block_size = v;
            }
            if let Some(v) = a.dtype_bytes {
                arch.dtype_bytes = v;
            }
            if let Some(v) = a.tp_degree {
                arch.tp_degree = v;
            }
        }
        arch.validate()?;
        arch.apply_tensor_parallel()?; // fail fast on a bad TP split
        Ok(arch)
    }

    pub fn resolved_slo(&self) -> Result<SloSpec, ConfigError> {
        let s = &self.slo;
        let (ttft, tbt) = match &s.preset {
            Some(name) => slo_preset(name).ok_or_else(|| ConfigError::UnknownPreset {
                kind: "slo",
                name: name.clone(),
            })?,
            None => {
                let ttft = s.ttft_slo.ok_or_else(|| {
                    ConfigError::Invalid("[slo] needs a preset or an explicit ttft_slo".into())
                })?;
                let tbt = s.tbt_slo.ok_or_else(|| {
                    ConfigError::Invalid("[slo] needs a preset or an explicit tbt_slo".into())
                })?;
                (ttft, tbt)
            }
        };
        let (ttft, tbt) = (s.ttft_slo.unwrap_or(ttft), s.tbt_slo.unwrap_or(tbt));
        if !(ttft > 0.0) || !(tbt > 0.0) || !(s.slo_scale > 0.0) {
            return Err(ConfigError::Invalid(
                "[slo] targets and slo_scale must be positive".into(),
            ));
        }
        Ok(SloSpec::new(ttft, tbt).with_scale(s.slo_scale))
    }

    pub fn resolved_synth(&self) -> Result<Option<SynthSpec>, ConfigError> {
        let w = &self.workload;
        match (&w.trace, &w.synth, &w.synth_preset) {
            (Some(_), None, None) => Ok(None),
            (None, Some(spec), None) => Ok(Some(*spec)),
            (None, None, Some(name)) => Ok(Some(synth_preset(name).ok_or_else(|| {
                ConfigError::UnknownPreset {
                    kind: "synth workload",
                    name: name.clone(),
                }
            })?)),
            (None, None, None) => Ok(Some(synth_preset("sharegpt-like").unwrap())),
            _ => Err(ConfigError::Invalid(
                "[workload] trace, synth, and synth_preset are mutually exclusive".into(),
            )),
        }
    }

    /// Latency model from a fitted model file when given, else the inline
    /// coefficients and caps.
    pub fn resolved_latency_model(&self) -> Result<LatencyModel, ConfigError> {
        let section = &self.engine.latency;
        if let Some(path) = &section.model_file {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let file: LatencyModelFile = toml::from_str(&text)?;
            return Ok(file.into());
        }
        Ok(LatencyModel {
            coeffs: section.coeffs,
            caps: HardwareCaps {
                flops_per_sec: section.flops_cap,
                mem_bytes_per_sec: section.mem_bw,
            },
        })
    }

    pub fn instance_roles(&self) -> Vec<InstanceRole> {
        self.topology.instances.iter().map(|i| i.role.to_role()).collect()
    }

    pub fn instance_params(&self, idx: usize) -> InstanceParams {
        let spec = &self.topology.instances[idx];
        InstanceParams {
            kv_blocks_total: spec.kv_blocks_total,
            block_size_tokens: spec.block_size_tokens,
            max_batch_requests: spec.max_batch_requests,
            token_budget: spec.token_budget,
            elastic_enabled: self.scheduler.elastic,
            drop_enabled: self.scheduler.drop,
        }
    }

    /// Full validation; every run calls this before anything else.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.resolved_arch()?;
        self.resolved_slo()?;
        self.resolved_synth()?;
        if self.topology.instances.is_empty() {
            return Err(ConfigError::Invalid("[topology] needs at least one instance".into()));
        }
        for (i, inst) in self.topology.instances.iter().enumerate() {
            if inst.kv_blocks_total == 0
                || inst.block_size_tokens == 0
                || inst.max_batch_requests == 0
                || inst.token_budget == 0
            {
                return Err(ConfigError::Invalid(format!(
                    "[topology] instance {i}: limits must be strictly positive"
                )));
            }
        }
        if self.topology.offload_transfer_delay_s < 0.0 {
            return Err(ConfigError::Invalid(
                "[topology] offload_transfer_delay_s must be >= 0".into(),
            ));
        }
        let hp_count = self
            .topology
            .instances
            .iter()
            .filter(|i| i.role == RoleName::Hp)
            .count();
        let lp_count = self.topology.instances.len() - hp_count;
        if self.scheduler.variant == SchedulerVariant::Ascendra {
            if lp_count == 0 {
                return Err(ConfigError::Invalid(
                    "ascendra topology needs at least one LP instance to route arrivals".into(),
                ));
            }
            if self.scheduler.offload && hp_count == 0 {
                return Err(ConfigError::Invalid(
                    "offloading requires an HP instance; LP-only configs must disable offload".into(),
                ));
            }
            if self.scheduler.tickets && hp_count == 0 {
                return Err(ConfigError::Invalid(
                    "ticket entry requires an HP instance".into(),
                ));
            }
        }
        if self.scheduler.offload_margin_s < 0.0 {
            return Err(ConfigError::Invalid("offload_margin_s must be >= 0".into()));
        }
        let w = &self.workload;
        if w.qps < 0.0 || w.duration_s < 0.0 {
            return Err(ConfigError::Invalid(
                "[workload] qps and duration_s must be >= 0".into(),
            ));
        }
        if self.engine.warmup_s < 0.0 {
            return Err(ConfigError::Invalid("[engine] warmup_s must be >= 0".into()));
        }
        let lat = &self.engine.latency;
        if lat.model_file.is_none() && (!(lat.flops_cap > 0.0) || !(lat.mem_bw > 0.0)) {
            return Err(ConfigError::Invalid(
                "[engine.latency] flops_cap and mem_bw must be positive".into(),
            ));
        }
        Ok(())
    }

    /// FNV-1a hash of the canonical TOML serialization; embedded in result
    /// rows so a table row can be traced back to an exact configuration.
    pub fn config_hash(&self) -> u64 {
        let text = toml::to_string(self).expect("config serializes");
        let mut hash: u64 = 0xcbf29ce484222325;
        for byte in text.as_bytes() {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(0x100000001b3);
        }
        hash
    }
}

/// A minimal two-LP one-HP starting configuration.
pub fn example_config_toml() -> &'static str {
    r#"[arch]
preset = "mistral-7b"

[topology]
instances = [
    { role = "lp" },
    { role = "lp" },
    { role = "hp" },
]

[slo]
preset = "mistral7b-sharegpt"

[scheduler]
variant = "ascendra"
policy = "edf"

[workload]
qps = 2.0
duration_s = 120.0
seed = 1
synth_preset = "sharegpt-like"

[engine]
warmup_s = 30.0
"#
}
