//! Request streams: trace ingestion, synthetic length distributions, Poisson
//! arrivals, SLO assignment, and the request lifecycle type.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("trace file {path}, line {line}: {message}")]
    TraceParse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("trace file {path} is empty")]
    EmptyTrace { path: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
}

/// Lifecycle states of a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestState {
    Queued,
    Prefilling,
    Decoding,
    Completed,
    Dropped,
}

/// One inference job moving through the simulated system.
///
/// `output_len` is ground truth hidden from schedulers: the engine consults
/// it to decide when decoding finishes, and metrics read it afterwards, but
/// batch-formation code must not (real schedulers cannot know how long a
/// response will run).
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: u64,
    pub arrival_time: f64,
    pub prompt_len: u64,
    output_len: u64,
    pub ttft_slo: f64,
    pub tbt_slo: f64,
    pub state: RequestState,
    /// Tokens of the (effective) prompt processed so far.
    pub tokens_prefilled: u64,
    /// Response tokens emitted so far; the prefill pass emits the first.
    pub tokens_decoded: u64,
    pub first_token_time: Option<f64>,
    pub completion_time: Option<f64>,
    /// When prefill work first started; scheduling delay is measured to here.
    pub prefill_start_time: Option<f64>,
    /// When the request entered its current instance's waiting queue
    /// (arrival time, or offload-arrival time after a transfer).
    pub queue_entered_time: f64,
    pub home_instance: Option<usize>,
    pub offloaded: bool,
    pub preemption_count: u32,
    /// Prompt length to prefill, including tokens regenerated after
    /// preemption-by-recompute.
    pub effective_prompt_len: u64,
    /// KV blocks currently held on the owning instance.
    pub kv_blocks_held: u64,
    /// Inter-token latency samples observed (first token excluded).
    pub tbt_samples: u64,
}

impl Request {
    pub fn new(id: u64, arrival_time: f64, prompt_len: u64, output_len: u64, slo: &SloSpec) -> Self {
        assert!(prompt_len >= 1 && output_len >= 1, "lengths must be >= 1");
        Request {
            id,
            arrival_time,
            prompt_len,
            output_len,
            ttft_slo: slo.scaled_ttft(),
            tbt_slo: slo.scaled_tbt(),
            state: RequestState::Queued,
            tokens_prefilled: 0,
            tokens_decoded: 0,
            first_token_time: None,
            completion_time: None,
            prefill_start_time: None,
            queue_entered_time: arrival_time,
            home_instance: None,
            offloaded: false,
            preemption_count: 0,
            effective_prompt_len: prompt_len,
            kv_blocks_held: 0,
            tbt_samples: 0,
        }
    }

    /// Ground-truth response length. Engine and metrics only; scheduling
    /// decisions must not depend on it.
    pub fn output_len(&self) -> u64 {
        self.output_len
    }

    /// TTFT deadline, derived, never stored.
    pub fn deadline(&self) -> f64 {
        self.arrival_time + self.ttft_slo
    }

    /// Tokens whose KV must be resident: the original prompt plus every
    /// response token emitted so far (regenerated tokens fold into the
    /// effective prompt, so this is preemption-invariant).
    pub fn kv_token_footprint(&self) -> u64 {
        self.prompt_len + self.tokens_decoded
    }

    /// Attention context length for the next decode step.
    pub fn decode_context_len(&self) -> u64 {
        self.kv_token_footprint()
    }

    /// Move to a new lifecycle state, asserting the transition is one the
    /// simulator is allowed to make.
    pub fn transition(&mut self, to: RequestState) {
        use RequestState::*;
        let ok = matches!(
            (self.state, to),
            (Queued, Prefilling)
                | (Queued, Dropped)
                | (Prefilling, Decoding)
                | (Prefilling, Queued)
                | (Decoding, Queued)
                | (Decoding, Completed)
        );
        assert!(
            ok,
            "illegal request state transition {:?} -> {:?} (request {})",
            self.state, to, self.id
        );
        self.state = to;
    }
}

/// One trace row: prompt and response lengths in tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub prompt_len: u64,
    pub output_len: u64,
}

/// SLO targets plus a scale knob for strictness sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SloSpec {
    pub ttft_slo: f64,
    pub tbt_slo: f64,
    pub slo_scale: f64,
}

impl SloSpec {
    pub fn new(ttft_slo: f64, tbt_slo: f64) -> Self {
        SloSpec {
            ttft_slo,
            tbt_slo,
            slo_scale: 1.0,
        }
    }

    pub fn with_scale(self, slo_scale: f64) -> Self {
        SloSpec { slo_scale, ..self }
    }

    pub fn scaled_ttft(&self) -> f64 {
        self.ttft_slo * self.slo_scale
    }

    pub fn scaled_tbt(&self) -> f64 {
        self.tbt_slo * self.slo_scale
    }
}

/// Poisson arrival times: sorted, in `[0, duration_s)`, i.i.d. exponential
/// gaps, deterministic for a fixed seed.
pub fn poisson_arrivals(rate_qps: f64, duration_s: f64, seed: u64) -> Vec<f64> {
    assert!(rate_qps >= 0.0 && duration_s >= 0.0);
    if rate_qps == 0.0 || duration_s == 0.0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exp = Exp::new(rate_qps).expect("positive rate");
    let mut times = Vec::with_capacity((rate_qps * duration_s * 1.1) as usize + 4);
    let mut t = 0.0;
    loop {
        t += exp.sample(&mut rng);
        if t >= duration_s {
            break;
        }
        times.push(t);
    }
    times
}

/// Length distribution for synthetic traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LengthDist {
    Lognormal { mu: f64, sigma: f64 },
    Uniform { lo: u64, hi: u64 },
    Fixed { value: u64 },
}

impl LengthDist {
    fn validate(&self) -> Result<(), WorkloadError> {
        match *self {
            LengthDist::Lognormal { sigma, mu } => {
                if !(sigma > 0.0) || !mu.is_finite() {
                    return Err(WorkloadError::InvalidDistribution(format!(
                        "lognormal needs finite mu and sigma > 0, got mu={mu}, sigma={sigma}"
                    )));
                }
            }
            LengthDist::Uniform { lo, hi } => {
                if lo < 1 || hi < lo {
                    return Err(WorkloadError::InvalidDistribution(format!(
                        "uniform needs 1 <= lo <= hi, got lo={lo}, hi={hi}"
                    )));
                }
            }
            LengthDist::Fixed { value } => {
                if value < 1 {
                    return Err(WorkloadError::InvalidDistribution(
                        "fixed length must be >= 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng, max_len: u64) -> u64 {
        let raw = match *self {
            LengthDist::Lognormal { mu, sigma } => {
                let dist = LogNormal::new(mu, sigma).expect("validated");
                dist.sample(rng).round() as i64
            }
            LengthDist::Uniform { lo, hi } => rng.gen_range(lo..=hi) as i64,
            LengthDist::Fixed { value } => value as i64,
        };
        (raw.max(1) as u64).min(max_len)
    }
}

fn default_max_len() -> u64 {
    8192
}

/// Synthetic trace shape: independent prompt and output length
/// distributions, clamped to `[1, max_len]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub prompt: LengthDist,
    pub output: LengthDist,
    #[serde(default = "default_max_len")]
    pub max_len: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        self.prompt.validate()?;
        self.output.validate()?;
        if self.max_len < 1 {
            return Err(WorkloadError::InvalidDistribution(
                "max_len must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Draw `count` synthetic trace entries; deterministic for a fixed seed.
pub fn synth_trace(spec: &SynthSpec, count: usize, seed: u64) -> Result<Vec<TraceEntry>, WorkloadError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| TraceEntry {
            prompt_len: spec.prompt.sample(&mut rng, spec.max_len),
            output_len: spec.output.sample(&mut rng, spec.max_len),
        })
        .collect())
}

/// Parse a two-column trace (`prompt_len,output_len` per line, comma or
/// whitespace separated, optional header row).
pub fn parse_trace(text: &str, path: &str) -> Result<Vec<TraceEntry>, WorkloadError> {
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if idx == 0 && fields.first().is_some_and(|f| f.parse::<i64>().is_err()) {
            continue; // header
        }
        if fields.len() != 2 {
            return Err(WorkloadError::TraceParse {
                path: path.to_string(),
                line: line_no,
                message: format!("expected 2 columns, got {}", fields.len()),
            });
        }
        let parse = |s: &str, name: &str| -> Result<u64, WorkloadError> {
            let v: i64 = s.parse().map_err(|_| WorkloadError::TraceParse {
                path: path.to_string(),
                line: line_no,
                message: format!("cannot parse {name} from {s:?}"),
            })?;
            if v < 1 {
                return Err(WorkloadError::TraceParse {
                    path: path.to_string(),
                    line: line_no,
                    message: format!("{name} must be >= 1, got {v}"),
                });
            }
            Ok(v as u64)
        };
        entries.push(TraceEntry {
            prompt_len: parse(fields[0], "prompt_len")?,
            output_len: parse(fields[1], "output_len")?,
        });
    }
    if entries.is_empty() {
        return Err(WorkloadError::EmptyTrace {
            path: path.to_string(),
        });
    }
    Ok(entries)
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceEntry>, WorkloadError> {
    let text = std::fs::read_to_string(path).map_err(|source| WorkloadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_trace(&text, &path.display().to_string())
}

/// Pair trace entries with arrival times and SLOs. Entries are consumed in
/// order; if the trace is shorter than the arrival list, entries are sampled
/// with replacement under `seed`.
pub fn build_requests(entries: &[TraceEntry], arrivals: &[f64], slo: &SloSpec, seed: u64) -> Vec<Request> {
    assert!(!entries.is_empty() || arrivals.is_empty(), "no trace entries");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    arrivals
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let entry = if i < entries.len() {
                entries[i]
            } else {
                entries[rng.gen_range(0..entries.len())]
            };
            Request::new(i as u64, t, entry.prompt_len, entry.output_len, slo)
        })
        .collect()
}
