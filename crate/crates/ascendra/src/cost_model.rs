//! Analytical FLOPs and memory-access accounting for transformer batches.
//!
//! The forward pass of one decoder layer is split into GEMM work (QKV
//! projection, attention output projection, and the two FFN projections) and
//! the attention kernel itself, which streams K/V through SRAM in blocks of
//! `attn_block_size` tokens. Counting multiply-adds and HBM traffic for each
//! piece gives closed forms per batch shape:
//!
//! * **Prefill** of a prompt with `p` tokens: GEMM terms are linear in the
//!   total token count `t`, attention costs `2·p²·s` flops per head and
//!   `(2·p·s + 3·p·s·ceil(p/b))` element transfers per head.
//! * **Decode** of a request with context `l`: GEMM terms are linear in the
//!   number of decode rows, attention costs `2·l·s` flops per head and
//!   `(2·l·s + 2·s)` element transfers per head. The memory figure is an
//!   upper bound: it assumes every K/V pair is re-read from HBM each step.
//! * **Hybrid** batches mix chunked prefills with ongoing decodes. A chunk of
//!   `c` new tokens over `l` already-processed tokens attends against the
//!   stored prefix: `2·s·l·c` flops and `(2·l·s + 3·c·s·ceil(l/b))` transfers
//!   per head. A first chunk (`l == 0`) has no prefix, so it is charged its
//!   own intra-chunk self-attention instead; this makes an un-chunked prompt
//!   an exact special case of the chunked formula.
//!
//! Weight reads (`4·h² + 2·h·m` elements per layer) are charged once per
//! batch: prefill and decode rows share the same projection matrices in a
//! single fused GEMM.
//!
//! All memory figures are in bytes (element counts times `dtype_bytes`);
//! flops are raw multiply-add counts. Both scale linearly with `num_layers`.
//! Embedding lookup, LM head, layernorm, and softmax are ignored; the
//! latency regression's intercept absorbs them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostModelError {
    #[error("invalid model architecture: {0}")]
    InvalidArch(String),
    #[error("tensor parallel degree {tp} does not divide {field} = {value}")]
    TensorParallelSplit {
        tp: u64,
        field: &'static str,
        value: u64,
    },
    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),
    #[error("invalid batch composition: {0}")]
    InvalidComposition(String),
}

/// Transformer shape parameters, enough to count work for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArch {
    /// Hidden size; equals `num_heads * head_size`.
    pub hidden_size: u64,
    /// Number of attention (query) heads.
    pub num_heads: u64,
    /// Per-head dimension.
    pub head_size: u64,
    /// Number of key/value heads; divides `num_heads`. Equal to `num_heads`
    /// for classic multi-head attention, smaller under grouped-query
    /// attention. Only KV-cache sizing depends on it.
    pub num_kv_heads: u64,
    /// FFN intermediate size.
    pub ffn_intermediate: u64,
    /// Decoder layer count.
    pub num_layers: u64,
    /// K/V block size of the attention kernel (tokens per SRAM tile).
    pub attn_block_size: u64,
    /// Bytes per element (2 for fp16/bf16).
    pub dtype_bytes: u64,
    /// Tensor-parallel degree; cost functions divide the per-GPU share out
    /// internally, so an arch with `tp_degree > 1` describes the whole model.
    pub tp_degree: u64,
}

impl ModelArch {
    pub fn validate(&self) -> Result<(), CostModelError> {
        let fields = [
            ("hidden_size", self.hidden_size),
            ("num_heads", self.num_heads),
            ("head_size", self.head_size),
            ("num_kv_heads", self.num_kv_heads),
            ("ffn_intermediate", self.ffn_intermediate),
            ("num_layers", self.num_layers),
            ("attn_block_size", self.attn_block_size),
            ("dtype_bytes", self.dtype_bytes),
            ("tp_degree", self.tp_degree),
        ];
        for (name, value) in fields {
            if value == 0 {
                return Err(CostModelError::InvalidArch(format!(
                    "{name} must be strictly positive"
                )));
            }
        }
        if self.hidden_size != self.num_heads * self.head_size {
            return Err(CostModelError::InvalidArch(format!(
                "hidden_size ({}) != num_heads ({}) * head_size ({})",
                self.hidden_size, self.num_heads, self.head_size
            )));
        }
        if self.num_heads % self.num_kv_heads != 0 {
            return Err(CostModelError::InvalidArch(format!(
                "num_kv_heads ({}) does not divide num_heads ({})",
                self.num_kv_heads, self.num_heads
            )));
        }
        Ok(())
    }

    /// Returns the per-GPU parameter share: `hidden_size`, `num_heads`,
    /// `num_kv_heads`, and `ffn_intermediate` divided by the tensor-parallel
    /// degree, with `tp_degree` reset to 1. Identity when `tp_degree == 1`.
    pub fn apply_tensor_parallel(&self) -> Result<ModelArch, CostModelError> {
        self.validate()?;
        let tp = self.tp_degree;
        if tp == 1 {
            return Ok(*self);
        }
        let split = [
            ("num_heads", self.num_heads),
            ("num_kv_heads", self.num_kv_heads),
            ("ffn_intermediate", self.ffn_intermediate),
            ("hidden_size", self.hidden_size),
        ];
        for (field, value) in split {
            if value % tp != 0 {
                return Err(CostModelError::TensorParallelSplit { tp, field, value });
            }
        }
        Ok(ModelArch {
            hidden_size: self.hidden_size / tp,
            num_heads: self.num_heads / tp,
            num_kv_heads: self.num_kv_heads / tp,
            ffn_intermediate: self.ffn_intermediate / tp,
            tp_degree: 1,
            ..*self
        })
    }

    /// KV-cache bytes stored per token: `2 * num_kv_heads * head_size *
    /// num_layers * dtype_bytes` (one key and one value vector per KV head
    /// per layer). Whole-model figure; not divided by `tp_degree`.
    pub fn kv_bytes_per_token(&self) -> u64 {
        2 * self.num_kv_heads * self.head_size * self.num_layers * self.dtype_bytes
    }
}

/// One prefill chunk inside a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefillChunk {
    /// Prompt tokens already processed in earlier batches.
    pub processed_len: u64,
    /// Prompt tokens processed in this batch.
    pub chunk_len: u64,
    /// Full prompt length.
    pub full_prompt_len: u64,
}

impl PrefillChunk {
    /// Whole-prompt chunk (no prior progress).
    pub fn whole(prompt_len: u64) -> Self {
        PrefillChunk {
            processed_len: 0,
            chunk_len: prompt_len,
            full_prompt_len: prompt_len,
        }
    }
}

/// The token-level shape of one batch: prefill chunks plus decode contexts.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BatchComposition {
    pub prefill_chunks: Vec<PrefillChunk>,
    /// Context length (prompt plus tokens generated so far) of each decode
    /// request in the batch.
    pub decode_contexts: Vec<u64>,
}

impl BatchComposition {
    pub fn validate(&self) -> Result<(), CostModelError> {
        if self.prefill_chunks.is_empty() && self.decode_contexts.is_empty() {
            return Err(CostModelError::EmptyBatch(
                "batch needs at least one prefill chunk or decode context",
            ));
        }
        for (i, chunk) in self.prefill_chunks.iter().enumerate() {
            if chunk.chunk_len == 0 {
                return Err(CostModelError::InvalidComposition(format!(
                    "prefill chunk {i}: chunk_len must be >= 1"
                )));
            }
            if chunk.full_prompt_len == 0 {
                return Err(CostModelError::InvalidComposition(format!(
                    "prefill chunk {i}: full_prompt_len must be >= 1"
                )));
            }
            if chunk.processed_len + chunk.chunk_len > chunk.full_prompt_len {
                return Err(CostModelError::InvalidComposition(format!(
                    "prefill chunk {i}: processed_len ({}) + chunk_len ({}) exceeds full_prompt_len ({})",
                    chunk.processed_len, chunk.chunk_len, chunk.full_prompt_len
                )));
            }
        }
        for (i, &ctx) in self.decode_contexts.iter().enumerate() {
            if ctx == 0 {
                return Err(CostModelError::InvalidComposition(format!(
                    "decode context {i}: context length must be >= 1"
                )));
            }
        }
        Ok(())
    }

    /// Prefill tokens processed by this batch.
    pub fn prefill_tokens(&self) -> u64 {
        self.prefill_chunks.iter().map(|c| c.chunk_len).sum()
    }

    pub fn num_prefills(&self) -> usize {
        self.prefill_chunks.len()
    }

    pub fn num_decodes(&self) -> usize {
        self.decode_contexts.len()
    }
}

/// FLOPs and memory-access totals for one batch, split by source for
/// diagnostics. `flops == gemm_flops + attn_flops` and
/// `mem_bytes == gemm_mem + attn_mem` always hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub flops: f64,
    pub mem_bytes: f64,
    pub gemm_flops: f64,
    pub attn_flops: f64,
    pub gemm_mem: f64,
    pub attn_mem: f64,
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Weight-read element count per layer: QKV + attention output + both FFN
/// projections. Charged once per batch regardless of composition.
fn gemm_weight_mem_elems(h: f64, m: f64) -> f64 {
    4.0 * h * h + 2.0 * h * m
}

/// Token-linear GEMM terms for `t` prefill tokens: (flops, mem elements).
fn gemm_prefill_linear(h: f64, m: f64, t: f64) -> (f64, f64) {
    (4.0 * t * h * h + 2.0 * t * h * m, 8.0 * t * h + 2.0 * t * m)
}

/// Row-linear GEMM terms for `num_decodes` decode rows: (flops, mem elements).
fn gemm_decode_linear(h: f64, m: f64, num_decodes: f64) -> (f64, f64) {
    (
        4.0 * num_decodes * h * h + 2.0 * num_decodes * h * m,
        8.0 * num_decodes * h + 2.0 * num_decodes * m,
    )
}

/// Attention terms for a full (or first-chunk) prompt of `p` tokens, per
/// head, per layer: (flops, mem elements).
fn attn_prefill_terms(s: f64, block: u64, p: u64) -> (f64, f64) {
    let blocks = ceil_div(p, block) as f64;
    let p = p as f64;
    (2.0 * p * p * s, 2.0 * p * s + 3.0 * p * s * blocks)
}

/// Attention terms for a chunk of `c` tokens over `l` processed tokens, per
/// head, per layer: (flops, mem elements). The `l == 0` case falls back to
/// intra-chunk self-attention so that an un-chunked prompt costs exactly the
/// same as a prefill batch entry.
fn attn_chunk_terms(s: f64, block: u64, processed: u64, chunk: u64) -> (f64, f64) {
    if processed == 0 {
        return attn_prefill_terms(s, block, chunk);
    }
    let blocks = ceil_div(processed, block) as f64;
    let l = processed as f64;
    let c = chunk as f64;
    (2.0 * s * l * c, 2.0 * l * s + 3.0 * c * s * blocks)
}

/// Attention terms for one decode row with context `ctx`, per head, per
/// layer: (flops, mem elements).
fn attn_decode_terms(s: f64, ctx: u64) -> (f64, f64) {
    let l = ctx as f64;
    (2.0 * l * s, 2.0 * l * s + 2.0 * s)
}

/// Shared accumulator behind the three cost entry points. Iteration order is
/// fixed (prefill chunks in list order, then decode contexts) so degenerate
/// hybrid batches reproduce the pure prefill/decode paths bit for bit.
fn batch_cost(arch: &ModelArch, composition: &BatchComposition) -> Result<CostBreakdown, CostModelError> {
    composition.validate()?;
    let arch = arch.apply_tensor_parallel()?;
    let h = arch.hidden_size as f64;
    let m = arch.ffn_intermediate as f64;
    let s = arch.head_size as f64;
    let heads = arch.num_heads as f64;
    let layers = arch.num_layers as f64;
    let dtype = arch.dtype_bytes as f64;
    let block = arch.attn_block_size;

    let t = composition.prefill_tokens() as f64;
    let num_decodes = composition.decode_contexts.len() as f64;

    let mut gemm_flops = 0.0;
    let mut gemm_mem_elems = gemm_weight_mem_elems(h, m);
    let (pf, pm) = gemm_prefill_linear(h, m, t);
    gemm_flops += pf;
    gemm_mem_elems += pm;
    let (df, dm) = gemm_decode_linear(h, m, num_decodes);
    gemm_flops += df;
    gemm_mem_elems += dm;

    let mut attn_flops_per_head = 0.0;
    let mut attn_mem_elems_per_head = 0.0;
    for chunk in &composition.prefill_chunks {
        let (f, mem) = attn_chunk_terms(s, block, chunk.processed_len, chunk.chunk_len);
        attn_flops_per_head += f;
        attn_mem_elems_per_head += mem;
    }
    for &ctx in &composition.decode_contexts {
        let (f, mem) = attn_decode_terms(s, ctx);
        attn_flops_per_head += f;
        attn_mem_elems_per_head += mem;
    }

    let gemm_flops = gemm_flops * layers;
    let attn_flops = attn_flops_per_head * heads * layers;
    let gemm_mem = gemm_mem_elems * dtype * layers;
    let attn_mem = attn_mem_elems_per_head * heads * dtype * layers;

    Ok(CostBreakdown {
        flops: gemm_flops + attn_flops,
        mem_bytes: gemm_mem + attn_mem,
        gemm_flops,
        attn_flops,
        gemm_mem,
        attn_mem,
    })
}

/// Cost of a prefill-only batch over full (un-chunked) prompts.
pub fn prefill_cost(arch: &ModelArch, prompt_lens: &[u64]) -> Result<CostBreakdown, CostModelError> {
    if prompt_lens.is_empty() {
        return Err(CostModelError::EmptyBatch(
            "prefill batch has no prompts; use decode_cost or hybrid_cost",
        ));
    }
    let composition = BatchComposition {
        prefill_chunks: prompt_lens.iter().map(|&p| PrefillChunk::whole(p)).collect(),
        decode_contexts: Vec::new(),
    };
    batch_cost(arch, &composition)
}

/// Cost of a decode-only batch; `context_lens` holds prompt-plus-generated
/// token counts per request. The memory total is the no-SRAM-reuse upper
/// bound described in the module docs.
pub fn decode_cost(arch: &ModelArch, context_lens: &[u64]) -> Result<CostBreakdown, CostModelError> {
    if context_lens.is_empty() {
        return Err(CostModelError::EmptyBatch(
            "decode batch has no contexts; use prefill_cost or hybrid_cost",
        ));
    }
    let composition = BatchComposition {
        prefill_chunks: Vec::new(),
        decode_contexts: context_lens.to_vec(),
    };
    batch_cost(arch, &composition)
}

/// Cost of a hybrid batch mixing (possibly chunked) prefills with decodes.
/// Reduces exactly to [`prefill_cost`] when there are no decodes and all
/// chunks cover whole prompts, and to [`decode_cost`] when there are no
/// prefill chunks.
pub fn hybrid_cost(arch: &ModelArch, composition: &BatchComposition) -> Result<CostBreakdown, CostModelError> {
    batch_cost(arch, composition)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Tiny architecture used throughout: h=4, n=2, s=2, m=8, L=1, b=2, d=1.
    fn tiny() -> ModelArch {
        ModelArch {
            hidden_size: 4,
            num_heads: 2,
            head_size: 2,
            num_kv_heads: 2,
            ffn_intermediate: 8,
            num_layers: 1,
            attn_block_size: 2,
            dtype_bytes: 1,
            tp_degree: 1,
        }
    }

    #[test]
    fn tensor_parallel_divides_shape() {
        let arch = ModelArch {
            hidden_size: 4096,
            num_heads: 32,
            head_size: 128,
            num_kv_heads: 8,
            ffn_intermediate: 14336,
            num_layers: 32,
            attn_block_size: 128,
            dtype_bytes: 2,
            tp_degree: 2,
        };
        let split = arch.apply_tensor_parallel().unwrap();
        assert_eq!(split.hidden_size, 2048);
        assert_eq!(split.num_heads, 16);
        assert_eq!(split.num_kv_heads, 4);
        assert_eq!(split.ffn_intermediate, 7168);
        assert_eq!(split.tp_degree, 1);
    }

    #[test]
    fn tensor_parallel_identity_when_one() {
        let arch = tiny();
        assert_eq!(arch.apply_tensor_parallel().unwrap(), arch);
    }

    #[test]
    fn tensor_parallel_rejects_non_divisible() {
        let arch = ModelArch {
            hidden_size: 4096,
            num_heads: 32,
            head_size: 128,
            num_kv_heads: 32,
            ffn_intermediate: 14336,
            num_layers: 32,
            attn_block_size: 128,
            dtype_bytes: 2,
            tp_degree: 3,
        };
        let err = arch.apply_tensor_parallel().unwrap_err();
        assert!(matches!(err, CostModelError::TensorParallelSplit { field: "num_heads", .. }));
    }

    #[test]
    fn arch_validation_catches_shape_mismatch() {
        let mut arch = tiny();
        arch.hidden_size = 5;
        assert!(arch.validate().is_err());
        let mut arch = tiny();
        arch.num_kv_heads = 0;
        assert!(arch.validate().is_err());
    }

    #[test]
    fn kv_bytes_per_token_golden() {
        // Full multi-head attention, fp16: 2 * 32 * 128 * 32 * 2 = 512 KiB.
        let arch = ModelArch {
            hidden_size: 4096,
            num_heads: 32,
            head_size: 128,
            num_kv_heads: 32,
            ffn_intermediate: 14336,
            num_layers: 32,
            attn_block_size: 128,
            dtype_bytes: 2,
            tp_degree: 1,
        };
        assert_eq!(arch.kv_bytes_per_token(), 524_288);

        let unit = ModelArch {
            hidden_size: 1,
            num_heads: 1,
            head_size: 1,
            num_kv_heads: 1,
            ffn_intermediate: 1,
            num_layers: 1,
            attn_block_size: 1,
            dtype_bytes: 1,
            tp_degree: 1,
        };
        assert_eq!(unit.kv_bytes_per_token(), 2);

        // Grouped-query attention with 8 KV heads: 131072 bytes per token,
        // so a 2000-token request holds about 0.26 GB.
        let gqa = ModelArch { num_kv_heads: 8, ..arch };
        assert_eq!(gqa.kv_bytes_per_token(), 131_072);
        let total = 2000.0 * gqa.kv_bytes_per_token() as f64;
        let rel = (total - 0.24e9).abs() / 0.24e9;
        assert!(rel < 0.10, "2000-token KV {total} deviates {rel} from 0.24 GB");
    }

    // Hand-derived totals for the tiny arch, prompt p = 2, t = 2:
    //   gemm flops = 4*2*16 + 2*2*4*8          = 256
    //   attn flops = 2 heads * (2*2^2*2)       = 32     -> F = 288
    //   gemm mem   = (4*16 + 2*4*8) + (8*2*4 + 2*2*8) = 128 + 96 = 224
    //   attn mem   = 2 heads * (2*2*2 + 3*2*2*ceil(2/2)) = 2*(8+12) = 40
    //                                                     -> M = 264
    #[test]
    fn prefill_golden_single_prompt() {
        let cost = prefill_cost(&tiny(), &[2]).unwrap();
        assert_eq!(cost.gemm_flops, 256.0);
        assert_eq!(cost.attn_flops, 32.0);
        assert_eq!(cost.flops, 288.0);
        assert_eq!(cost.gemm_mem, 224.0);
        assert_eq!(cost.attn_mem, 40.0);
        assert_eq!(cost.mem_bytes, 264.0);
    }

    #[test]
    fn prefill_gemm_linear_attention_additive() {
        let one = prefill_cost(&tiny(), &[2]).unwrap();
        let two = prefill_cost(&tiny(), &[2, 2]).unwrap();
        // GEMM flops are linear in t; attention terms double per request.
        assert_eq!(two.gemm_flops, 2.0 * one.gemm_flops);
        assert_eq!(two.attn_flops, 2.0 * one.attn_flops);
        assert_eq!(two.attn_mem, 2.0 * one.attn_mem);
        // GEMM memory keeps the weight-read constant: 128 + 2*96 = 320.
        assert_eq!(two.gemm_mem, 320.0);
    }

    #[test]
    fn prefill_rejects_empty_batch() {
        assert!(matches!(
            prefill_cost(&tiny(), &[]),
            Err(CostModelError::EmptyBatch(_))
        ));
    }

    // Hand-derived decode totals for the tiny arch, context l = 3:
    //   gemm flops = 4*1*16 + 2*1*4*8          = 128
    //   attn flops = 2 heads * (2*3*2)         = 24     -> F = 152
    //   gemm mem   = (4*16 + 2*4*8) + (8*1*4 + 2*1*8) = 128 + 48 = 176
    //   attn mem   = 2 heads * (2*3*2 + 2*2)   = 32     -> M = 208
    #[test]
    fn decode_golden_single_context() {
        let cost = decode_cost(&tiny(), &[3]).unwrap();
        assert_eq!(cost.gemm_flops, 128.0);
        assert_eq!(cost.attn_flops, 24.0);
        assert_eq!(cost.flops, 152.0);
        assert_eq!(cost.gemm_mem, 176.0);
        assert_eq!(cost.attn_mem, 32.0);
        assert_eq!(cost.mem_bytes, 208.0);
    }

    #[test]
    fn decode_additivity_and_context_scaling() {
        let one = decode_cost(&tiny(), &[3]).unwrap();
        let two = decode_cost(&tiny(), &[3, 3]).unwrap();
        assert_eq!(two.attn_flops, 2.0 * one.attn_flops);
        assert_eq!(two.attn_mem, 2.0 * one.attn_mem);
        assert_eq!(two.gemm_flops, 2.0 * one.gemm_flops);

        // GEMM terms ignore context length; attention scales with it.
        let short = decode_cost(&tiny(), &[1]).unwrap();
        let long = decode_cost(&tiny(), &[1000]).unwrap();
        assert_eq!(short.gemm_flops, long.gemm_flops);
        assert_eq!(short.gemm_mem, long.gemm_mem);
        assert!(long.attn_flops > short.attn_flops);
        assert!(long.attn_mem > short.attn_mem);
    }

    #[test]
    fn decode_rejects_empty_batch() {
        assert!(decode_cost(&tiny(), &[]).is_err());
    }

    // Hand-derived hybrid totals: one chunk (l=2, c=2, p=4) plus one decode
    // with context 3 on the tiny arch.
    //   flops: prefill gemm(t=2) 256 + chunk attn 2*(2*2*2*2)=32
    //        + decode gemm 128 + decode attn 24              -> 440
    //   mem:   weight read 128 (once) + prefill linear 96
    //        + chunk attn 2*(2*2*2 + 3*2*2*ceil(2/2)) = 40
    //        + decode linear 48 + decode attn 32             -> 344
    #[test]
    fn hybrid_golden_mixed_batch() {
        let composition = BatchComposition {
            prefill_chunks: vec![PrefillChunk {
                processed_len: 2,
                chunk_len: 2,
                full_prompt_len: 4,
            }],
            decode_contexts: vec![3],
        };
        let cost = hybrid_cost(&tiny(), &composition).unwrap();
        assert_eq!(cost.flops, 440.0);
        assert_eq!(cost.mem_bytes, 344.0);
        assert_eq!(cost.attn_flops, 32.0 + 24.0);
        assert_eq!(cost.attn_mem, 40.0 + 32.0);
    }

    #[test]
    fn hybrid_reduces_to_decode_cost() {
        let composition = BatchComposition {
            prefill_chunks: vec![],
            decode_contexts: vec![3, 7, 1],
        };
        let hybrid = hybrid_cost(&tiny(), &composition).unwrap();
        let decode = decode_cost(&tiny(), &[3, 7, 1]).unwrap();
        assert_eq!(hybrid, decode);
    }

    #[test]
    fn hybrid_reduces_to_prefill_cost() {
        let composition = BatchComposition {
            prefill_chunks: vec![PrefillChunk::whole(4)],
            decode_contexts: vec![],
        };
        let hybrid = hybrid_cost(&tiny(), &composition).unwrap();
        let prefill = prefill_cost(&tiny(), &[4]).unwrap();
        assert_eq!(hybrid, prefill);
    }

    #[test]
    fn hybrid_rejects_bad_chunks() {
        let composition = BatchComposition {
            prefill_chunks: vec![PrefillChunk {
                processed_len: 3,
                chunk_len: 2,
                full_prompt_len: 4,
            }],
            decode_contexts: vec![],
        };
        assert!(hybrid_cost(&tiny(), &composition).is_err());
        let empty = BatchComposition::default();
        assert!(hybrid_cost(&tiny(), &empty).is_err());
    }

    #[test]
    fn layer_and_dtype_scaling() {
        let base = prefill_cost(&tiny(), &[5]).unwrap();
        let mut deep = tiny();
        deep.num_layers = 2;
        let doubled = prefill_cost(&deep, &[5]).unwrap();
        assert_eq!(doubled.flops, 2.0 * base.flops);
        assert_eq!(doubled.mem_bytes, 2.0 * base.mem_bytes);

        let mut wide = tiny();
        wide.dtype_bytes = 2;
        let bytes = prefill_cost(&wide, &[5]).unwrap();
        assert_eq!(bytes.flops, base.flops);
        assert_eq!(bytes.mem_bytes, 2.0 * base.mem_bytes);
    }

    #[test]
    fn huge_prompts_stay_finite() {
        let arch = ModelArch {
            hidden_size: 4096,
            num_heads: 32,
            head_size: 128,
            num_kv_heads: 8,
            ffn_intermediate: 14336,
            num_layers: 32,
            attn_block_size: 128,
            dtype_bytes: 2,
            tp_degree: 1,
        };
        let cost = prefill_cost(&arch, &[1_000_000]).unwrap();
        assert!(cost.flops.is_finite() && cost.flops > 0.0);
        assert!(cost.mem_bytes.is_finite() && cost.mem_bytes > 0.0);
        let cost = decode_cost(&arch, &[1_000_000]).unwrap();
        assert!(cost.flops.is_finite() && cost.mem_bytes.is_finite());
    }

    /// Splitting a prompt into chunks keeps GEMM flops exact and loses
    /// exactly the intra-chunk attention of every non-first chunk:
    /// `2*s*sum_{j>=2} c_j*(l_j + c_j)` per head per layer.
    #[test]
    fn chunk_sum_identity() {
        let arch = tiny();
        let prompt = 10u64;
        let chunk_lens = [3u64, 4, 3];
        let mut chunks = Vec::new();
        let mut processed = 0;
        for &c in &chunk_lens {
            chunks.push(PrefillChunk {
                processed_len: processed,
                chunk_len: c,
                full_prompt_len: prompt,
            });
            processed += c;
        }
        assert_eq!(processed, prompt);

        let whole = prefill_cost(&arch, &[prompt]).unwrap();
        let mut chunked_gemm_flops = 0.0;
        let mut chunked_attn_flops = 0.0;
        for chunk in &chunks {
            let cost = hybrid_cost(
                &arch,
                &BatchComposition {
                    prefill_chunks: vec![*chunk],
                    decode_contexts: vec![],
                },
            )
            .unwrap();
            chunked_gemm_flops += cost.gemm_flops;
            chunked_attn_flops += cost.attn_flops;
        }
        assert_eq!(chunked_gemm_flops, whole.gemm_flops);

        let s = arch.head_size as f64;
        let heads = arch.num_heads as f64;
        let layers = arch.num_layers as f64;
        let missing: f64 = chunks
            .iter()
            .skip(1)
            .map(|ch| {
                let l = ch.processed_len as f64;
                let c = ch.chunk_len as f64;
                2.0 * s * c * (l + c)
            })
            .sum();
        assert_eq!(chunked_attn_flops + missing * heads * layers, whole.attn_flops);
        assert!(chunked_attn_flops <= whole.attn_flops);
    }
}
