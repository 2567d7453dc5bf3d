//! Roofline-feature regression from batch cost to batch latency.
//!
//! A batch with `F` flops and `M` bytes of memory traffic has a compute time
//! `t_F = F / flops_cap` and a transfer time `t_M = M / mem_bw`. Real kernels
//! overlap the two to a workload-dependent degree, so the predictor is a
//! linear blend over five features that bracket both extremes:
//!
//! ```text
//! latency = c1*(t_M + t_F) + c2*max(t_M, t_F) + c3*t_M + c4*t_F + c5
//! ```
//!
//! `c1` captures the no-overlap end, `c2` the full-overlap end, `c3`/`c4`
//! allow per-resource corrections, and the intercept `c5` absorbs fixed
//! launch overhead. The feature set is exactly collinear (`f1 = f3 + f4`),
//! so the least-squares fit carries a small Tikhonov term; coefficients are
//! not unique, predictions are.

use crate::cost_model::{prefill_cost, CostBreakdown, CostModelError, ModelArch};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

/// Tikhonov regularization weight applied to the coefficient norm.
pub const RIDGE_LAMBDA: f64 = 1e-8;
/// Minimum records for a fit, and minimum refit window.
pub const MIN_FIT_RECORDS: usize = 20;

#[derive(Debug, Error)]
pub enum LatencyModelError {
    #[error("insufficient calibration data: {0}")]
    InsufficientData(String),
    #[error("refit window must be >= {MIN_FIT_RECORDS}, got {0}")]
    WindowTooSmall(usize),
    #[error("numerical failure solving the regression: {0}")]
    Numerical(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Cost(#[from] CostModelError),
    #[error("record file {path}, line {line}: {message}")]
    RecordParse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Hardware roofline capacities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareCaps {
    /// Peak compute in flops per second.
    pub flops_per_sec: f64,
    /// Peak HBM bandwidth in bytes per second.
    pub mem_bytes_per_sec: f64,
}

impl HardwareCaps {
    /// NVIDIA A100-80G: 312 TFLOPS, 2 TB/s.
    pub const A100_80G: HardwareCaps = HardwareCaps {
        flops_per_sec: 312e12,
        mem_bytes_per_sec: 2e12,
    };
}

impl Default for HardwareCaps {
    fn default() -> Self {
        HardwareCaps::A100_80G
    }
}

/// Fitted (or preset) latency predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub coeffs: [f64; 5],
    pub caps: HardwareCaps,
}

/// One logged batch execution: the regression's training row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub flops: f64,
    pub mem_bytes: f64,
    pub latency_s: f64,
    pub num_prefills: u32,
    pub num_decodes: u32,
    pub prefill_tokens: u64,
    pub decode_tokens: u64,
}

/// Fit output: the model plus its in-sample median absolute relative error.
#[derive(Debug, Clone, Copy)]
pub struct FitReport {
    pub model: LatencyModel,
    pub median_abs_rel_error: f64,
}

impl LatencyModel {
    /// Pure-roofline default for simulation without calibration data:
    /// `max(t_M, t_F)` plus a 0.3 ms launch overhead. A configuration
    /// default, not a measured value.
    pub fn synthetic_default(caps: HardwareCaps) -> Self {
        LatencyModel {
            coeffs: [0.0, 1.0, 0.0, 0.0, 3e-4],
            caps,
        }
    }

    /// Roofline feature vector for a batch cost:
    /// `(t_M + t_F, max(t_M, t_F), t_M, t_F, 1)`.
    pub fn features(&self, cost: &CostBreakdown) -> [f64; 5] {
        let t_m = cost.mem_bytes / self.caps.mem_bytes_per_sec;
        let t_f = cost.flops / self.caps.flops_per_sec;
        [t_m + t_f, t_m.max(t_f), t_m, t_f, 1.0]
    }

    /// Unclamped dot product of coefficients and features. May go negative
    /// when extrapolating to tiny batches; callers that care count those.
    pub fn predict_raw(&self, cost: &CostBreakdown) -> f64 {
        let f = self.features(cost);
        self.coeffs.iter().zip(f.iter()).map(|(c, x)| c * x).sum()
    }

    /// Predicted batch latency in seconds, clamped at zero.
    pub fn predict(&self, cost: &CostBreakdown) -> f64 {
        self.predict_raw(cost).max(0.0)
    }

    /// Latency of the costliest admissible prefill batch: a single prompt
    /// spending the whole token budget. Attention is superlinear in one
    /// prompt's length, so this dominates any other split of the budget.
    pub fn worst_case_batch_latency(
        &self,
        arch: &ModelArch,
        max_batch_tokens: u64,
    ) -> Result<f64, LatencyModelError> {
        if max_batch_tokens == 0 {
            return Err(LatencyModelError::InvalidInput(
                "max_batch_tokens must be >= 1".into(),
            ));
        }
        let cost = prefill_cost(arch, &[max_batch_tokens])?;
        Ok(self.predict(&cost))
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn median_abs_rel_error(model: &LatencyModel, records: &[BatchRecord]) -> f64 {
    let mut errors: Vec<f64> = records
        .iter()
        .map(|r| {
            let cost = record_cost(r);
            (model.predict(&cost) - r.latency_s).abs() / r.latency_s
        })
        .collect();
    median(&mut errors)
}

fn record_cost(record: &BatchRecord) -> CostBreakdown {
    CostBreakdown {
        flops: record.flops,
        mem_bytes: record.mem_bytes,
        gemm_flops: record.flops,
        attn_flops: 0.0,
        gemm_mem: record.mem_bytes,
        attn_mem: 0.0,
    }
}

/// Solve `(X'X + lambda*I) c = X'y` by Gaussian elimination with partial
/// pivoting. The system is 5x5 and positive definite for `lambda > 0`.
fn solve_ridge(rows: &[[f64; 5]], targets: &[f64]) -> Result<[f64; 5], LatencyModelError> {
    let mut ata = [[0.0f64; 5]; 5];
    let mut atb = [0.0f64; 5];
    for (row, &y) in rows.iter().zip(targets) {
        for i in 0..5 {
            atb[i] += row[i] * y;
            for j in 0..5 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    for (i, row) in ata.iter_mut().enumerate() {
        row[i] += RIDGE_LAMBDA;
    }

    let mut a = ata;
    let mut b = atb;
    for col in 0..5 {
        let pivot_row = (col..5)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        let pivot = a[col][col];
        if !pivot.is_finite() || pivot.abs() < 1e-300 {
            return Err(LatencyModelError::Numerical(format!(
                "singular system after regularization (pivot {pivot} in column {col})"
            )));
        }
        for row in col + 1..5 {
            let factor = a[row][col] / pivot;
            for k in col..5 {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0f64; 5];
    for col in (0..5).rev() {
        let mut acc = b[col];
        for k in col + 1..5 {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
        if !x[col].is_finite() {
            return Err(LatencyModelError::Numerical(
                "non-finite coefficient".into(),
            ));
        }
    }
    Ok(x)
}

fn distinct_ratio_count(records: &[BatchRecord], caps: HardwareCaps) -> usize {
    let mut ratios: Vec<f64> = records
        .iter()
        .map(|r| {
            let t_m = r.mem_bytes / caps.mem_bytes_per_sec;
            let t_f = r.flops / caps.flops_per_sec;
            if t_f == 0.0 {
                f64::INFINITY
            } else {
                t_m / t_f
            }
        })
        .collect();
    ratios.sort_by(f64::total_cmp);
    let mut count = 0;
    let mut last = f64::NAN;
    for r in ratios {
        let same = if last.is_finite() && r.is_finite() {
            (r - last).abs() <= 1e-12 * last.abs().max(1.0)
        } else {
            r == last
        };
        if !same {
            count += 1;
            last = r;
        }
    }
    count
}

/// Least-squares fit of the five coefficients over observed batch records.
pub fn fit(records: &[BatchRecord], caps: HardwareCaps) -> Result<FitReport, LatencyModelError> {
    if records.len() < MIN_FIT_RECORDS {
        return Err(LatencyModelError::InsufficientData(format!(
            "need at least {MIN_FIT_RECORDS} records, got {}",
            records.len()
        )));
    }
    for (i, r) in records.iter().enumerate() {
        if !(r.latency_s > 0.0) || !r.flops.is_finite() || !r.mem_bytes.is_finite() {
            return Err(LatencyModelError::InvalidInput(format!(
                "record {i} has non-positive latency or non-finite cost"
            )));
        }
    }
    if distinct_ratio_count(records, caps) < 2 {
        return Err(LatencyModelError::InsufficientData(
            "records span fewer than 2 distinct (t_M, t_F) ratios".into(),
        ));
    }

    let probe = LatencyModel { coeffs: [0.0; 5], caps };
    let rows: Vec<[f64; 5]> = records.iter().map(|r| probe.features(&record_cost(r))).collect();
    let targets: Vec<f64> = records.iter().map(|r| r.latency_s).collect();
    let coeffs = solve_ridge(&rows, &targets)?;
    let model = LatencyModel { coeffs, caps };
    let median_abs_rel_error = median_abs_rel_error(&model, records);
    Ok(FitReport {
        model,
        median_abs_rel_error,
    })
}

/// Refit over the most recent `window` records of a stream, keeping the old
/// model when the refit does not improve the in-window error (or when the
/// stream is too short to fit at all).
pub fn refit_online(
    model: &LatencyModel,
    records: &[BatchRecord],
    window: usize,
) -> Result<LatencyModel, LatencyModelError> {
    if window < MIN_FIT_RECORDS {
        return Err(LatencyModelError::WindowTooSmall(window));
    }
    if records.len() < MIN_FIT_RECORDS {
        return Ok(*model);
    }
    let start = records.len().saturating_sub(window);
    let recent = &records[start..];
    let refit = match fit(recent, model.caps) {
        Ok(report) => report,
        Err(_) => return Ok(*model),
    };
    let old_error = median_abs_rel_error(model, recent);
    if refit.median_abs_rel_error <= old_error {
        Ok(refit.model)
    } else {
        Ok(*model)
    }
}

const RECORD_HEADER: &str = "flops,mem_bytes,latency_s,b_p,b_d,prefill_tokens,decode_tokens";

/// Serialize calibration records as delimited text with a header row.
pub fn records_to_string(records: &[BatchRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 64 + RECORD_HEADER.len() + 1);
    out.push_str(RECORD_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.flops, r.mem_bytes, r.latency_s, r.num_prefills, r.num_decodes, r.prefill_tokens, r.decode_tokens
        );
    }
    out
}

pub fn write_records(path: &Path, records: &[BatchRecord]) -> Result<(), LatencyModelError> {
    std::fs::write(path, records_to_string(records)).map_err(|source| LatencyModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parse calibration records from delimited text. The header row is
/// optional; malformed rows are rejected with their line number.
pub fn parse_records(text: &str, path: &str) -> Result<Vec<BatchRecord>, LatencyModelError> {
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if idx == 0 && fields.first().is_some_and(|f| f.parse::<f64>().is_err()) {
            continue; // header
        }
        if fields.len() != 7 {
            return Err(LatencyModelError::RecordParse {
                path: path.to_string(),
                line: line_no,
                message: format!("expected 7 comma-separated fields, got {}", fields.len()),
            });
        }
        let parse_f64 = |s: &str, name: &str| -> Result<f64, LatencyModelError> {
            s.parse::<f64>().map_err(|_| LatencyModelError::RecordParse {
                path: path.to_string(),
                line: line_no,
                message: format!("cannot parse {name} from {s:?}"),
            })
        };
        let parse_u64 = |s: &str, name: &str| -> Result<u64, LatencyModelError> {
            s.parse::<u64>().map_err(|_| LatencyModelError::RecordParse {
                path: path.to_string(),
                line: line_no,
                message: format!("cannot parse {name} from {s:?}"),
            })
        };
        let record = BatchRecord {
            flops: parse_f64(fields[0], "flops")?,
            mem_bytes: parse_f64(fields[1], "mem_bytes")?,
            latency_s: parse_f64(fields[2], "latency_s")?,
            num_prefills: parse_u64(fields[3], "b_p")? as u32,
            num_decodes: parse_u64(fields[4], "b_d")? as u32,
            prefill_tokens: parse_u64(fields[5], "prefill_tokens")?,
            decode_tokens: parse_u64(fields[6], "decode_tokens")?,
        };
        if !(record.latency_s > 0.0) {
            return Err(LatencyModelError::RecordParse {
                path: path.to_string(),
                line: line_no,
                message: "latency_s must be positive".into(),
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn read_records(path: &Path) -> Result<Vec<BatchRecord>, LatencyModelError> {
    let text = std::fs::read_to_string(path).map_err(|source| LatencyModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_records(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cost(flops: f64, mem_bytes: f64) -> CostBreakdown {
        CostBreakdown {
            flops,
            mem_bytes,
            gemm_flops: flops,
            attn_flops: 0.0,
            gemm_mem: mem_bytes,
            attn_mem: 0.0,
        }
    }

    fn unit_caps() -> HardwareCaps {
        HardwareCaps {
            flops_per_sec: 1.0,
            mem_bytes_per_sec: 1.0,
        }
    }

    #[test]
    fn features_are_roofline_terms() {
        let model = LatencyModel {
            coeffs: [0.0; 5],
            caps: unit_caps(),
        };
        assert_eq!(model.features(&cost(3.0, 2.0)), [5.0, 3.0, 2.0, 3.0, 1.0]);
        assert_eq!(model.features(&cost(0.0, 0.0)), [0.0, 0.0, 0.0, 0.0, 1.0]);
        let a100 = LatencyModel {
            coeffs: [0.0; 5],
            caps: HardwareCaps::A100_80G,
        };
        let f = a100.features(&cost(312e12, 2e12));
        assert_eq!(f, [2.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn predict_matches_coefficient_structure() {
        let caps = unit_caps();
        let max_only = LatencyModel { coeffs: [0.0, 1.0, 0.0, 0.0, 0.0], caps };
        assert_eq!(max_only.predict(&cost(3.0, 2.0)), 3.0);
        let sum_only = LatencyModel { coeffs: [1.0, 0.0, 0.0, 0.0, 0.0], caps };
        assert!((sum_only.predict(&cost(0.003, 0.002)) - 0.005).abs() < 1e-15);
        let intercept = LatencyModel { coeffs: [0.0, 0.0, 0.0, 0.0, 0.25], caps };
        assert_eq!(intercept.predict(&cost(123.0, 7.0)), 0.25);
    }

    #[test]
    fn predict_clamps_negative() {
        let model = LatencyModel {
            coeffs: [0.0, 0.0, 0.0, 0.0, -1.0],
            caps: unit_caps(),
        };
        assert!(model.predict_raw(&cost(1.0, 1.0)) < 0.0);
        assert_eq!(model.predict(&cost(1.0, 1.0)), 0.0);
    }

    fn synth_records(
        truth: &LatencyModel,
        n: usize,
        noise: f64,
        seed: u64,
    ) -> Vec<BatchRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let flops = rng.gen_range(0.01..2.0) * truth.caps.flops_per_sec;
                let mem = rng.gen_range(0.01..2.0) * truth.caps.mem_bytes_per_sec;
                let c = cost(flops, mem);
                let base = truth.predict(&c);
                let eps: f64 = rng.gen_range(-1.0..1.0) * noise;
                BatchRecord {
                    flops,
                    mem_bytes: mem,
                    latency_s: base * (1.0 + eps),
                    num_prefills: 1,
                    num_decodes: 0,
                    prefill_tokens: 1,
                    decode_tokens: 0,
                }
            })
            .collect()
    }

    #[test]
    fn noise_free_fit_round_trips_predictions() {
        let truth = LatencyModel {
            coeffs: [0.3, 0.7, 0.1, 0.05, 0.02],
            caps: unit_caps(),
        };
        let records = synth_records(&truth, 200, 0.0, 11);
        let report = fit(&records, truth.caps).unwrap();
        for r in &records {
            let c = cost(r.flops, r.mem_bytes);
            let rel = (report.model.predict(&c) - r.latency_s).abs() / r.latency_s;
            assert!(rel < 1e-6, "relative error {rel} too large");
        }
        assert!(report.median_abs_rel_error < 1e-6);
    }

    #[test]
    fn fit_requires_enough_records() {
        let truth = LatencyModel::synthetic_default(unit_caps());
        let records = synth_records(&truth, 5, 0.0, 1);
        assert!(matches!(
            fit(&records, unit_caps()),
            Err(LatencyModelError::InsufficientData(_))
        ));
    }

    #[test]
    fn fit_requires_ratio_spread() {
        // All records share t_M == t_F, a single ratio.
        let records: Vec<BatchRecord> = (1..=30)
            .map(|i| BatchRecord {
                flops: i as f64,
                mem_bytes: i as f64,
                latency_s: i as f64,
                num_prefills: 0,
                num_decodes: 1,
                prefill_tokens: 0,
                decode_tokens: 1,
            })
            .collect();
        assert!(matches!(
            fit(&records, unit_caps()),
            Err(LatencyModelError::InsufficientData(_))
        ));
    }

    #[test]
    fn noisy_fit_meets_accuracy_target() {
        let truth = LatencyModel {
            coeffs: [0.2, 0.9, 0.05, 0.1, 5e-3],
            caps: unit_caps(),
        };
        let train = synth_records(&truth, 500, 0.05, 42);
        let held_out = synth_records(&truth, 100, 0.05, 43);
        let report = fit(&train, truth.caps).unwrap();
        let mut errors: Vec<f64> = held_out
            .iter()
            .map(|r| {
                let c = cost(r.flops, r.mem_bytes);
                (report.model.predict(&c) - r.latency_s).abs() / r.latency_s
            })
            .collect();
        let med = median(&mut errors);
        assert!(med < 0.10, "held-out median relative error {med}");
    }

    #[test]
    fn refit_window_precondition() {
        let model = LatencyModel::synthetic_default(unit_caps());
        assert!(matches!(
            refit_online(&model, &[], 10),
            Err(LatencyModelError::WindowTooSmall(10))
        ));
    }

    #[test]
    fn refit_empty_stream_keeps_model() {
        let model = LatencyModel {
            coeffs: [0.1, 0.2, 0.3, 0.4, 0.5],
            caps: unit_caps(),
        };
        let refit = refit_online(&model, &[], 50).unwrap();
        assert_eq!(refit, model);
    }

    #[test]
    fn refit_tracks_regime_shift() {
        let old_truth = LatencyModel {
            coeffs: [0.0, 1.0, 0.0, 0.0, 1e-3],
            caps: unit_caps(),
        };
        let new_truth = LatencyModel {
            coeffs: [1.0, 0.0, 0.5, 0.0, 5e-2],
            caps: unit_caps(),
        };
        let mut stream = synth_records(&old_truth, 100, 0.0, 7);
        stream.extend(synth_records(&new_truth, 100, 0.0, 8));
        let stale = fit(&synth_records(&old_truth, 100, 0.0, 9), unit_caps())
            .unwrap()
            .model;
        let refit = refit_online(&stale, &stream, 100).unwrap();
        let recent = &stream[stream.len() - 100..];
        assert!(median_abs_rel_error(&refit, recent) <= median_abs_rel_error(&stale, recent));
    }

    #[test]
    fn worst_case_latency_is_monotone_and_composed() {
        let arch = ModelArch {
            hidden_size: 64,
            num_heads: 4,
            head_size: 16,
            num_kv_heads: 4,
            ffn_intermediate: 128,
            num_layers: 2,
            attn_block_size: 16,
            dtype_bytes: 2,
            tp_degree: 1,
        };
        let model = LatencyModel::synthetic_default(HardwareCaps {
            flops_per_sec: 1e9,
            mem_bytes_per_sec: 1e9,
        });
        assert!(model.worst_case_batch_latency(&arch, 0).is_err());
        let small = model.worst_case_batch_latency(&arch, 1024).unwrap();
        let large = model.worst_case_batch_latency(&arch, 2048).unwrap();
        assert!(large >= small);
        let direct = model.predict(&prefill_cost(&arch, &[2048]).unwrap());
        assert_eq!(large, direct);
    }

    #[test]
    fn record_text_round_trip() {
        let records = vec![
            BatchRecord {
                flops: 1.5e12,
                mem_bytes: 3.0e10,
                latency_s: 0.012,
                num_prefills: 2,
                num_decodes: 30,
                prefill_tokens: 512,
                decode_tokens: 30,
            },
            BatchRecord {
                flops: 2.5e11,
                mem_bytes: 4.0e10,
                latency_s: 0.02,
                num_prefills: 0,
                num_decodes: 64,
                prefill_tokens: 0,
                decode_tokens: 64,
            },
        ];
        let text = records_to_string(&records);
        let parsed = parse_records(&text, "test").unwrap();
        assert_eq!(parsed, records);
    }

    #[test]
    fn record_parse_reports_line_numbers() {
        let text = "flops,mem_bytes,latency_s,b_p,b_d,prefill_tokens,decode_tokens\n1,2,notanumber,0,1,0,1\n";
        let err = parse_records(text, "bad.csv").unwrap_err();
        match err {
            LatencyModelError::RecordParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }
}
