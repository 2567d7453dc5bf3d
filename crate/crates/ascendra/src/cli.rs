//! Experiment front door: run single simulations, QPS / SLO-scale sweeps,
//! latency-model fitting, config validation, and preset listing.
//!
//! Every behavior-affecting flag routes through [`SimConfig`], so a result
//! row's config hash pins the run exactly. Sweep points execute in parallel
//! up to `--jobs`, but each run stays single-threaded and deterministic; the
//! output table is sorted by (sweep value, seed) regardless of scheduling.

use crate::config::{
    arch_preset, slo_preset, synth_preset, ConfigError, LatencyModelFile, Overrides, PolicyName,
    SchedulerVariant, SimConfig, ARCH_PRESETS, SLO_PRESETS, SYNTH_PRESETS,
};
use crate::engine::{self, SimError, SimResult};
use crate::latency_model::{self, HardwareCaps, LatencyModelError};
use crate::metrics::{summarize, MetricsError, MetricsWindow, SummaryStats};
use clap::{Args, Parser, Subcommand};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Latency(#[from] LatencyModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Parser)]
#[command(name = "ascendra", about = "Batch-level simulator for two-tier SLO-aware LLM serving", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and print its summary.
    Run(RunArgs),
    /// Run a sweep over QPS or SLO scale, one row per (point, seed).
    Sweep(SweepArgs),
    /// Fit latency-model coefficients from a batch-record file.
    FitModel(FitModelArgs),
    /// Parse and validate a config, printing its hash.
    ValidateConfig(ValidateArgs),
    /// List built-in arch, SLO, and workload presets.
    Presets,
}

#[derive(Debug, Clone, Args)]
pub struct OverrideArgs {
    /// Arrival rate override (queries per second).
    #[arg(long)]
    pub qps: Option<f64>,
    /// Workload seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulated duration override (seconds).
    #[arg(long)]
    pub duration: Option<f64>,
    /// Scheduler variant: ascendra | vllm | sarathi.
    #[arg(long)]
    pub scheduler: Option<SchedulerVariant>,
    /// Value policy: edf | sjf | fcfs | ljf.
    #[arg(long)]
    pub policy: Option<PolicyName>,
    /// SLO scale multiplier override.
    #[arg(long)]
    pub slo_scale: Option<f64>,
    /// Enable or disable request dropping.
    #[arg(long)]
    pub drop: Option<bool>,
    /// Enable or disable the HP elastic batch size.
    #[arg(long)]
    pub elastic: Option<bool>,
    /// Enable or disable HP ticket entry.
    #[arg(long)]
    pub tickets: Option<bool>,
}

impl OverrideArgs {
    fn to_overrides(&self) -> Overrides {
        Overrides {
            qps: self.qps,
            seed: self.seed,
            duration_s: self.duration,
            scheduler: self.scheduler,
            policy: self.policy,
            slo_scale: self.slo_scale,
            drop: self.drop,
            elastic: self.elastic,
            tickets: self.tickets,
            event_log: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub overrides: OverrideArgs,
    /// Append the result row to this delimited-text table.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write per-request outcomes to this file.
    #[arg(long)]
    pub detail: Option<PathBuf>,
    /// Write the event log to this file.
    #[arg(long)]
    pub event_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated QPS sweep values.
    #[arg(long, value_delimiter = ',')]
    pub qps: Vec<f64>,
    /// Comma-separated SLO-scale sweep values.
    #[arg(long, value_delimiter = ',')]
    pub slo_scale: Vec<f64>,
    /// Comma-separated seeds (default: the config seed).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub overrides: OverrideArgs,
    /// Write the result table here (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitModelArgs {
    /// Batch-record file (flops,mem_bytes,latency_s,b_p,b_d,...).
    #[arg(long)]
    pub records: PathBuf,
    /// Hardware compute cap in flops/s (default: A100-80G).
    #[arg(long)]
    pub flops_cap: Option<f64>,
    /// Hardware memory bandwidth in bytes/s (default: A100-80G).
    #[arg(long)]
    pub mem_bw: Option<f64>,
    /// Where to write the fitted model (TOML).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub config: PathBuf,
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub config_hash: u64,
    pub qps: f64,
    pub slo_scale: f64,
    pub seed: u64,
    pub scheduler: String,
    pub policy: String,
    pub goodput: Option<f64>,
    pub p99_ttft_s: Option<f64>,
    pub mean_tbt_s: Option<f64>,
    pub throughput_tokens_s: Option<f64>,
    pub completed: u64,
    pub dropped: u64,
    pub violated: u64,
    pub status: String,
}

pub const RESULT_HEADER: &str = "config_hash,qps,slo_scale,seed,scheduler,policy,goodput,p99_ttft_s,mean_tbt_s,throughput_tokens_s,completed,dropped,violated,status";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ResultRow {
    pub fn to_line(&self) -> String {
        format!(
            "{:016x},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.config_hash,
            self.qps,
            self.slo_scale,
            self.seed,
            self.scheduler,
            self.policy,
            opt(self.goodput),
            opt(self.p99_ttft_s),
            opt(self.mean_tbt_s),
            opt(self.throughput_tokens_s),
            self.completed,
            self.dropped,
            self.violated,
            self.status
        )
    }
}

/// Parse a config file and apply overrides, without validating (validation
/// happens inside the engine so sweep failures stay per-row).
pub fn parse_config(path: &Path, overrides: &Overrides) -> Result<SimConfig, ConfigError> {
    let mut config = SimConfig::from_path(path)?;
    config.apply_overrides(overrides);
    Ok(config)
}

/// Run one resolved config and summarize over its post-warmup window.
pub fn run_one(config: &SimConfig) -> Result<(SummaryStats, SimResult), CliError> {
    let result = engine::run(config)?;
    let window = metrics_window(config);
    let stats = summarize(&result.outcomes(), &config.resolved_slo()?, &window)?;
    Ok((stats, result))
}

pub fn metrics_window(config: &SimConfig) -> MetricsWindow {
    let end = config.workload.duration_s.max(config.engine.warmup_s + f64::EPSILON);
    MetricsWindow::new(config.engine.warmup_s.min(end / 2.0), end)
}

fn row_for(config: &SimConfig, outcome: Result<SummaryStats, CliError>) -> ResultRow {
    let base = ResultRow {
        config_hash: config.config_hash(),
        qps: config.workload.qps,
        slo_scale: config.slo.slo_scale,
        seed: config.workload.seed,
        scheduler: config.scheduler.variant.to_string(),
        policy: config.scheduler.policy.to_string(),
        goodput: None,
        p99_ttft_s: None,
        mean_tbt_s: None,
        throughput_tokens_s: None,
        completed: 0,
        dropped: 0,
        violated: 0,
        status: "ok".into(),
    };
    match outcome {
        Ok(stats) => ResultRow {
            goodput: Some(stats.goodput),
            p99_ttft_s: stats.ttft_p99,
            mean_tbt_s: stats.mean_tbt,
            throughput_tokens_s: Some(stats.throughput_tokens_per_s),
            completed: stats.completed,
            dropped: stats.dropped,
            violated: stats.slo_violations,
            ..base
        },
        Err(err) => ResultRow {
            status: format!("error: {err}").replace(',', ";").replace('\n', " "),
            ..base
        },
    }
}

/// Sweep axis: one run per (value, seed), rows in (value, seed) order.
#[derive(Debug, Clone, Copy, PartialEq)]
enum SweepAxis {
    Qps,
    SloScale,
}

/// Execute a sweep; returns (rows, all_ok).
pub fn run_sweep(args: &SweepArgs) -> Result<(Vec<ResultRow>, bool), CliError> {
    if !args.qps.is_empty() && !args.slo_scale.is_empty() {
        return Err(CliError::Usage(
            "sweep takes either --qps or --slo-scale values, not both".into(),
        ));
    }
    let base = parse_config(&args.config, &args.overrides.to_overrides())?;
    let (axis, values) = if !args.slo_scale.is_empty() {
        (SweepAxis::SloScale, args.slo_scale.clone())
    } else if !args.qps.is_empty() {
        (SweepAxis::Qps, args.qps.clone())
    } else {
        (SweepAxis::Qps, vec![base.workload.qps])
    };
    if values.iter().any(|v| !(*v > 0.0)) {
        return Err(CliError::Usage("sweep values must be positive".into()));
    }
    let seeds = if args.seeds.is_empty() {
        vec![base.workload.seed]
    } else {
        args.seeds.clone()
    };

    let mut points: Vec<(f64, u64)> = Vec::new();
    for &value in &values {
        for &seed in &seeds {
            points.push((value, seed));
        }
    }

    let jobs = args.jobs.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool");
    let rows: Vec<ResultRow> = pool.install(|| {
        use rayon::prelude::*;
        points
            .par_iter()
            .map(|&(value, seed)| {
                let mut config = base.clone();
                config.workload.seed = seed;
                match axis {
                    SweepAxis::Qps => config.workload.qps = value,
                    SweepAxis::SloScale => config.slo.slo_scale = value,
                }
                let outcome = run_one(&config).map(|(stats, _)| stats);
                row_for(&config, outcome)
            })
            .collect()
    });

    let mut ordered: Vec<(f64, u64, ResultRow)> = points
        .into_iter()
        .zip(rows)
        .map(|((value, seed), row)| (value, seed, row))
        .collect();
    ordered.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let rows: Vec<ResultRow> = ordered.into_iter().map(|(_, _, r)| r).collect();
    let all_ok = rows.iter().all(|r| r.status == "ok");
    Ok((rows, all_ok))
}

pub fn results_table(rows: &[ResultRow]) -> String {
    let mut out = String::from(RESULT_HEADER);
    out.push('\n');
    for row in rows {
        let _ = writeln!(out, "{}", row.to_line());
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
    }
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn detail_table(result: &SimResult) -> String {
    let mut out = String::from(
        "id,arrival_time,ttft,mean_tbt,completed,dropped,scheduling_delay,served_by_hp,offloaded,output_tokens,preemptions\n",
    );
    for o in result.outcomes() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            o.id,
            o.arrival_time,
            opt(o.ttft),
            opt(o.mean_tbt),
            o.completed,
            o.dropped,
            opt(o.scheduling_delay),
            o.served_by_hp,
            o.offloaded,
            o.output_tokens,
            o.preemptions
        );
    }
    out
}

fn print_summary(config: &SimConfig, stats: &SummaryStats, result: &SimResult) {
    println!("config_hash: {:016x}", config.config_hash());
    println!(
        "scheduler: {} (policy {}), qps {}, seed {}, duration {} s (warmup {} s)",
        config.scheduler.variant,
        config.scheduler.policy,
        config.workload.qps,
        config.workload.seed,
        config.workload.duration_s,
        config.engine.warmup_s
    );
    println!(
        "arrivals {} | completed {} | dropped {} | slo violations {}",
        stats.arrivals, stats.completed, stats.dropped, stats.slo_violations
    );
    println!("goodput: {:.4}", stats.goodput);
    if let (Some(p50), Some(p99)) = (stats.ttft_p50, stats.ttft_p99) {
        println!("ttft p50/p99: {:.4} / {:.4} s", p50, p99);
    }
    if let Some(tbt) = stats.mean_tbt {
        println!("mean tbt: {:.5} s", tbt);
    }
    println!(
        "throughput: {:.1} tokens/s, {:.3} requests/s",
        stats.throughput_tokens_per_s, stats.throughput_requests_per_s
    );
    match (stats.scheduling_delay_lp, stats.scheduling_delay_hp) {
        (Some(lp), Some(hp)) => println!("scheduling delay lp/hp: {:.4} / {:.4} s", lp, hp),
        (Some(lp), None) => println!("scheduling delay lp: {:.4} s", lp),
        _ => {}
    }
    println!(
        "batches {} | offloads {} | tickets {} | preemptions {} | negative-latency clamps {}",
        result.stats.batches,
        result.stats.offloads,
        result.stats.tickets_issued,
        result.stats.preemptions,
        result.stats.negative_latency_clamps
    );
    if result.stats.negative_latency_clamps > 0 {
        eprintln!(
            "warning: {} predictions clamped at zero; the latency model extrapolates poorly at tiny batches",
            result.stats.negative_latency_clamps
        );
    }
}

fn cmd_run(args: &RunArgs) -> Result<i32, CliError> {
    let mut overrides = args.overrides.to_overrides();
    if args.event_log.is_some() {
        overrides.event_log = Some(true);
    }
    let config = parse_config(&args.config, &overrides)?;
    let (stats, result) = run_one(&config)?;
    print_summary(&config, &stats, &result);
    if let Some(path) = &args.out {
        let row = row_for(&config, Ok(stats.clone()));
        let mut text = if path.exists() {
            std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.display().to_string(),
                source,
            })?
        } else {
            format!("{RESULT_HEADER}\n")
        };
        let _ = writeln!(text, "{}", row.to_line());
        write_file(path, &text)?;
    }
    if let Some(path) = &args.detail {
        write_file(path, &detail_table(&result))?;
    }
    if let Some(path) = &args.event_log {
        let text = result
            .event_log_text()
            .expect("event log enabled by --event-log");
        write_file(path, &text)?;
    }
    Ok(0)
}

fn cmd_sweep(args: &SweepArgs) -> Result<i32, CliError> {
    let (rows, all_ok) = run_sweep(args)?;
    let table = results_table(&rows);
    match &args.out {
        Some(path) => write_file(path, &table)?,
        None => print!("{table}"),
    }
    if !all_ok {
        for row in rows.iter().filter(|r| r.status != "ok") {
            eprintln!("failed: qps={} seed={}: {}", row.qps, row.seed, row.status);
        }
        return Ok(2);
    }
    Ok(0)
}

fn cmd_fit_model(args: &FitModelArgs) -> Result<i32, CliError> {
    let records = latency_model::read_records(&args.records)?;
    let caps = HardwareCaps {
        flops_per_sec: args.flops_cap.unwrap_or(HardwareCaps::A100_80G.flops_per_sec),
        mem_bytes_per_sec: args.mem_bw.unwrap_or(HardwareCaps::A100_80G.mem_bytes_per_sec),
    };
    // Deterministic 80/20 split: every fifth record is held out.
    let mut train = Vec::new();
    let mut held_out = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if i % 5 == 4 {
            held_out.push(*r);
        } else {
            train.push(*r);
        }
    }
    let report = latency_model::fit(&train, caps)?;
    let eval = if held_out.is_empty() { &train } else { &held_out };
    let mut errors: Vec<f64> = eval
        .iter()
        .map(|r| {
            let cost = crate::cost_model::CostBreakdown {
                flops: r.flops,
                mem_bytes: r.mem_bytes,
                gemm_flops: r.flops,
                attn_flops: 0.0,
                gemm_mem: r.mem_bytes,
                attn_mem: 0.0,
            };
            (report.model.predict(&cost) - r.latency_s).abs() / r.latency_s
        })
        .collect();
    errors.sort_by(f64::total_cmp);
    let median = errors[errors.len() / 2];

    let file: LatencyModelFile = report.model.into();
    let text = toml::to_string_pretty(&file).expect("model serializes");
    write_file(&args.out, &text)?;
    println!(
        "fitted on {} records ({} held out); in-sample median |rel err| {:.4}; held-out median |rel err| {:.4}",
        train.len(),
        held_out.len(),
        report.median_abs_rel_error,
        median
    );
    println!("coefficients: {:?}", report.model.coeffs);
    println!("model written to {}", args.out.display());
    Ok(0)
}

fn cmd_validate(args: &ValidateArgs) -> Result<i32, CliError> {
    let config = parse_config(&args.config, &Overrides::default())?;
    config.validate()?;
    println!("ok: config_hash {:016x}", config.config_hash());
    Ok(0)
}

fn cmd_presets() -> i32 {
    println!("arch presets:");
    for name in ARCH_PRESETS {
        let a = arch_preset(name).unwrap();
        println!(
            "  {name}: hidden {}, heads {}, kv heads {}, ffn {}, layers {}, {} B/token KV",
            a.hidden_size,
            a.num_heads,
            a.num_kv_heads,
            a.ffn_intermediate,
            a.num_layers,
            a.kv_bytes_per_token()
        );
    }
    println!("slo presets:");
    for name in SLO_PRESETS {
        let (ttft, tbt) = slo_preset(name).unwrap();
        println!("  {name}: ttft {ttft} s, tbt {tbt} s");
    }
    println!("synthetic workload presets:");
    for name in SYNTH_PRESETS {
        let spec = synth_preset(name).unwrap();
        println!("  {name}: prompt {:?}, output {:?}, max_len {}", spec.prompt, spec.output, spec.max_len);
    }
    0
}

pub fn execute(cli: Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::FitModel(args) => cmd_fit_model(args),
        Command::ValidateConfig(args) => cmd_validate(args),
        Command::Presets => Ok(cmd_presets()),
    }
}

/// Binary entry point; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}
