//! Latency and MAC-throughput measurement with an injectable clock.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaze::{postprocess, preprocess, raw_output, GazeError, PipelineConfig};
use crate::graph::{count_macs, Engine};
use crate::kernels::Image;

pub const DEFAULT_ITERATIONS: usize = 100;
pub const DEFAULT_WARMUP: usize = 10;

/// Nanosecond timestamps; must never go backwards.
pub trait Clock {
    fn now_nanos(&mut self) -> u64;
}

#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        MonotonicClock { origin: Instant::now() }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now_nanos(&mut self) -> u64 {
        self.origin.elapsed().as_nanos() as u64
    }
}

/// Advances by a fixed step on every reading.
#[derive(Debug, Clone, Copy)]
pub struct FakeClock {
    pub now: u64,
    pub step: u64,
}

impl FakeClock {
    pub fn new(step_nanos: u64) -> Self {
        FakeClock {
            now: 0,
            step: step_nanos,
        }
    }
}

impl Clock for FakeClock {
    fn now_nanos(&mut self) -> u64 {
        let t = self.now;
        self.now += self.step;
        t
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no frames to benchmark")]
    NoFrames,
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error("clock reported zero inference time; MAC rates are undefined")]
    ZeroDuration,
    #[error(transparent)]
    Gaze(#[from] GazeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub p50: f64,
    pub p95: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model_name: String,
    /// Milliseconds.
    pub end_to_end_latency: LatencyStats,
    /// Milliseconds.
    pub inference_latency: LatencyStats,
    pub total_macs: u64,
    pub mac_per_second: f64,
    pub mac_per_cycle: Option<f64>,
    pub iterations: usize,
    pub warmup: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub model_name: String,
    pub iterations: usize,
    pub warmup: usize,
    pub clock_hz: Option<f64>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            model_name: "model".into(),
            iterations: DEFAULT_ITERATIONS,
            warmup: DEFAULT_WARMUP,
            clock_hz: None,
        }
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn latency_stats(samples_ms: &[f64]) -> LatencyStats {
    let mut sorted = samples_ms.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = if sorted.is_empty() {
        0.0
    } else {
        sorted.iter().sum::<f64>() / sorted.len() as f64
    };
    LatencyStats {
        p50: percentile(&sorted, 50.0),
        p95: percentile(&sorted, 95.0),
        mean,
    }
}

/// MACs retired per clock cycle for one inference of `seconds`.
pub fn mac_per_cycle(macs: u64, seconds: f64, clock_hz: f64) -> f64 {
    macs as f64 / (seconds * clock_hz)
}

/// Times `iterations` predictions after `warmup` discarded ones, cycling
/// through `frames`. End-to-end covers preprocess, execute and postprocess;
/// inference covers execute alone.
pub fn run_bench(
    engine: &Engine,
    frames: &[Image],
    cfg: &PipelineConfig,
    opts: &BenchOptions,
    clock: &mut dyn Clock,
) -> Result<BenchReport, BenchError> {
    if frames.is_empty() {
        return Err(BenchError::NoFrames);
    }
    if opts.iterations == 0 {
        return Err(BenchError::NoIterations);
    }
    let mut arena = engine.new_arena();
    let mut e2e = Vec::with_capacity(opts.iterations);
    let mut inference = Vec::with_capacity(opts.iterations);
    for i in 0..opts.warmup + opts.iterations {
        let frame = &frames[i % frames.len()];
        let t0 = clock.now_nanos();
        let input = preprocess(frame, cfg, engine.model())?;
        let t1 = clock.now_nanos();
        let out = engine.execute_in(&mut arena, &input).map_err(GazeError::from)?;
        let t2 = clock.now_nanos();
        postprocess(raw_output(&out)?)?;
        let t3 = clock.now_nanos();
        if i >= opts.warmup {
            e2e.push(t3.saturating_sub(t0) as f64 / 1e6);
            inference.push(t2.saturating_sub(t1) as f64 / 1e6);
        }
    }
    let total_macs = count_macs(engine.model());
    let inference_latency = latency_stats(&inference);
    let seconds = inference_latency.mean / 1e3;
    if seconds <= 0.0 {
        return Err(BenchError::ZeroDuration);
    }
    let mac_per_second = total_macs as f64 / seconds;
    Ok(BenchReport {
        model_name: opts.model_name.clone(),
        end_to_end_latency: latency_stats(&e2e),
        inference_latency,
        total_macs,
        mac_per_second,
        mac_per_cycle: opts.clock_hz.map(|hz| mac_per_cycle(total_macs, seconds, hz)),
        iterations: opts.iterations,
        warmup: opts.warmup,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Json,
}

fn latency_cell(s: &LatencyStats) -> String {
    format!("{:.3} (p50 {:.3}, p95 {:.3})", s.mean, s.p50, s.p95)
}

/// Plain-text table in the row order of the hardware evaluation table, or
/// one line of JSON.
pub fn render_report(r: &BenchReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut line = serde_json::to_string(r).expect("report fields serialize");
            line.push('\n');
            line
        }
        ReportFormat::Table => {
            let mac_cycle = r.mac_per_cycle.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
            let rows = [
                ("Platform", r.model_name.clone()),
                ("End-to-End Evaluation", String::new()),
                ("E [mJ]", "-".into()),
                ("Latency [ms]", latency_cell(&r.end_to_end_latency)),
                ("Inference Evaluation", String::new()),
                ("MAC/Cycle", mac_cycle),
                ("Latency [ms]", latency_cell(&r.inference_latency)),
                ("E [mJ]", "-".into()),
                ("MACs", r.total_macs.to_string()),
                ("MAC/s", format!("{:.4e}", r.mac_per_second)),
                ("Iterations", format!("{} (+{} warmup)", r.iterations, r.warmup)),
            ];
            let mut out = String::new();
            for (label, value) in rows {
                let _ = writeln!(out, "{label:<24}{value}");
            }
            out
        }
    }
}
