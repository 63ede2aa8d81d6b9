//! Latency and MAC-rate benchmark over a directory of frames.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Parser;
use tinygaze::bench::{
    render_report, run_bench, BenchOptions, MonotonicClock, ReportFormat, DEFAULT_ITERATIONS, DEFAULT_WARMUP,
};

#[derive(Parser)]
#[command(about = "Benchmark end-to-end and inference latency of a model")]
struct Args {
    #[arg(long)]
    model: PathBuf,
    /// Directory of PNG, JPEG or PNM frames, all the same size.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    iters: usize,
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    warmup: usize,
    /// CPU clock in Hz; enables the MAC/cycle figure.
    #[arg(long)]
    clock_hz: Option<f64>,
    /// One line of JSON instead of the table.
    #[arg(long)]
    json: bool,
    /// Pipeline config; defaults to the center square of the frames.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> Result<()> {
    tinygaze_cli::init_logging();
    let args = Args::parse();
    let engine = tinygaze_cli::load_engine(&args.model)?;
    let frames = tinygaze_cli::load_frames(&args.frames)?;
    let dims = (frames[0].width(), frames[0].height());
    if let Some(f) = frames.iter().find(|f| (f.width(), f.height()) != dims) {
        bail!("frames differ in size: {:?} and {:?}", dims, (f.width(), f.height()));
    }
    let cfg = tinygaze_cli::pipeline_config(args.config.as_deref(), Some(dims))?;
    let opts = BenchOptions {
        model_name: args
            .model
            .file_stem()
            .map_or_else(|| "model".to_string(), |s| s.to_string_lossy().into_owned()),
        iterations: args.iters,
        warmup: args.warmup,
        clock_hz: args.clock_hz,
    };
    let report = run_bench(&engine, &frames, &cfg, &opts, &mut MonotonicClock::new())?;
    let format = if args.json {
        ReportFormat::Json
    } else {
        ReportFormat::Table
    };
    print!("{}", render_report(&report, format));
    Ok(())
}
