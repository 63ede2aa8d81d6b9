//! Writes the seeded reference model to disk.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use tinygaze::gaze::build_reference_model_for;
use tinygaze::graph::{count_macs, count_params, encode_model, plan_arena};

#[derive(Parser)]
#[command(about = "Generate the reference gaze model with seeded synthetic weights")]
struct Args {
    /// Weight seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Pipeline config; its capture size and crop define the stored grid plane.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> Result<()> {
    tinygaze_cli::init_logging();
    let args = Args::parse();
    let cfg = tinygaze_cli::pipeline_config(args.config.as_deref(), None)?;
    let model = build_reference_model_for(args.seed, &cfg)?;
    let plan = plan_arena(&model)?;
    let bytes = encode_model(&model);
    std::fs::write(&args.out, &bytes).with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "{}: {} params, {} MACs, arena peak {} B, {} B on disk",
        args.out.display(),
        count_params(&model),
        count_macs(&model),
        plan.peak_bytes,
        bytes.len()
    );
    Ok(())
}
