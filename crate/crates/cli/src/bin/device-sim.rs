//! Plays the board: answers FRAME requests with GAZE replies.

use std::io::Write;
use std::net::TcpListener;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use tinygaze::wire::device_serve;

#[derive(Parser)]
#[command(about = "Serve gaze predictions over the framed serial protocol")]
struct Args {
    #[arg(long)]
    model: PathBuf,
    /// `pipe` for stdin/stdout, or a TCP port on 127.0.0.1 (0 picks one).
    #[arg(long, default_value = "pipe")]
    listen: String,
    /// Pipeline config for frames of the configured capture size; other
    /// sizes use their center square.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Exit after the first TCP connection closes.
    #[arg(long)]
    once: bool,
}

fn main() -> Result<()> {
    tinygaze_cli::init_logging();
    let args = Args::parse();
    let engine = tinygaze_cli::load_engine(&args.model)?;
    let cfg = tinygaze_cli::pipeline_config(args.config.as_deref(), None)?;

    if args.listen == "pipe" {
        let summary = device_serve(std::io::stdin().lock(), std::io::stdout().lock(), &engine, &cfg)?;
        log::info!("{summary:?}");
        return Ok(());
    }
    let port: u16 = args
        .listen
        .parse()
        .with_context(|| format!("--listen takes `pipe` or a port number, got {:?}", args.listen))?;
    let listener = TcpListener::bind(("127.0.0.1", port))?;
    // Scripts read the bound address from this line.
    println!("listening on {}", listener.local_addr()?);
    std::io::stdout().flush()?;
    std::thread::scope(|s| -> Result<()> {
        for conn in listener.incoming() {
            let stream = conn?;
            let peer = stream.peer_addr()?;
            let reader = stream.try_clone()?;
            let (engine, cfg) = (&engine, &cfg);
            let handle = s.spawn(move || match device_serve(reader, stream, engine, cfg) {
                Ok(summary) => log::info!("{peer}: {summary:?}"),
                Err(e) => log::warn!("{peer}: {e}"),
            });
            if args.once {
                handle.join().ok();
                break;
            }
        }
        Ok(())
    })
}
