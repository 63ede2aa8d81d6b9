//! Sends one frame to a device and writes the blue-dot overlay.

use std::fs::OpenOptions;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Parser;
use tinygaze::gaze::GazeEstimate;
use tinygaze::wire::{host_overlay, HostLink, Reply};

#[derive(Parser)]
#[command(about = "Request a gaze estimate for one frame and draw it")]
struct Args {
    /// `host:port` of a device-sim, or a path to a serial device node.
    #[arg(long)]
    connect: String,
    #[arg(long)]
    frame: PathBuf,
    #[arg(long, default_value = "overlay.ppm")]
    out: PathBuf,
    /// Screen size in cm, e.g. `31x17.4`.
    #[arg(long, value_parser = tinygaze_cli::parse_screen_cm)]
    screen_cm: Option<(f32, f32)>,
    /// Camera position in cm from the screen's top-left corner, e.g. `15.5,0`.
    #[arg(long, value_parser = tinygaze_cli::parse_origin_cm)]
    origin_cm: Option<(f32, f32)>,
}

fn request(reader: impl Read, writer: impl Write, frame: &tinygaze::kernels::Image) -> Result<Reply> {
    Ok(HostLink::new(reader, writer).request_gaze(frame)?)
}

fn main() -> Result<()> {
    tinygaze_cli::init_logging();
    let args = Args::parse();
    let frame = tinygaze_cli::load_image(&args.frame)?;
    let reply = match TcpStream::connect(args.connect.as_str()) {
        Ok(stream) => request(stream.try_clone()?, stream, &frame)?,
        Err(tcp_err) => {
            let Ok(port) = OpenOptions::new().read(true).write(true).open(&args.connect) else {
                bail!("cannot reach {}: {tcp_err}", args.connect);
            };
            request(port.try_clone()?, port, &frame)?
        }
    };
    let g = match reply {
        Reply::Gaze(g) => g,
        Reply::Error(e) => bail!("device error {}: {}", e.code, e.message),
        Reply::Stats(_) => bail!("device answered a frame with STATS"),
    };
    let est = GazeEstimate {
        x_cm: g.x_cm,
        y_cm: g.y_cm,
        raw: (g.x_cm / 10.0, g.y_cm / 10.0),
        inference_micros: u64::from(g.micros),
    };
    let geo = tinygaze_cli::overlay_geometry(args.screen_cm, args.origin_cm);
    let (px, py) = host_overlay(&frame, &est, &geo, &args.out)?;
    println!(
        "gaze ({:.2}, {:.2}) cm, inference {} us, dot at ({px}, {py}) in {}",
        g.x_cm,
        g.y_cm,
        g.micros,
        args.out.display()
    );
    Ok(())
}
