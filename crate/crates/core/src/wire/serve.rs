//! Device-side request loop, host-side client, and an in-memory transport.

use std::io::{self, Read, Write};
use std::sync::mpsc::{channel, Receiver, Sender};

use crate::gaze::{predict_in, GazeEstimate, PipelineConfig};
use crate::graph::Engine;
use crate::kernels::{Image, PixelFormat};

use super::codec::{
    encode_message, Decoder, ErrorCode, ErrorPayload, FramePayload, GazePayload, MessageKind, StatsPayload, WireError,
    WireMessage, FORMAT_GRAY8, FORMAT_RGB888,
};

/// Counters kept by one serve loop.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServeSummary {
    pub requests: u64,
    pub gaze_replies: u64,
    pub error_replies: u64,
    pub stats_replies: u64,
    pub checksum_failures: u64,
    pub bad_headers: u64,
}

impl FramePayload {
    pub fn from_image(img: &Image) -> Result<Self, WireError> {
        let dim = |v: usize| {
            u16::try_from(v).map_err(|_| WireError::Payload {
                kind: MessageKind::Frame,
                reason: format!("dimension {v} exceeds 65535"),
            })
        };
        Ok(FramePayload {
            width: dim(img.width())?,
            height: dim(img.height())?,
            format: match img.format() {
                PixelFormat::Gray8 => FORMAT_GRAY8,
                PixelFormat::Rgb888 => FORMAT_RGB888,
            },
            pixels: img.pixels().to_vec(),
        })
    }

    /// The image carried by this frame, or the error code a device replies
    /// with.
    pub fn to_image(&self) -> Result<Image, ErrorPayload> {
        let format = match self.format {
            FORMAT_GRAY8 => PixelFormat::Gray8,
            FORMAT_RGB888 => PixelFormat::Rgb888,
            other => {
                return Err(ErrorPayload::new(
                    ErrorCode::BadFormat,
                    format!("unknown pixel format {other}"),
                ))
            }
        };
        let (w, h) = (usize::from(self.width), usize::from(self.height));
        let expected = w * h * format.channels();
        if w == 0 || h == 0 || self.pixels.len() != expected {
            return Err(ErrorPayload::new(
                ErrorCode::BadDimensions,
                format!("{w}x{h} frame needs {expected} pixel bytes, got {}", self.pixels.len()),
            ));
        }
        Image::new(w, h, format, self.pixels.clone())
            .map_err(|e| ErrorPayload::new(ErrorCode::BadDimensions, e.to_string()))
    }
}

struct Device<'a> {
    engine: &'a Engine,
    cfg: &'a PipelineConfig,
    arena: crate::graph::Arena,
    summary: ServeSummary,
}

impl Device<'_> {
    fn gaze(&mut self, payload: &[u8]) -> Result<GazeEstimate, ErrorPayload> {
        let frame =
            FramePayload::parse(payload).map_err(|e| ErrorPayload::new(ErrorCode::BadDimensions, e.to_string()))?;
        let image = frame.to_image()?;
        let derived;
        let cfg = if (image.width(), image.height()) == self.cfg.capture_dims {
            self.cfg
        } else {
            derived = PipelineConfig::for_frame(image.width(), image.height())
                .map_err(|e| ErrorPayload::new(ErrorCode::BadDimensions, e.to_string()))?;
            &derived
        };
        predict_in(self.engine, &mut self.arena, &image, cfg)
            .map_err(|e| ErrorPayload::new(ErrorCode::Internal, e.to_string()))
    }

    fn reply(&mut self, request: &WireMessage, decoder: &Decoder) -> WireMessage {
        self.summary.requests += 1;
        let result = match (request.kind, request.payload.len()) {
            (MessageKind::Frame, _) => self.gaze(&request.payload).map(|est| {
                GazePayload {
                    x_cm: est.x_cm,
                    y_cm: est.y_cm,
                    micros: u32::try_from(est.inference_micros).unwrap_or(u32::MAX),
                }
                .to_message()
            }),
            (MessageKind::Stats, 0) => {
                let d = decoder.stats();
                self.summary.stats_replies += 1;
                let clip = |v: u64| u32::try_from(v).unwrap_or(u32::MAX);
                return StatsPayload {
                    frames_ok: clip(self.summary.gaze_replies),
                    error_replies: clip(self.summary.error_replies),
                    checksum_failures: clip(d.checksum_failures),
                    bad_headers: clip(d.bad_headers),
                }
                .to_message();
            }
            (kind, _) => Err(ErrorPayload::new(
                ErrorCode::UnexpectedKind,
                format!("device does not accept {kind:?} messages"),
            )),
        };
        match result {
            Ok(m) => {
                self.summary.gaze_replies += 1;
                m
            }
            Err(e) => {
                log::debug!("device: error reply {}: {}", e.code, e.message);
                self.summary.error_replies += 1;
                e.to_message()
            }
        }
    }

    fn drain(
        &mut self,
        events: impl IntoIterator<Item = Result<WireMessage, WireError>>,
        decoder: &Decoder,
        writer: &mut impl Write,
    ) -> io::Result<()> {
        for event in events {
            match event {
                Ok(request) => {
                    let reply = self.reply(&request, decoder);
                    writer.write_all(&encode_message(&reply))?;
                    writer.flush()?;
                }
                Err(e) => log::warn!("device: {e}"),
            }
        }
        Ok(())
    }
}

/// Serves requests until `reader` reaches end of stream. Every decoded
/// request gets exactly one reply, in order; corrupt frames get none.
pub fn device_serve(
    mut reader: impl Read,
    mut writer: impl Write,
    engine: &Engine,
    cfg: &PipelineConfig,
) -> io::Result<ServeSummary> {
    let mut device = Device {
        engine,
        cfg,
        arena: engine.new_arena(),
        summary: ServeSummary::default(),
    };
    let mut decoder = Decoder::new();
    let mut buf = vec![0u8; 16 * 1024];
    loop {
        let n = match reader.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        decoder.push(&buf[..n]);
        while let Some(event) = decoder.next_event() {
            device.drain([event], &decoder, &mut writer)?;
        }
    }
    let rest = decoder.finish();
    device.drain(rest, &decoder, &mut writer)?;
    let d = decoder.stats();
    device.summary.checksum_failures = d.checksum_failures;
    device.summary.bad_headers = d.bad_headers;
    Ok(device.summary)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Gaze(GazePayload),
    Stats(StatsPayload),
    Error(ErrorPayload),
}

impl Reply {
    pub fn parse(m: &WireMessage) -> Result<Self, WireError> {
        match m.kind {
            MessageKind::Gaze => Ok(Reply::Gaze(GazePayload::parse(&m.payload)?)),
            MessageKind::Stats => Ok(Reply::Stats(StatsPayload::parse(&m.payload)?)),
            MessageKind::Error => Ok(Reply::Error(ErrorPayload::parse(&m.payload)?)),
            MessageKind::Frame => Err(WireError::Payload {
                kind: m.kind,
                reason: "hosts do not accept frames".into(),
            }),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LinkError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("link closed before a reply arrived")]
    Closed,
}

/// Host end of a link: one request in flight at a time.
pub struct HostLink<R, W> {
    reader: R,
    writer: W,
    decoder: Decoder,
}

impl<R: Read, W: Write> HostLink<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        HostLink {
            reader,
            writer,
            decoder: Decoder::new(),
        }
    }

    pub fn send(&mut self, m: &WireMessage) -> Result<(), LinkError> {
        self.writer.write_all(&encode_message(m))?;
        self.writer.flush()?;
        Ok(())
    }

    /// Blocks until the next intact message arrives.
    pub fn receive(&mut self) -> Result<Reply, LinkError> {
        let mut buf = [0u8; 4096];
        loop {
            while let Some(event) = self.decoder.next_event() {
                match event {
                    Ok(m) => return Ok(Reply::parse(&m)?),
                    Err(e) => log::warn!("host: {e}"),
                }
            }
            match self.reader.read(&mut buf) {
                Ok(0) => return Err(LinkError::Closed),
                Ok(n) => self.decoder.push(&buf[..n]),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }

    pub fn request(&mut self, m: &WireMessage) -> Result<Reply, LinkError> {
        self.send(m)?;
        self.receive()
    }

    pub fn request_gaze(&mut self, frame: &Image) -> Result<Reply, LinkError> {
        let m = FramePayload::from_image(frame)?.to_message()?;
        self.request(&m)
    }

    pub fn into_parts(self) -> (R, W) {
        (self.reader, self.writer)
    }
}

/// Read half of an in-memory byte pipe. Reads block until data arrives
/// and return 0 once every writer is gone.
#[derive(Debug)]
pub struct PipeReader {
    rx: Receiver<Vec<u8>>,
    chunk: Vec<u8>,
    offset: usize,
}

#[derive(Debug, Clone)]
pub struct PipeWriter {
    tx: Sender<Vec<u8>>,
}

pub fn pipe() -> (PipeWriter, PipeReader) {
    let (tx, rx) = channel();
    (
        PipeWriter { tx },
        PipeReader {
            rx,
            chunk: Vec::new(),
            offset: 0,
        },
    )
}

impl Read for PipeReader {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        while self.offset == self.chunk.len() {
            match self.rx.recv() {
                Ok(chunk) => {
                    self.chunk = chunk;
                    self.offset = 0;
                }
                Err(_) => return Ok(0),
            }
        }
        let n = buf.len().min(self.chunk.len() - self.offset);
        buf[..n].copy_from_slice(&self.chunk[self.offset..self.offset + n]);
        self.offset += n;
        Ok(n)
    }
}

impl Write for PipeWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        self.tx
            .send(buf.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "pipe reader dropped"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// One end of a duplex link.
#[derive(Debug)]
pub struct Endpoint {
    pub reader: PipeReader,
    pub writer: PipeWriter,
}

/// Two connected endpoints: bytes written on one are read on the other.
pub fn loopback() -> (Endpoint, Endpoint) {
    let (a_tx, b_rx) = pipe();
    let (b_tx, a_rx) = pipe();
    (
        Endpoint {
            reader: a_rx,
            writer: a_tx,
        },
        Endpoint {
            reader: b_rx,
            writer: b_tx,
        },
    )
}
