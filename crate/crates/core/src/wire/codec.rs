//! Byte framing: `A5 | kind | u32 len | payload | crc16`, all little-endian.
//! The CRC (CRC-16/CCITT-FALSE) covers kind, length and payload.

use crc::{Crc, CRC_16_IBM_3740};
use thiserror::Error;

pub const SYNC: u8 = 0xA5;
pub const HEADER_LEN: usize = 6;
pub const TRAILER_LEN: usize = 2;
/// Exclusive upper bound on any payload length.
pub const MAX_PAYLOAD: usize = 1 << 24;

const CRC16: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);

pub fn crc16(bytes: &[u8]) -> u16 {
    CRC16.checksum(bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageKind {
    Frame = 0x01,
    Gaze = 0x02,
    Stats = 0x03,
    Error = 0x7F,
}

impl MessageKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x01 => Some(MessageKind::Frame),
            0x02 => Some(MessageKind::Gaze),
            0x03 => Some(MessageKind::Stats),
            0x7F => Some(MessageKind::Error),
            _ => None,
        }
    }

    /// Whether a payload of `len` bytes is well-formed for this kind.
    pub fn accepts_len(self, len: usize) -> bool {
        match self {
            MessageKind::Frame => (FRAME_HEADER_LEN..MAX_PAYLOAD).contains(&len),
            MessageKind::Gaze => len == GAZE_LEN,
            MessageKind::Stats => len == 0 || len == STATS_LEN,
            MessageKind::Error => (1..=1 + MAX_ERROR_TEXT).contains(&len),
        }
    }
}

pub const FRAME_HEADER_LEN: usize = 5;
pub const GAZE_LEN: usize = 12;
pub const STATS_LEN: usize = 16;
pub const MAX_ERROR_TEXT: usize = 255;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub kind: MessageKind,
    pub payload: Vec<u8>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("payload of {len} bytes is not valid for {kind:?}")]
    BadLength { kind: MessageKind, len: usize },
    #[error("unknown message kind 0x{0:02x}")]
    UnknownKind(u8),
    #[error("checksum mismatch: stored 0x{stored:04x}, computed 0x{computed:04x}")]
    ChecksumMismatch { stored: u16, computed: u16 },
    #[error("stream ended inside a {0}-byte candidate message")]
    Truncated(usize),
    #[error("abandoned a {len}-byte FRAME candidate whose length disagrees with its header")]
    Abandoned { len: usize },
    #[error("malformed {kind:?} payload: {reason}")]
    Payload { kind: MessageKind, reason: String },
}

impl WireMessage {
    pub fn new(kind: MessageKind, payload: Vec<u8>) -> Result<Self, WireError> {
        if !kind.accepts_len(payload.len()) {
            return Err(WireError::BadLength {
                kind,
                len: payload.len(),
            });
        }
        Ok(WireMessage { kind, payload })
    }
}

pub fn encode_message(m: &WireMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.payload.len() + TRAILER_LEN);
    out.push(SYNC);
    out.push(m.kind as u8);
    out.extend_from_slice(&(m.payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&m.payload);
    let crc = crc16(&out[1..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Decodes a complete byte stream, discarding corrupt frames.
pub fn decode_stream(bytes: &[u8]) -> Vec<WireMessage> {
    let mut d = Decoder::new();
    d.push(bytes);
    let mut out: Vec<WireMessage> = std::iter::from_fn(|| d.next_event()).filter_map(Result::ok).collect();
    out.extend(d.finish().into_iter().filter_map(Result::ok));
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecoderStats {
    pub messages: u64,
    pub checksum_failures: u64,
    pub bad_headers: u64,
    /// Bytes discarded while hunting for a sync byte.
    pub skipped_bytes: u64,
}

/// Resumable decoder: feed bytes in any split, pull messages out.
///
/// On any framing failure only the sync byte is dropped and scanning resumes
/// at the next byte, so a corrupt candidate never swallows later frames.
/// A FRAME candidate whose length disagrees with its own width, height and
/// format is given up as soon as a complete intact message is buffered
/// behind it; otherwise a flipped length bit could stall the link for up to
/// `MAX_PAYLOAD` bytes.
#[derive(Debug, Default)]
pub struct Decoder {
    buf: Vec<u8>,
    pos: usize,
    stats: DecoderStats,
}

enum Step {
    Need,
    Done(Result<WireMessage, WireError>),
}

impl Decoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> DecoderStats {
        self.stats
    }

    /// Bytes buffered but not yet consumed.
    pub fn pending(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.pos > 0 && self.pos >= self.buf.len() / 2 {
            self.buf.drain(..self.pos);
            self.pos = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    /// Next decoded message or framing diagnostic; `None` when more bytes
    /// are needed.
    pub fn next_event(&mut self) -> Option<Result<WireMessage, WireError>> {
        match self.step() {
            Step::Need => None,
            Step::Done(r) => Some(r),
        }
    }

    /// End of stream: resolves whatever is still buffered. A candidate that
    /// can never complete loses its sync byte and the rest is rescanned.
    pub fn finish(&mut self) -> Vec<Result<WireMessage, WireError>> {
        let mut out = Vec::new();
        loop {
            match self.step() {
                Step::Done(r) => out.push(r),
                Step::Need if self.pending() == 0 => break,
                Step::Need => {
                    let err = WireError::Truncated(self.pending());
                    log::debug!("wire: {err}");
                    self.pos += 1;
                    self.stats.bad_headers += 1;
                    out.push(Err(err));
                }
            }
        }
        out
    }

    fn reject(&mut self, err: WireError) -> Step {
        log::debug!("wire: dropping candidate: {err}");
        self.pos += 1;
        Step::Done(Err(err))
    }

    fn step(&mut self) -> Step {
        let rest = &self.buf[self.pos..];
        let skip = rest.iter().position(|&b| b == SYNC).unwrap_or(rest.len());
        if skip > 0 {
            log::trace!("wire: skipped {skip} bytes before sync");
            self.stats.skipped_bytes += skip as u64;
            self.pos += skip;
        }
        let rest = &self.buf[self.pos..];
        if rest.len() < HEADER_LEN {
            return Step::Need;
        }
        let Some(kind) = MessageKind::from_byte(rest[1]) else {
            self.stats.bad_headers += 1;
            return self.reject(WireError::UnknownKind(rest[1]));
        };
        let len = u32::from_le_bytes([rest[2], rest[3], rest[4], rest[5]]) as usize;
        if !kind.accepts_len(len) {
            self.stats.bad_headers += 1;
            return self.reject(WireError::BadLength { kind, len });
        }
        let total = HEADER_LEN + len + TRAILER_LEN;
        if rest.len() < total {
            if kind == MessageKind::Frame && frame_len_disagrees(rest, len) && intact_message_in(&rest[1..]) {
                self.stats.bad_headers += 1;
                return self.reject(WireError::Abandoned { len });
            }
            return Step::Need;
        }
        let stored = u16::from_le_bytes([rest[total - 2], rest[total - 1]]);
        let computed = crc16(&rest[1..total - 2]);
        if stored != computed {
            self.stats.checksum_failures += 1;
            return self.reject(WireError::ChecksumMismatch { stored, computed });
        }
        let payload = rest[HEADER_LEN..HEADER_LEN + len].to_vec();
        self.pos += total;
        self.stats.messages += 1;
        Step::Done(Ok(WireMessage { kind, payload }))
    }
}

/// Whether a FRAME candidate's declared length contradicts its pixel header.
/// Unknown until the pixel header has arrived.
fn frame_len_disagrees(candidate: &[u8], len: usize) -> bool {
    let Some(h) = candidate.get(HEADER_LEN..HEADER_LEN + FRAME_HEADER_LEN) else {
        return false;
    };
    let (w, ht) = (u16::from_le_bytes([h[0], h[1]]), u16::from_le_bytes([h[2], h[3]]));
    let channels = match h[4] {
        FORMAT_GRAY8 => 1,
        FORMAT_RGB888 => 3,
        _ => return true,
    };
    len != FRAME_HEADER_LEN + usize::from(w) * usize::from(ht) * channels
}

/// Whether `bytes` holds a complete message with a valid checksum.
fn intact_message_in(bytes: &[u8]) -> bool {
    (0..bytes.len()).filter(|&i| bytes[i] == SYNC).any(|i| {
        let m = &bytes[i..];
        if m.len() < HEADER_LEN + TRAILER_LEN {
            return false;
        }
        let Some(kind) = MessageKind::from_byte(m[1]) else {
            return false;
        };
        let len = u32::from_le_bytes([m[2], m[3], m[4], m[5]]) as usize;
        let total = HEADER_LEN + len + TRAILER_LEN;
        kind.accepts_len(len)
            && m.len() >= total
            && crc16(&m[1..total - 2]) == u16::from_le_bytes([m[total - 2], m[total - 1]])
    })
}

/// Device error codes carried in ERROR replies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ErrorCode {
    BadDimensions = 1,
    BadFormat = 2,
    UnexpectedKind = 3,
    Internal = 4,
}

impl ErrorCode {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(ErrorCode::BadDimensions),
            2 => Some(ErrorCode::BadFormat),
            3 => Some(ErrorCode::UnexpectedKind),
            4 => Some(ErrorCode::Internal),
            _ => None,
        }
    }
}

/// FRAME payload: `u16 width | u16 height | u8 format | pixels`.
/// Format 0 is 8-bit gray, 1 is packed RGB.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePayload {
    pub width: u16,
    pub height: u16,
    pub format: u8,
    pub pixels: Vec<u8>,
}

pub const FORMAT_GRAY8: u8 = 0;
pub const FORMAT_RGB888: u8 = 1;

impl FramePayload {
    pub fn to_message(&self) -> Result<WireMessage, WireError> {
        let mut p = Vec::with_capacity(FRAME_HEADER_LEN + self.pixels.len());
        p.extend_from_slice(&self.width.to_le_bytes());
        p.extend_from_slice(&self.height.to_le_bytes());
        p.push(self.format);
        p.extend_from_slice(&self.pixels);
        WireMessage::new(MessageKind::Frame, p)
    }

    pub fn parse(payload: &[u8]) -> Result<Self, WireError> {
        if payload.len() < FRAME_HEADER_LEN {
            return Err(WireError::BadLength {
                kind: MessageKind::Frame,
                len: payload.len(),
            });
        }
        Ok(FramePayload {
            width: u16::from_le_bytes([payload[0], payload[1]]),
            height: u16::from_le_bytes([payload[2], payload[3]]),
            format: payload[4],
            pixels: payload[FRAME_HEADER_LEN..].to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazePayload {
    pub x_cm: f32,
    pub y_cm: f32,
    pub micros: u32,
}

impl GazePayload {
    pub fn to_message(&self) -> WireMessage {
        let mut p = Vec::with_capacity(GAZE_LEN);
        p.extend_from_slice(&self.x_cm.to_le_bytes());
        p.extend_from_slice(&self.y_cm.to_le_bytes());
        p.extend_from_slice(&self.micros.to_le_bytes());
        WireMessage {
            kind: MessageKind::Gaze,
            payload: p,
        }
    }

    pub fn parse(payload: &[u8]) -> Result<Self, WireError> {
        let b: &[u8; GAZE_LEN] = payload.try_into().map_err(|_| WireError::BadLength {
            kind: MessageKind::Gaze,
            len: payload.len(),
        })?;
        Ok(GazePayload {
            x_cm: f32::from_le_bytes([b[0], b[1], b[2], b[3]]),
            y_cm: f32::from_le_bytes([b[4], b[5], b[6], b[7]]),
            micros: u32::from_le_bytes([b[8], b[9], b[10], b[11]]),
        })
    }
}

/// STATS reply counters. A STATS request has an empty payload.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StatsPayload {
    pub frames_ok: u32,
    pub error_replies: u32,
    pub checksum_failures: u32,
    pub bad_headers: u32,
}

impl StatsPayload {
    pub fn request() -> WireMessage {
        WireMessage {
            kind: MessageKind::Stats,
            payload: Vec::new(),
        }
    }

    pub fn to_message(&self) -> WireMessage {
        let payload = [
            self.frames_ok,
            self.error_replies,
            self.checksum_failures,
            self.bad_headers,
        ]
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
        WireMessage {
            kind: MessageKind::Stats,
            payload,
        }
    }

    pub fn parse(payload: &[u8]) -> Result<Self, WireError> {
        if payload.len() != STATS_LEN {
            return Err(WireError::BadLength {
                kind: MessageKind::Stats,
                len: payload.len(),
            });
        }
        let word = |i: usize| u32::from_le_bytes([payload[i], payload[i + 1], payload[i + 2], payload[i + 3]]);
        Ok(StatsPayload {
            frames_ok: word(0),
            error_replies: word(4),
            checksum_failures: word(8),
            bad_headers: word(12),
        })
    }
}

/// ERROR payload: `u8 code | UTF-8 text` (text at most 255 bytes).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorPayload {
    pub code: u8,
    pub message: String,
}

impl ErrorPayload {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        let mut message = message.into();
        if message.len() > MAX_ERROR_TEXT {
            let mut cut = MAX_ERROR_TEXT;
            while !message.is_char_boundary(cut) {
                cut -= 1;
            }
            message.truncate(cut);
        }
        ErrorPayload {
            code: code as u8,
            message,
        }
    }

    pub fn to_message(&self) -> WireMessage {
        let mut p = vec![self.code];
        p.extend_from_slice(&self.message.as_bytes()[..self.message.len().min(MAX_ERROR_TEXT)]);
        WireMessage {
            kind: MessageKind::Error,
            payload: p,
        }
    }

    pub fn parse(payload: &[u8]) -> Result<Self, WireError> {
        let (&code, text) = payload.split_first().ok_or(WireError::BadLength {
            kind: MessageKind::Error,
            len: 0,
        })?;
        Ok(ErrorPayload {
            code,
            message: String::from_utf8_lossy(text).into_owned(),
        })
    }
}
