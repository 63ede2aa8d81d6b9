//! Serial demo link: message framing, the device loop and the host overlay.

mod codec;
mod overlay;
mod serve;

pub use codec::{
    crc16, decode_stream, encode_message, Decoder, DecoderStats, ErrorCode, ErrorPayload, FramePayload, GazePayload,
    MessageKind, StatsPayload, WireError, WireMessage, FORMAT_GRAY8, FORMAT_RGB888, FRAME_HEADER_LEN, GAZE_LEN,
    HEADER_LEN, MAX_ERROR_TEXT, MAX_PAYLOAD, STATS_LEN, SYNC, TRAILER_LEN,
};
pub use overlay::{dot_radius, draw_dot, encode_ppm, host_overlay, OverlayGeometry, DOT_COLOR};
pub use serve::{
    device_serve, loopback, pipe, Endpoint, HostLink, LinkError, PipeReader, PipeWriter, Reply, ServeSummary,
};
