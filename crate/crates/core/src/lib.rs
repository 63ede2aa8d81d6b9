//! Integer-only inference runtime and gaze-estimation pipeline for a
//! tiny depthwise-separable network under a 128 KiB tensor budget.

pub mod bench;
pub mod gaze;
pub mod graph;
pub mod kernels;
pub mod qcore;
pub mod wire;
