//! Tracking by bounding-box regression, with oracle components, CLEAR MOT
//! evaluation, failure-mode analyses and a synthetic data generator.

// `!(x > 0.0)` is how config checks reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod assignment;
pub mod backends;
pub mod geometry;
pub mod manifest;
pub mod metrics;
pub mod motio;
pub mod motion;
pub mod oracles;
pub mod sequence;
pub mod synth;
pub mod tracker;

pub use geometry::{iou, nms, BoundingBox, Detection, FrameIndex, Transform2D, TransformKind};
