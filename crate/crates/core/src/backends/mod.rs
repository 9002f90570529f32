//! Regressor/classifier backends standing in for the neural detector.
//!
//! The tracker only talks to [`RegressorClassifier`]. Three implementations
//! ship here: a ground-truth oracle with a seeded noise model, a replay of a
//! recorded regression log, and a child process speaking newline-delimited
//! JSON. Every response is validated at the boundary by the `*_checked`
//! helpers before the tracker sees it.

mod external;
mod file;
mod gt_oracle;
mod noise;

pub use external::{serve, ExternalBackend, ProcessSpec, Request, Response};
pub use file::{FileBackend, RecordingBackend};
pub use gt_oracle::GtOracle;
pub use noise::{NoiseError, NoiseModel};

use thiserror::Error;

use crate::geometry::{BoundingBox, Detection, FrameIndex};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend returned {got} results for {expected} boxes")]
    Arity { expected: usize, got: usize },
    #[error("backend returned score {0} outside [0, 1]")]
    Score(f64),
    #[error("backend returned an invalid box {0:?}")]
    InvalidBox([f64; 4]),
    #[error("no logged regression for frame {frame} box {bbox:?}")]
    Lookup {
        frame: FrameIndex,
        bbox: BoundingBox,
    },
    #[error("malformed response ({reason}): {payload}")]
    Malformed { reason: String, payload: String },
    #[error("no response within {seconds}s to request: {payload}")]
    Timeout { seconds: f64, payload: String },
    #[error("backend process exited before answering: {payload}")]
    Exited { payload: String },
    #[error("backend is unusable after an earlier protocol failure")]
    Poisoned,
    #[error("regression log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Output of one `reg_and_class` call, index-aligned with the input boxes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Regression {
    pub boxes: Vec<BoundingBox>,
    pub scores: Vec<f64>,
}

/// The detector role: regress boxes from the previous frame onto the current
/// frame and classify them, and produce fresh detections.
pub trait RegressorClassifier {
    /// Regressed boxes and classification scores, same length and order as
    /// `boxes`.
    fn reg_and_class(
        &mut self,
        frame: FrameIndex,
        boxes: &[BoundingBox],
    ) -> Result<Regression, BackendError>;

    /// Detections for the whole frame.
    fn detect(&mut self, frame: FrameIndex) -> Result<Vec<Detection>, BackendError>;

    /// Short identity string recorded in run manifests.
    fn describe(&self) -> String;
}

fn check_score(s: f64) -> Result<(), BackendError> {
    if (0.0..=1.0).contains(&s) {
        Ok(())
    } else {
        Err(BackendError::Score(s))
    }
}

fn check_box(b: &BoundingBox) -> Result<(), BackendError> {
    if b.is_valid() {
        Ok(())
    } else {
        Err(BackendError::InvalidBox([b.x, b.y, b.w, b.h]))
    }
}

/// Calls `reg_and_class` and enforces the interface invariants on the answer.
pub fn reg_and_class_checked(
    backend: &mut dyn RegressorClassifier,
    frame: FrameIndex,
    boxes: &[BoundingBox],
) -> Result<Regression, BackendError> {
    let out = backend.reg_and_class(frame, boxes)?;
    if out.boxes.len() != boxes.len() || out.scores.len() != boxes.len() {
        return Err(BackendError::Arity {
            expected: boxes.len(),
            got: out.boxes.len().min(out.scores.len()),
        });
    }
    out.boxes.iter().try_for_each(check_box)?;
    out.scores.iter().copied().try_for_each(check_score)?;
    Ok(out)
}

/// Calls `detect` and enforces the interface invariants on the answer.
pub fn detect_checked(
    backend: &mut dyn RegressorClassifier,
    frame: FrameIndex,
) -> Result<Vec<Detection>, BackendError> {
    let dets = backend.detect(frame)?;
    for d in &dets {
        check_box(&d.bbox)?;
        check_score(d.score)?;
    }
    Ok(dets)
}

impl<B: RegressorClassifier + ?Sized> RegressorClassifier for Box<B> {
    fn reg_and_class(
        &mut self,
        frame: FrameIndex,
        boxes: &[BoundingBox],
    ) -> Result<Regression, BackendError> {
        (**self).reg_and_class(frame, boxes)
    }

    fn detect(&mut self, frame: FrameIndex) -> Result<Vec<Detection>, BackendError> {
        (**self).detect(frame)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}
