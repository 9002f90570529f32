//! Replay of recorded detector answers.
//!
//! Log layout: regression records `frame,in_x,in_y,in_w,in_h,out_x,out_y,out_w,out_h,score`,
//! optionally preceded by a `[regressions]` header, then an optional
//! `[detections]` section holding MOTChallenge detection lines.
//! Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use crate::geometry::{iou, BoundingBox, Detection, FrameIndex};
use crate::motio::{self, DetectionSet};

use super::{BackendError, Regression, RegressorClassifier};

/// Minimum IoU between a query and a logged input box for a lookup hit.
pub const LOOKUP_IOU: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Record {
    input: BoundingBox,
    output: BoundingBox,
    score: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FileBackend {
    records: BTreeMap<FrameIndex, Vec<Record>>,
    detections: DetectionSet,
}

fn log_err(line: usize, message: impl Into<String>) -> BackendError {
    BackendError::Log {
        line,
        message: message.into(),
    }
}

impl FileBackend {
    pub fn from_reader<R: BufRead>(source: R) -> Result<Self, BackendError> {
        let mut records: BTreeMap<FrameIndex, Vec<Record>> = BTreeMap::new();
        let mut det_text = String::new();
        let mut in_detections = false;
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            let n = i + 1;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                if in_detections {
                    det_text.push('\n');
                }
                continue;
            }
            match t {
                "[regressions]" => {
                    in_detections = false;
                    continue;
                }
                "[detections]" => {
                    in_detections = true;
                    continue;
                }
                _ => {}
            }
            if in_detections {
                det_text.push_str(t);
                det_text.push('\n');
                continue;
            }
            let f: Vec<&str> = t.split(',').map(str::trim).collect();
            if f.len() != 10 {
                return Err(log_err(n, format!("expected 10 fields, found {}", f.len())));
            }
            let v: Vec<f64> = f
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| log_err(n, "non-numeric field"))?;
            let frame = FrameIndex::new(v[0] as u32)
                .ok()
                .filter(|_| v[0].fract() == 0.0 && v[0] >= 1.0)
                .ok_or_else(|| log_err(n, "invalid frame"))?;
            let input =
                BoundingBox::new(v[1], v[2], v[3], v[4]).map_err(|e| log_err(n, e.to_string()))?;
            let output =
                BoundingBox::new(v[5], v[6], v[7], v[8]).map_err(|e| log_err(n, e.to_string()))?;
            if !(0.0..=1.0).contains(&v[9]) {
                return Err(log_err(n, format!("score {} outside [0, 1]", v[9])));
            }
            records.entry(frame).or_default().push(Record {
                input,
                output,
                score: v[9],
            });
        }
        let detections = motio::parse_detections(det_text.as_bytes()).map_err(|e| match e {
            motio::MotIoError::Line { line, message } => {
                log_err(line, format!("[detections] {message}"))
            }
            other => log_err(0, other.to_string()),
        })?;
        Ok(Self {
            records,
            detections,
        })
    }

    fn lookup(&self, frame: FrameIndex, q: &BoundingBox) -> Option<&Record> {
        self.records
            .get(&frame)?
            .iter()
            .map(|r| (iou(&r.input, q), r))
            .filter(|(v, _)| *v >= LOOKUP_IOU)
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, r)| r)
    }
}

impl RegressorClassifier for FileBackend {
    fn reg_and_class(
        &mut self,
        frame: FrameIndex,
        boxes: &[BoundingBox],
    ) -> Result<Regression, BackendError> {
        let mut out = Regression::default();
        for q in boxes {
            let r = self
                .lookup(frame, q)
                .ok_or(BackendError::Lookup { frame, bbox: *q })?;
            out.boxes.push(r.output);
            out.scores.push(r.score);
        }
        Ok(out)
    }

    fn detect(&mut self, frame: FrameIndex) -> Result<Vec<Detection>, BackendError> {
        Ok(self.detections.frame(frame).to_vec())
    }

    fn describe(&self) -> String {
        format!(
            "file({} regressions, {} detections)",
            self.records.values().map(Vec::len).sum::<usize>(),
            self.detections.len()
        )
    }
}

/// Wraps a backend and records every answer in the replay log format.
pub struct RecordingBackend<B> {
    inner: B,
    regressions: String,
    detections: DetectionSet,
}

impl<B: RegressorClassifier> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            regressions: String::new(),
            detections: DetectionSet::default(),
        }
    }

    /// Full log: regression records followed by the detections section.
    pub fn log(&self) -> String {
        let mut s = String::from("[regressions]\n");
        s.push_str(&self.regressions);
        s.push_str("[detections]\n");
        for (frame, dets) in &self.detections.frames {
            for d in dets {
                let b = d.bbox;
                let _ = writeln!(
                    s,
                    "{frame},-1,{},{},{},{},{},-1,-1,-1",
                    b.x, b.y, b.w, b.h, d.score
                );
            }
        }
        s
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

impl<B: RegressorClassifier> RegressorClassifier for RecordingBackend<B> {
    fn reg_and_class(
        &mut self,
        frame: FrameIndex,
        boxes: &[BoundingBox],
    ) -> Result<Regression, BackendError> {
        let out = self.inner.reg_and_class(frame, boxes)?;
        for ((i, o), s) in boxes.iter().zip(&out.boxes).zip(&out.scores) {
            // full precision so replays are exact
            let _ = writeln!(
                self.regressions,
                "{frame},{},{},{},{},{},{},{},{},{s}",
                i.x, i.y, i.w, i.h, o.x, o.y, o.w, o.h
            );
        }
        Ok(out)
    }

    fn detect(&mut self, frame: FrameIndex) -> Result<Vec<Detection>, BackendError> {
        let dets = self.inner.detect(frame)?;
        self.detections
            .frames
            .entry(frame)
            .or_default()
            .extend(dets.iter().copied());
        Ok(dets)
    }

    fn describe(&self) -> String {
        format!("recording({})", self.inner.describe())
    }
}
