//! Backend living in a child process, spoken to with newline-delimited JSON.
//!
//! Requests: `{"op":"reg_and_class","frame":N,"boxes":[[x,y,w,h],...]}` or
//! `{"op":"detect","frame":N}`. Responses: `{"boxes":[[x,y,w,h],...],"scores":[s,...]}`.
//! One line each way per call, answered in order.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::geometry::{BoundingBox, Detection, FrameIndex};

use super::{BackendError, Regression, RegressorClassifier};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    RegAndClass { frame: u32, boxes: Vec<[f64; 4]> },
    Detect { frame: u32 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub boxes: Vec<[f64; 4]>,
    pub scores: Vec<f64>,
}

/// Program and arguments of the child process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub program: String,
    pub args: Vec<String>,
}

impl ProcessSpec {
    pub fn new(
        program: impl Into<String>,
        args: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        Self {
            program: program.into(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }

    /// Runs `command` through `sh -c`.
    pub fn shell(command: &str) -> Self {
        Self::new("sh", ["-c", command])
    }
}

fn to_array(b: &BoundingBox) -> [f64; 4] {
    [b.x, b.y, b.w, b.h]
}

fn from_array(a: [f64; 4], payload: &str) -> Result<BoundingBox, BackendError> {
    BoundingBox::new(a[0], a[1], a[2], a[3]).map_err(|e| BackendError::Malformed {
        reason: e.to_string(),
        payload: payload.to_string(),
    })
}

pub struct ExternalBackend {
    spec: ProcessSpec,
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    poisoned: bool,
}

impl ExternalBackend {
    pub fn spawn(spec: ProcessSpec, timeout: Duration) -> Result<Self, BackendError> {
        let mut child = Command::new(&spec.program)
            .args(&spec.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Self {
            spec,
            child,
            stdin,
            lines: rx,
            timeout,
            poisoned: false,
        })
    }

    fn exchange(&mut self, req: &Request) -> Result<(Response, String), BackendError> {
        if self.poisoned {
            return Err(BackendError::Poisoned);
        }
        let request = serde_json::to_string(req).expect("requests always serialize");
        let result = self.exchange_raw(&request);
        if result.is_err() {
            self.poisoned = true;
        }
        result
    }

    fn exchange_raw(&mut self, request: &str) -> Result<(Response, String), BackendError> {
        let exited = |payload: &str| BackendError::Exited {
            payload: payload.to_string(),
        };
        if writeln!(self.stdin, "{request}")
            .and_then(|_| self.stdin.flush())
            .is_err()
        {
            return Err(exited(request));
        }
        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(_)) | Err(RecvTimeoutError::Disconnected) => return Err(exited(request)),
            Err(RecvTimeoutError::Timeout) => {
                return Err(BackendError::Timeout {
                    seconds: self.timeout.as_secs_f64(),
                    payload: request.to_string(),
                })
            }
        };
        let resp: Response = serde_json::from_str(&line).map_err(|e| BackendError::Malformed {
            reason: e.to_string(),
            payload: line.clone(),
        })?;
        if resp.boxes.len() != resp.scores.len() {
            return Err(BackendError::Malformed {
                reason: format!(
                    "{} boxes but {} scores",
                    resp.boxes.len(),
                    resp.scores.len()
                ),
                payload: line,
            });
        }
        if let Some(s) = resp.scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(BackendError::Malformed {
                reason: format!("score {s} outside [0, 1]"),
                payload: line,
            });
        }
        Ok((resp, line))
    }
}

impl RegressorClassifier for ExternalBackend {
    fn reg_and_class(
        &mut self,
        frame: FrameIndex,
        boxes: &[BoundingBox],
    ) -> Result<Regression, BackendError> {
        let req = Request::RegAndClass {
            frame: frame.get(),
            boxes: boxes.iter().map(to_array).collect(),
        };
        let (resp, line) = self.exchange(&req)?;
        if resp.boxes.len() != boxes.len() {
            self.poisoned = true;
            return Err(BackendError::Malformed {
                reason: format!("{} results for {} boxes", resp.boxes.len(), boxes.len()),
                payload: line,
            });
        }
        Ok(Regression {
            boxes: resp
                .boxes
                .into_iter()
                .map(|a| from_array(a, &line))
                .collect::<Result<_, _>>()?,
            scores: resp.scores,
        })
    }

    fn detect(&mut self, frame: FrameIndex) -> Result<Vec<Detection>, BackendError> {
        let (resp, line) = self.exchange(&Request::Detect { frame: frame.get() })?;
        resp.boxes
            .into_iter()
            .zip(resp.scores)
            .map(|(a, score)| {
                Ok(Detection {
                    bbox: from_array(a, &line)?,
                    score,
                })
            })
            .collect()
    }

    fn describe(&self) -> String {
        format!(
            "external({} {})",
            self.spec.program,
            self.spec.args.join(" ")
        )
    }
}

impl Drop for ExternalBackend {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Answers protocol requests from `input` with `backend` until EOF.
///
/// Stops at the first malformed request or backend error.
pub fn serve<R: BufRead, W: Write>(
    backend: &mut dyn RegressorClassifier,
    input: R,
    mut output: W,
) -> Result<(), BackendError> {
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: Request = serde_json::from_str(&line).map_err(|e| BackendError::Malformed {
            reason: format!("request {}: {e}", i + 1),
            payload: line.clone(),
        })?;
        let frame_of = |t: u32| {
            FrameIndex::new(t).map_err(|_| BackendError::Malformed {
                reason: "frame must be >= 1".into(),
                payload: line.clone(),
            })
        };
        let resp = match req {
            Request::RegAndClass { frame, boxes } => {
                let boxes: Vec<BoundingBox> = boxes
                    .into_iter()
                    .map(|a| from_array(a, &line))
                    .collect::<Result<_, _>>()?;
                let r = super::reg_and_class_checked(backend, frame_of(frame)?, &boxes)?;
                Response {
                    boxes: r.boxes.iter().map(to_array).collect(),
                    scores: r.scores,
                }
            }
            Request::Detect { frame } => {
                let dets = super::detect_checked(backend, frame_of(frame)?)?;
                Response {
                    boxes: dets.iter().map(|d| to_array(&d.bbox)).collect(),
                    scores: dets.iter().map(|d| d.score).collect(),
                }
            }
        };
        serde_json::to_writer(&mut output, &resp).map_err(std::io::Error::from)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}
