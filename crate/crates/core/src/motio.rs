//! MOTChallenge text formats: ground truth, public detections, tracker
//! results and `seqinfo.ini` metadata.
//!
//! All numbers are parsed and printed with `.` as decimal separator
//! regardless of locale.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundingBox, Detection, FrameIndex};
use crate::tracker::Track;

#[derive(Debug, Error)]
pub enum MotIoError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("seqinfo: {0}")]
    SeqInfo(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One malformed input line, reported by the lenient parsers.
#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

impl From<LineError> for MotIoError {
    fn from(e: LineError) -> Self {
        MotIoError::Line {
            line: e.line,
            message: e.message,
        }
    }
}

/// Entries parsed successfully plus one error per rejected line.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseReport<T> {
    pub entries: Vec<T>,
    pub errors: Vec<LineError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtEntry {
    pub frame: FrameIndex,
    pub track_id: u64,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    /// Consideration flag, 0 or 1.
    pub conf: u8,
    pub class_id: i32,
    pub visibility: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub frame: FrameIndex,
    pub track_id: u64,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub conf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceInfo {
    pub name: String,
    pub frame_rate: f64,
    pub width: u32,
    pub height: u32,
    pub length: u32,
    pub image_dir: Option<String>,
}

/// A detection score that was outside `[0, 1]` in the file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClampedScore {
    pub line: usize,
    pub frame: FrameIndex,
    pub raw: f64,
}

/// Public detections grouped by frame, in file order within a frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionSet {
    pub frames: BTreeMap<FrameIndex, Vec<Detection>>,
    pub clamped: Vec<ClampedScore>,
}

impl DetectionSet {
    pub fn frame(&self, t: FrameIndex) -> &[Detection] {
        self.frames.get(&t).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Which ground-truth rows count for evaluation: `conf == 1` and a class in
/// `classes` (pedestrian = 1 by default).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsiderRule {
    pub classes: Vec<i32>,
}

impl Default for ConsiderRule {
    fn default() -> Self {
        Self { classes: vec![1] }
    }
}

impl ConsiderRule {
    pub fn considers(&self, e: &GtEntry) -> bool {
        e.conf == 1 && self.classes.contains(&e.class_id)
    }
}

/// One considered ground-truth box within a frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub id: u64,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub visibility: f64,
}

/// Considered ground truth indexed by frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    frames: BTreeMap<FrameIndex, Vec<GtBox>>,
}

impl GroundTruth {
    pub fn from_entries(entries: &[GtEntry], rule: &ConsiderRule) -> Self {
        let mut frames: BTreeMap<FrameIndex, Vec<GtBox>> = BTreeMap::new();
        for e in entries.iter().filter(|e| rule.considers(e)) {
            frames.entry(e.frame).or_default().push(GtBox {
                id: e.track_id,
                bbox: e.bbox,
                visibility: e.visibility,
            });
        }
        Self { frames }
    }

    pub fn frame(&self, t: FrameIndex) -> &[GtBox] {
        self.frames.get(&t).map_or(&[], Vec::as_slice)
    }

    pub fn has_frame(&self, t: FrameIndex) -> bool {
        self.frames.get(&t).is_some_and(|v| !v.is_empty())
    }

    pub fn iter(&self) -> impl Iterator<Item = (FrameIndex, &[GtBox])> {
        self.frames.iter().map(|(t, v)| (*t, v.as_slice()))
    }

    pub fn last_frame(&self) -> Option<FrameIndex> {
        self.frames.keys().next_back().copied()
    }

    pub fn box_count(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }
}

fn parse_fields(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn num<T: std::str::FromStr>(field: &str, name: &str, line: usize) -> Result<T, LineError> {
    field.parse::<T>().map_err(|_| LineError {
        line,
        message: format!("field `{name}` is not a number: {field:?}"),
    })
}

/// Integer field that may be written as a float (`1.0`) by some tools.
fn int_field(field: &str, name: &str, line: usize) -> Result<i64, LineError> {
    if let Ok(v) = field.parse::<i64>() {
        return Ok(v);
    }
    let f: f64 = num(field, name, line)?;
    if f.fract() == 0.0 && f.is_finite() {
        Ok(f as i64)
    } else {
        Err(LineError {
            line,
            message: format!("field `{name}` is not an integer: {field:?}"),
        })
    }
}

fn frame_field(field: &str, line: usize) -> Result<FrameIndex, LineError> {
    let t = int_field(field, "frame", line)?;
    u32::try_from(t)
        .ok()
        .and_then(|t| FrameIndex::new(t).ok())
        .ok_or_else(|| LineError {
            line,
            message: format!("frame must be >= 1, got {t}"),
        })
}

fn id_field(field: &str, line: usize) -> Result<u64, LineError> {
    let id = int_field(field, "id", line)?;
    u64::try_from(id)
        .ok()
        .filter(|&id| id > 0)
        .ok_or_else(|| LineError {
            line,
            message: format!("track id must be positive, got {id}"),
        })
}

fn box_fields(f: &[&str], line: usize) -> Result<BoundingBox, LineError> {
    let x = num(f[0], "x", line)?;
    let y = num(f[1], "y", line)?;
    let w = num(f[2], "w", line)?;
    let h = num(f[3], "h", line)?;
    BoundingBox::new(x, y, w, h).map_err(|e| LineError {
        line,
        message: e.to_string(),
    })
}

fn for_each_line<R: BufRead>(
    source: R,
    mut f: impl FnMut(usize, &str) -> Result<(), LineError>,
) -> io::Result<Vec<LineError>> {
    let mut errors = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Err(e) = f(i + 1, trimmed) {
            errors.push(e);
        }
    }
    Ok(errors)
}

fn parse_gt_line(lineno: usize, line: &str) -> Result<GtEntry, LineError> {
    let f = parse_fields(line);
    if f.len() != 9 {
        return Err(LineError {
            line: lineno,
            message: format!("expected 9 fields, found {}", f.len()),
        });
    }
    let frame = frame_field(f[0], lineno)?;
    let track_id = id_field(f[1], lineno)?;
    let bbox = box_fields(&f[2..6], lineno)?;
    let conf = match int_field(f[6], "conf", lineno)? {
        0 => 0,
        1 => 1,
        other => {
            return Err(LineError {
                line: lineno,
                message: format!("conf must be 0 or 1, got {other}"),
            })
        }
    };
    let class_id = int_field(f[7], "class", lineno)? as i32;
    let visibility: f64 = num(f[8], "visibility", lineno)?;
    if !(0.0..=1.0).contains(&visibility) {
        return Err(LineError {
            line: lineno,
            message: format!("visibility {visibility} outside [0, 1]"),
        });
    }
    Ok(GtEntry {
        frame,
        track_id,
        bbox,
        conf,
        class_id,
        visibility,
    })
}

/// Lenient ground-truth parse: every non-blank line yields either an entry
/// or an error.
pub fn parse_ground_truth_report<R: BufRead>(source: R) -> io::Result<ParseReport<GtEntry>> {
    let mut entries = Vec::new();
    let errors = for_each_line(source, |n, line| {
        entries.push(parse_gt_line(n, line)?);
        Ok(())
    })?;
    Ok(ParseReport { entries, errors })
}

/// Parses `frame,id,x,y,w,h,conf,class,visibility` lines in file order.
/// Fails on the first malformed line.
pub fn parse_ground_truth<R: BufRead>(source: R) -> Result<Vec<GtEntry>, MotIoError> {
    let report = parse_ground_truth_report(source)?;
    match report.errors.into_iter().next() {
        Some(e) => Err(e.into()),
        None => Ok(report.entries),
    }
}

/// Lenient detection parse; see [`parse_detections`].
pub fn parse_detections_report<R: BufRead>(
    source: R,
) -> io::Result<(DetectionSet, Vec<LineError>)> {
    let mut set = DetectionSet::default();
    let errors = for_each_line(source, |n, line| {
        let f = parse_fields(line);
        if !(7..=10).contains(&f.len()) {
            return Err(LineError {
                line: n,
                message: format!("expected 7 to 10 fields, found {}", f.len()),
            });
        }
        let frame = frame_field(f[0], n)?;
        let bbox = box_fields(&f[2..6], n)?;
        let raw: f64 = num(f[6], "score", n)?;
        if !raw.is_finite() {
            return Err(LineError {
                line: n,
                message: format!("score is not finite: {raw}"),
            });
        }
        let score = raw.clamp(0.0, 1.0);
        if score != raw {
            set.clamped.push(ClampedScore {
                line: n,
                frame,
                raw,
            });
        }
        set.frames
            .entry(frame)
            .or_default()
            .push(Detection { bbox, score });
        Ok(())
    })?;
    Ok((set, errors))
}

/// Parses `frame,-1,x,y,w,h,score[,-1,-1,-1]` lines grouped per frame.
/// Scores outside `[0, 1]` are clamped and recorded in `clamped`.
pub fn parse_detections<R: BufRead>(source: R) -> Result<DetectionSet, MotIoError> {
    let (set, errors) = parse_detections_report(source)?;
    match errors.into_iter().next() {
        Some(e) => Err(e.into()),
        None => Ok(set),
    }
}

/// Parses a tracker result file (`frame,id,x,y,w,h[,conf,...]`).
pub fn parse_results<R: BufRead>(source: R) -> Result<Vec<ResultEntry>, MotIoError> {
    let mut entries = Vec::new();
    let errors = for_each_line(source, |n, line| {
        let f = parse_fields(line);
        if !(6..=10).contains(&f.len()) {
            return Err(LineError {
                line: n,
                message: format!("expected 6 to 10 fields, found {}", f.len()),
            });
        }
        let conf = match f.get(6) {
            Some(c) => num(c, "conf", n)?,
            None => 1.0,
        };
        entries.push(ResultEntry {
            frame: frame_field(f[0], n)?,
            track_id: id_field(f[1], n)?,
            bbox: box_fields(&f[2..6], n)?,
            conf,
        });
        Ok(())
    })?;
    match errors.into_iter().next() {
        Some(e) => Err(e.into()),
        None => Ok(entries),
    }
}

fn fmt2(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

/// Flattens finished tracks into result rows sorted by `(frame, id)`.
pub fn result_entries(tracks: &[Track]) -> Vec<ResultEntry> {
    let mut rows: Vec<ResultEntry> = tracks
        .iter()
        .flat_map(|t| {
            t.boxes().iter().map(move |(frame, d)| ResultEntry {
                frame: *frame,
                track_id: t.id(),
                bbox: d.bbox,
                conf: d.score,
            })
        })
        .collect();
    rows.sort_by_key(|r| (r.frame, r.track_id));
    rows
}

/// Writes rows as `frame,id,x,y,w,h,conf,-1,-1,-1`, sorted by `(frame, id)`,
/// with two decimals.
pub fn write_result_entries<W: Write>(rows: &[ResultEntry], mut sink: W) -> io::Result<()> {
    let mut sorted: Vec<&ResultEntry> = rows.iter().collect();
    sorted.sort_by_key(|r| (r.frame, r.track_id));
    let mut buf = String::new();
    for r in sorted {
        buf.clear();
        let _ = writeln!(
            buf,
            "{},{},{},{},{},{},{},-1,-1,-1",
            r.frame,
            r.track_id,
            fmt2(r.bbox.x),
            fmt2(r.bbox.y),
            fmt2(r.bbox.w),
            fmt2(r.bbox.h),
            fmt2(r.conf),
        );
        sink.write_all(buf.as_bytes())?;
    }
    sink.flush()
}

pub fn write_results<W: Write>(tracks: &[Track], sink: W) -> io::Result<()> {
    write_result_entries(&result_entries(tracks), sink)
}

/// Writes ground truth in the 9-column format.
pub fn write_ground_truth<W: Write>(entries: &[GtEntry], mut sink: W) -> io::Result<()> {
    for e in entries {
        writeln!(
            sink,
            "{},{},{},{},{},{},{},{},{}",
            e.frame,
            e.track_id,
            fmt2(e.bbox.x),
            fmt2(e.bbox.y),
            fmt2(e.bbox.w),
            fmt2(e.bbox.h),
            e.conf,
            e.class_id,
            format_visibility(e.visibility),
        )?;
    }
    sink.flush()
}

fn format_visibility(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() {
        "0".into()
    } else {
        s.into()
    }
}

/// Writes detections as `frame,-1,x,y,w,h,score,-1,-1,-1`.
pub fn write_detections<W: Write>(set: &DetectionSet, mut sink: W) -> io::Result<()> {
    for (frame, dets) in &set.frames {
        for d in dets {
            writeln!(
                sink,
                "{},-1,{},{},{},{},{},-1,-1,-1",
                frame,
                fmt2(d.bbox.x),
                fmt2(d.bbox.y),
                fmt2(d.bbox.w),
                fmt2(d.bbox.h),
                format_visibility(d.score),
            )?;
        }
    }
    sink.flush()
}

impl SequenceInfo {
    /// Parses the `[Sequence]` section of a `seqinfo.ini` file.
    pub fn parse_ini(text: &str) -> Result<Self, MotIoError> {
        let mut keys: BTreeMap<String, String> = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty()
                || line.starts_with(';')
                || line.starts_with('#')
                || line.starts_with('[')
            {
                continue;
            }
            if let Some((k, v)) = line.split_once('=') {
                keys.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |k: &str| {
            keys.get(k)
                .cloned()
                .ok_or_else(|| MotIoError::SeqInfo(format!("missing key `{k}`")))
        };
        let parse_num = |k: &str| -> Result<f64, MotIoError> {
            get(k)?
                .parse::<f64>()
                .map_err(|_| MotIoError::SeqInfo(format!("key `{k}` is not a number")))
        };
        let parse_int = |k: &str| -> Result<u32, MotIoError> {
            get(k)?.parse::<u32>().map_err(|_| {
                MotIoError::SeqInfo(format!("key `{k}` is not a non-negative integer"))
            })
        };
        let info = SequenceInfo {
            name: get("name")?,
            frame_rate: parse_num("frameRate")?,
            width: parse_int("imWidth")?,
            height: parse_int("imHeight")?,
            length: parse_int("seqLength")?,
            image_dir: keys.get("imDir").cloned(),
        };
        if !(info.frame_rate > 0.0) || info.length == 0 {
            return Err(MotIoError::SeqInfo(
                "frameRate must be positive and seqLength >= 1".into(),
            ));
        }
        Ok(info)
    }

    pub fn to_ini(&self) -> String {
        let mut s = String::from("[Sequence]\n");
        let _ = writeln!(s, "name={}", self.name);
        if let Some(dir) = &self.image_dir {
            let _ = writeln!(s, "imDir={dir}");
        }
        let _ = writeln!(s, "frameRate={}", self.frame_rate);
        let _ = writeln!(s, "seqLength={}", self.length);
        let _ = writeln!(s, "imWidth={}", self.width);
        let _ = writeln!(s, "imHeight={}", self.height);
        let _ = writeln!(s, "imExt=.png");
        s
    }

    pub fn frames(&self) -> impl Iterator<Item = FrameIndex> {
        (1..=self.length).filter_map(|t| FrameIndex::new(t).ok())
    }

    pub fn image_dir_path(&self, root: &std::path::Path) -> Option<PathBuf> {
        self.image_dir.as_ref().map(|d| root.join(d))
    }
}
