//! Failure-mode analyses: tracked ratio by visibility and by height,
//! coverage of detection gaps, and frame-rate decimation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, FrameIndex};
use crate::metrics::{Evaluation, MetricsReport, MATCH_IOU};
use crate::motio::{DetectionSet, GroundTruth, GtEntry, SequenceInfo};
use crate::sequence::{ImageSource, Sequence};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("bin edges must be strictly increasing and at least two")]
    BadEdges,
    #[error("decimation factor must be >= 1")]
    BadFactor,
}

/// Default visibility bins: ten uniform bins over `[0, 1]`.
pub fn default_visibility_edges() -> Vec<f64> {
    (0..=10).map(|i| f64::from(i) / 10.0).collect()
}

/// Default height bins in pixels.
pub fn default_height_edges() -> Vec<f64> {
    vec![0.0, 50.0, 100.0, 150.0, 200.0, 250.0, f64::INFINITY]
}

/// Minimum visibility for the height analysis.
pub const HEIGHT_MIN_VISIBILITY: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedRatio {
    pub bin_edges: Vec<f64>,
    pub tracked: Vec<usize>,
    /// Ground-truth distribution over the bins.
    pub total: Vec<usize>,
}

impl BinnedRatio {
    fn new(edges: &[f64]) -> Result<Self, AnalysisError> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(AnalysisError::BadEdges);
        }
        Ok(Self {
            bin_edges: edges.to_vec(),
            tracked: vec![0; edges.len() - 1],
            total: vec![0; edges.len() - 1],
        })
    }

    /// Bin holding `v`: `[lo, hi)`, with the last bin closed.
    fn bin(&self, v: f64) -> Option<usize> {
        let n = self.tracked.len();
        let e = &self.bin_edges;
        if v < e[0] || v > e[n] {
            return None;
        }
        Some((0..n).find(|&i| v < e[i + 1]).unwrap_or(n - 1))
    }

    fn add(&mut self, v: f64, tracked: bool) {
        if let Some(i) = self.bin(v) {
            self.total[i] += 1;
            if tracked {
                self.tracked[i] += 1;
            }
        }
    }

    pub fn ratio(&self, i: usize) -> Option<f64> {
        (self.total[i] > 0).then(|| self.tracked[i] as f64 / self.total[i] as f64)
    }

    pub fn center(&self, i: usize) -> f64 {
        let (lo, hi) = (self.bin_edges[i], self.bin_edges[i + 1]);
        if hi.is_finite() {
            (lo + hi) / 2.0
        } else {
            lo
        }
    }

    /// `bin_center,ratio,total` rows; empty bins have an empty ratio. The
    /// header comment lists the edges.
    pub fn to_csv(&self) -> String {
        let edges: Vec<String> = self.bin_edges.iter().map(|e| e.to_string()).collect();
        let mut s = format!("# edges: {}\nbin_center,ratio,total\n", edges.join(","));
        for i in 0..self.total.len() {
            let r = self.ratio(i).map(|r| format!("{r:.6}")).unwrap_or_default();
            // drop float noise such as 0.15000000000000002
            let c = (self.center(i) * 1e9).round() / 1e9;
            let _ = writeln!(s, "{c},{r},{}", self.total[i]);
        }
        s
    }
}

fn is_tracked(eval: &Evaluation, t: FrameIndex, gt_id: u64) -> bool {
    eval.matches
        .get(&t)
        .is_some_and(|m| m.iter().any(|(g, _)| *g == gt_id))
}

/// Tracked ratio of considered ground-truth boxes by visibility.
pub fn visibility_analysis(
    gt: &GroundTruth,
    eval: &Evaluation,
    edges: &[f64],
) -> Result<BinnedRatio, AnalysisError> {
    let mut b = BinnedRatio::new(edges)?;
    for (t, boxes) in gt.iter() {
        for g in boxes {
            b.add(g.visibility, is_tracked(eval, t, g.id));
        }
    }
    Ok(b)
}

/// Tracked ratio by box height over boxes with visibility >= `min_visibility`.
pub fn height_analysis(
    gt: &GroundTruth,
    eval: &Evaluation,
    edges: &[f64],
    min_visibility: f64,
) -> Result<BinnedRatio, AnalysisError> {
    let mut b = BinnedRatio::new(edges)?;
    for (t, boxes) in gt.iter() {
        for g in boxes.iter().filter(|g| g.visibility >= min_visibility) {
            b.add(g.bbox.h, is_tracked(eval, t, g.id));
        }
    }
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionGap {
    pub track_id: u64,
    pub start_frame: FrameIndex,
    pub length: u32,
    pub covered: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub gaps: Vec<DetectionGap>,
    /// Gap length -> (gaps, covered frames, total frames).
    pub by_length: BTreeMap<u32, (usize, u64, u64)>,
}

impl GapReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("length,gaps,covered,total,ratio\n");
        for (len, (n, cov, tot)) in &self.by_length {
            let _ = writeln!(s, "{len},{n},{cov},{tot},{:.6}", *cov as f64 / *tot as f64);
        }
        s
    }
}

/// Runs of undetected frames inside each ground-truth track that are
/// flanked by detected frames, and how many of their frames `eval` covers.
pub fn gap_analysis(gt: &GroundTruth, detections: &DetectionSet, eval: &Evaluation) -> GapReport {
    let mut per_track: BTreeMap<u64, Vec<(FrameIndex, bool)>> = BTreeMap::new();
    for (t, boxes) in gt.iter() {
        let dets = detections.frame(t);
        for g in boxes {
            let detected = dets.iter().any(|d| iou(&d.bbox, &g.bbox) >= MATCH_IOU);
            per_track.entry(g.id).or_default().push((t, detected));
        }
    }
    let mut report = GapReport::default();
    for (id, frames) in per_track {
        let mut i = 0;
        while i < frames.len() {
            if frames[i].1 {
                i += 1;
                continue;
            }
            let start = i;
            while i < frames.len() && !frames[i].1 {
                i += 1;
            }
            if start == 0 || i == frames.len() {
                continue;
            }
            let run = &frames[start..i];
            let covered = run.iter().filter(|(t, _)| is_tracked(eval, *t, id)).count() as u32;
            let gap = DetectionGap {
                track_id: id,
                start_frame: run[0].0,
                length: run.len() as u32,
                covered,
            };
            let e = report.by_length.entry(gap.length).or_default();
            e.0 += 1;
            e.1 += u64::from(covered);
            e.2 += u64::from(gap.length);
            report.gaps.push(gap);
        }
    }
    report
}

fn keep(t: FrameIndex, k: u32) -> Option<FrameIndex> {
    let z = t.get() - 1;
    z.is_multiple_of(k)
        .then(|| FrameIndex::new(z / k + 1).expect("positive"))
}

/// Ground-truth rows of frames `t ≡ 1 (mod k)`, renumbered consecutively.
pub fn decimate_ground_truth(entries: &[GtEntry], k: u32) -> Result<Vec<GtEntry>, AnalysisError> {
    if k == 0 {
        return Err(AnalysisError::BadFactor);
    }
    Ok(entries
        .iter()
        .filter_map(|e| keep(e.frame, k).map(|frame| GtEntry { frame, ..*e }))
        .collect())
}

pub fn decimate_detections(set: &DetectionSet, k: u32) -> Result<DetectionSet, AnalysisError> {
    if k == 0 {
        return Err(AnalysisError::BadFactor);
    }
    Ok(DetectionSet {
        frames: set
            .frames
            .iter()
            .filter_map(|(t, d)| keep(*t, k).map(|n| (n, d.clone())))
            .collect(),
        clamped: set
            .clamped
            .iter()
            .filter_map(|c| {
                keep(c.frame, k).map(|frame| crate::motio::ClampedScore { frame, ..*c })
            })
            .collect(),
    })
}

/// Keeps every `k`-th frame starting at frame 1 and renumbers; the frame
/// rate is divided by `k`.
pub fn decimate(seq: &Sequence, k: u32) -> Result<Sequence, AnalysisError> {
    if k == 0 {
        return Err(AnalysisError::BadFactor);
    }
    if k == 1 {
        return Ok(seq.clone());
    }
    let pick = |n: usize| (0..n).step_by(k as usize);
    let images = match &seq.images {
        ImageSource::None => ImageSource::None,
        ImageSource::Files(v) => ImageSource::Files(pick(v.len()).map(|i| v[i].clone()).collect()),
        ImageSource::Memory(v) => {
            ImageSource::Memory(pick(v.len()).map(|i| v[i].clone()).collect())
        }
    };
    Ok(Sequence {
        info: SequenceInfo {
            frame_rate: seq.info.frame_rate / f64::from(k),
            length: seq.info.length.div_ceil(k),
            ..seq.info.clone()
        },
        ground_truth: decimate_ground_truth(&seq.ground_truth, k)?,
        detections: seq
            .detections
            .as_ref()
            .map(|d| decimate_detections(d, k))
            .transpose()?,
        images,
        consider: seq.consider.clone(),
    })
}

/// Decimation factors of the frame-rate study.
pub const FRAME_RATE_FACTORS: [u32; 5] = [1, 2, 3, 6, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRateRow {
    pub k: u32,
    pub frames: u32,
    pub frame_rate: f64,
    pub report: MetricsReport,
}

/// Tracks and evaluates the sequence at every factor in `factors`.
///
/// `track_and_evaluate` receives the decimated sequence and returns its
/// metrics.
pub fn frame_rate_study<E>(
    seq: &Sequence,
    factors: &[u32],
    mut track_and_evaluate: impl FnMut(&Sequence) -> Result<MetricsReport, E>,
) -> Result<Vec<FrameRateRow>, E>
where
    E: From<AnalysisError>,
{
    let mut ks = factors.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut rows = Vec::with_capacity(ks.len());
    for k in ks {
        let d = decimate(seq, k)?;
        let report = track_and_evaluate(&d)?;
        rows.push(FrameRateRow {
            k,
            frames: d.info.length,
            frame_rate: d.info.frame_rate,
            report,
        });
    }
    Ok(rows)
}

/// Rows ordered by increasing `k`, with frame counts `ceil(n / k)` and frame
/// rates `rate / k` of the original sequence.
pub fn frame_rate_rows_consistent(rows: &[FrameRateRow], length: u32, frame_rate: f64) -> bool {
    rows.windows(2)
        .all(|w| w[0].k < w[1].k && w[0].frames >= w[1].frames)
        && rows.iter().all(|r| {
            r.k >= 1
                && r.frames == length.div_ceil(r.k)
                && (r.frame_rate - frame_rate / f64::from(r.k)).abs() < 1e-9
        })
}

pub fn frame_rate_csv(rows: &[FrameRateRow]) -> String {
    let mut s = String::from("k,frames,frame_rate,MOTA,IDF1,FP,FN,IDSW\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{},{},{}",
            r.k,
            r.frames,
            r.frame_rate,
            r.report.mota,
            r.report.idf1,
            r.report.fp,
            r.report.fn_,
            r.report.idsw
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundingBox, Detection};
    use crate::metrics::evaluate_detailed;
    use crate::motio::{ConsiderRule, ResultEntry};

    fn f(t: u32) -> FrameIndex {
        FrameIndex::new(t).unwrap()
    }

    fn entry(t: u32, id: u64, vis: f64, h: f64) -> GtEntry {
        GtEntry {
            frame: f(t),
            track_id: id,
            bbox: BoundingBox::new(f64::from(id as u32) * 100.0, 0.0, 20.0, h).unwrap(),
            conf: 1,
            class_id: 1,
            visibility: vis,
        }
    }

    fn as_results(e: &[GtEntry]) -> Vec<ResultEntry> {
        e.iter()
            .map(|e| ResultEntry {
                frame: e.frame,
                track_id: e.track_id,
                bbox: e.bbox,
                conf: 1.0,
            })
            .collect()
    }

    #[test]
    fn visibility_bins() {
        let entries: Vec<GtEntry> = (1..=10)
            .map(|t| entry(t, 1, f64::from(t) / 10.0, 60.0))
            .collect();
        let gt = GroundTruth::from_entries(&entries, &ConsiderRule::default());
        let seen: Vec<GtEntry> = entries
            .iter()
            .copied()
            .filter(|e| e.visibility >= 0.5)
            .collect();
        let eval = evaluate_detailed(&gt, &as_results(&seen), None).unwrap();
        let b = visibility_analysis(&gt, &eval, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(b.total, vec![4, 6]);
        assert_eq!(b.ratio(0), Some(0.0));
        assert_eq!(b.ratio(1), Some(1.0));
        assert_eq!(
            visibility_analysis(&gt, &eval, &[0.5, 0.5]),
            Err(AnalysisError::BadEdges)
        );
    }

    #[test]
    fn height_bins_respect_visibility() {
        let entries = vec![
            entry(1, 1, 0.95, 40.0),
            entry(1, 2, 0.95, 120.0),
            entry(1, 3, 0.5, 120.0),
        ];
        let gt = GroundTruth::from_entries(&entries, &ConsiderRule::default());
        let eval = evaluate_detailed(&gt, &as_results(&entries[1..]), None).unwrap();
        let b =
            height_analysis(&gt, &eval, &default_height_edges(), HEIGHT_MIN_VISIBILITY).unwrap();
        assert_eq!(b.total.iter().sum::<usize>(), 2);
        assert_eq!(b.ratio(0), Some(0.0));
        assert_eq!(b.ratio(2), Some(1.0));
        assert!(b.to_csv().contains("# edges: 0,50,100,150,200,250,inf"));
    }

    #[test]
    fn gap_between_detections() {
        let entries: Vec<GtEntry> = (1..=6).map(|t| entry(t, 1, 1.0, 60.0)).collect();
        let gt = GroundTruth::from_entries(&entries, &ConsiderRule::default());
        let mut dets = DetectionSet::default();
        for t in [1, 5] {
            dets.frames
                .insert(f(t), vec![Detection::new(entries[0].bbox, 1.0).unwrap()]);
        }
        let none = evaluate_detailed(&gt, &[], None).unwrap();
        let r = gap_analysis(&gt, &dets, &none);
        // frames 2-4 are a gap; frame 6 is not flanked
        assert_eq!(r.gaps.len(), 1);
        assert_eq!(
            (r.gaps[0].start_frame, r.gaps[0].length, r.gaps[0].covered),
            (f(2), 3, 0)
        );
        let full = evaluate_detailed(&gt, &as_results(&entries), None).unwrap();
        assert_eq!(gap_analysis(&gt, &dets, &full).gaps[0].covered, 3);
    }

    #[test]
    fn decimation_indexing() {
        let entries = vec![entry(2, 1, 1.0, 60.0), entry(3, 1, 1.0, 60.0)];
        let d = decimate_ground_truth(&entries, 2).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].frame, f(2));
        assert_eq!(decimate_ground_truth(&entries, 1).unwrap(), entries);
        assert_eq!(
            decimate_ground_truth(&entries, 0),
            Err(AnalysisError::BadFactor)
        );
    }
}
