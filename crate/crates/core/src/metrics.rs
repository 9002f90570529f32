//! CLEAR MOT and identity metrics.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{match_by_iou, solve_min_cost, CostMatrix};
use crate::geometry::{iou, BoundingBox, FrameIndex};
use crate::motio::{GroundTruth, ResultEntry};

/// IoU at which a prediction covers a ground-truth box.
pub const MATCH_IOU: f64 = 0.5;
pub const MOSTLY_TRACKED: f64 = 0.8;
pub const MOSTLY_LOST: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("result for frame {frame} lies outside the sequence (frames 1..={last})")]
    FrameOutOfRange { frame: FrameIndex, last: u32 },
}

/// Raw counts; every ratio is derived from these so sequences can be summed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub gt: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub idsw: usize,
    pub gt_tracks: usize,
    pub mt: usize,
    pub ml: usize,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            gt: self.gt + o.gt,
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            idsw: self.idsw + o.idsw,
            gt_tracks: self.gt_tracks + o.gt_tracks,
            mt: self.mt + o.mt,
            ml: self.ml + o.ml,
            idtp: self.idtp + o.idtp,
            idfp: self.idfp + o.idfp,
            idfn: self.idfn + o.idfn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Unclamped; NaN when there is no ground truth.
    pub mota: f64,
    pub idf1: f64,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub idsw: usize,
    pub mt: usize,
    pub ml: usize,
    pub precision: f64,
    pub recall: f64,
    pub gt_count: usize,
    pub counts: Counts,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    pub fn from_counts(c: Counts) -> Self {
        let mota = if c.gt == 0 {
            f64::NAN
        } else {
            1.0 - (c.fp + c.fn_ + c.idsw) as f64 / c.gt as f64
        };
        Self {
            mota,
            idf1: ratio(2 * c.idtp, 2 * c.idtp + c.idfp + c.idfn),
            fp: c.fp,
            fn_: c.fn_,
            idsw: c.idsw,
            mt: c.mt,
            ml: c.ml,
            precision: ratio(c.tp, c.tp + c.fp),
            recall: ratio(c.tp, c.gt),
            gt_count: c.gt,
            counts: c,
        }
    }
}

/// Sums counts across sequences and recomputes the ratios.
pub fn aggregate<'a>(reports: impl IntoIterator<Item = &'a MetricsReport>) -> MetricsReport {
    MetricsReport::from_counts(
        reports
            .into_iter()
            .map(|r| r.counts)
            .fold(Counts::default(), |a, b| a + b),
    )
}

/// Matches one frame. `previous` maps ground-truth ids to the prediction id
/// they were matched with in the previous frame; those pairs are kept first
/// when still at or above `threshold`, the rest is solved by min-cost
/// `1 - IoU` assignment. Returns `(gt index, pred index)` pairs.
pub fn match_frame(
    gt: &[(u64, BoundingBox)],
    pred: &[(u64, BoundingBox)],
    previous: &HashMap<u64, u64>,
    threshold: f64,
) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    let mut gt_used = vec![false; gt.len()];
    let mut pred_used = vec![false; pred.len()];
    for (gi, (gid, gb)) in gt.iter().enumerate() {
        let Some(pid) = previous.get(gid) else {
            continue;
        };
        let hit = pred
            .iter()
            .enumerate()
            .find(|(pi, (id, pb))| !pred_used[*pi] && id == pid && iou(gb, pb) >= threshold);
        if let Some((pi, _)) = hit {
            pairs.push((gi, pi));
            gt_used[gi] = true;
            pred_used[pi] = true;
        }
    }
    let gi_free: Vec<usize> = (0..gt.len()).filter(|&i| !gt_used[i]).collect();
    let pi_free: Vec<usize> = (0..pred.len()).filter(|&i| !pred_used[i]).collect();
    let gb: Vec<BoundingBox> = gi_free.iter().map(|&i| gt[i].1).collect();
    let pb: Vec<BoundingBox> = pi_free.iter().map(|&i| pred[i].1).collect();
    for (a, b) in match_by_iou(&gb, &pb, threshold) {
        pairs.push((gi_free[a], pi_free[b]));
    }
    pairs.sort_unstable();
    pairs
}

/// Evaluation result with the per-frame matching used to compute it.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// Matched `(gt id, pred id)` pairs per frame.
    pub matches: BTreeMap<FrameIndex, Vec<(u64, u64)>>,
}

fn results_by_frame(results: &[ResultEntry]) -> BTreeMap<FrameIndex, Vec<(u64, BoundingBox)>> {
    let mut m: BTreeMap<FrameIndex, Vec<(u64, BoundingBox)>> = BTreeMap::new();
    for r in results {
        m.entry(r.frame).or_default().push((r.track_id, r.bbox));
    }
    m
}

/// Evaluates `results` against considered ground truth.
///
/// `length` bounds the valid frame range; without it the last annotated
/// frame does.
pub fn evaluate_detailed(
    gt: &GroundTruth,
    results: &[ResultEntry],
    length: Option<u32>,
) -> Result<Evaluation, MetricsError> {
    let last = length.unwrap_or_else(|| gt.last_frame().map_or(0, FrameIndex::get));
    if let Some(r) = results.iter().find(|r| r.frame.get() > last) {
        return Err(MetricsError::FrameOutOfRange {
            frame: r.frame,
            last,
        });
    }
    let preds = results_by_frame(results);
    let empty = Vec::new();

    let mut c = Counts::default();
    let mut previous: HashMap<u64, u64> = HashMap::new();
    let mut last_matched: HashMap<u64, u64> = HashMap::new();
    let mut lifetime: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    let mut matches = BTreeMap::new();

    let frames: std::collections::BTreeSet<FrameIndex> = gt
        .iter()
        .map(|(t, _)| t)
        .chain(preds.keys().copied())
        .collect();
    for t in frames {
        let g: Vec<(u64, BoundingBox)> = gt.frame(t).iter().map(|b| (b.id, b.bbox)).collect();
        let p = preds.get(&t).unwrap_or(&empty);
        let pairs = match_frame(&g, p, &previous, MATCH_IOU);
        c.gt += g.len();
        c.tp += pairs.len();
        c.fp += p.len() - pairs.len();
        c.fn_ += g.len() - pairs.len();
        for (gid, _) in &g {
            lifetime.entry(*gid).or_default().1 += 1;
        }
        let mut now = HashMap::new();
        let mut frame_pairs = Vec::with_capacity(pairs.len());
        for (gi, pi) in pairs {
            let (gid, pid) = (g[gi].0, p[pi].0);
            if last_matched.get(&gid).is_some_and(|&prev| prev != pid) {
                c.idsw += 1;
            }
            last_matched.insert(gid, pid);
            now.insert(gid, pid);
            lifetime.entry(gid).or_default().0 += 1;
            frame_pairs.push((gid, pid));
        }
        previous = now;
        if !frame_pairs.is_empty() {
            matches.insert(t, frame_pairs);
        }
    }
    c.gt_tracks = lifetime.len();
    for &(hit, total) in lifetime.values() {
        let cov = ratio(hit, total);
        if cov >= MOSTLY_TRACKED {
            c.mt += 1;
        } else if cov <= MOSTLY_LOST {
            c.ml += 1;
        }
    }
    let (idtp, idfp, idfn) = identity_counts(gt, &preds);
    c.idtp = idtp;
    c.idfp = idfp;
    c.idfn = idfn;
    Ok(Evaluation {
        report: MetricsReport::from_counts(c),
        matches,
    })
}

pub fn evaluate(
    gt: &GroundTruth,
    results: &[ResultEntry],
    length: Option<u32>,
) -> Result<MetricsReport, MetricsError> {
    evaluate_detailed(gt, results, length).map(|e| e.report)
}

/// Per identity pair, the number of frames where both are present with
/// IoU >= 0.5. Returns `(gt ids, pred ids, counts[gt][pred], gt boxes, pred boxes)`.
pub(crate) fn co_occurrence(
    gt: &GroundTruth,
    preds: &BTreeMap<FrameIndex, Vec<(u64, BoundingBox)>>,
) -> (Vec<u64>, Vec<u64>, Vec<Vec<usize>>, usize, usize) {
    let mut gt_ids: Vec<u64> = gt
        .iter()
        .flat_map(|(_, v)| v.iter().map(|b| b.id))
        .collect();
    gt_ids.sort_unstable();
    gt_ids.dedup();
    let mut pred_ids: Vec<u64> = preds.values().flat_map(|v| v.iter().map(|p| p.0)).collect();
    pred_ids.sort_unstable();
    pred_ids.dedup();
    let gi: HashMap<u64, usize> = gt_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let pi: HashMap<u64, usize> = pred_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (*id, i))
        .collect();
    let mut counts = vec![vec![0usize; pred_ids.len()]; gt_ids.len()];
    for (t, boxes) in gt.iter() {
        let Some(p) = preds.get(&t) else { continue };
        for g in boxes {
            for (pid, pb) in p {
                if iou(&g.bbox, pb) >= MATCH_IOU {
                    counts[gi[&g.id]][pi[pid]] += 1;
                }
            }
        }
    }
    let n_pred = preds.values().map(Vec::len).sum();
    (gt_ids, pred_ids, counts, gt.box_count(), n_pred)
}

fn identity_counts(
    gt: &GroundTruth,
    preds: &BTreeMap<FrameIndex, Vec<(u64, BoundingBox)>>,
) -> (usize, usize, usize) {
    let (gt_ids, pred_ids, counts, n_gt, n_pred) = co_occurrence(gt, preds);
    let m = CostMatrix::from_fn(gt_ids.len(), pred_ids.len(), |g, p| -(counts[g][p] as f64));
    let idtp: usize = solve_min_cost(&m)
        .into_iter()
        .map(|(g, p)| counts[g][p])
        .sum();
    (idtp, n_pred - idtp, n_gt - idtp)
}

/// Identity F1 of `results` against `gt`.
pub fn idf1(gt: &GroundTruth, results: &[ResultEntry]) -> f64 {
    let (idtp, idfp, idfn) = identity_counts(gt, &results_by_frame(results));
    ratio(2 * idtp, 2 * idtp + idfp + idfn)
}

fn fmt_ratio(v: f64, decimals: usize) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.decimals$}")
    }
}

/// Aligned text table, one row per sequence and an `ALL` row.
pub fn text_report(rows: &[(String, MetricsReport)]) -> String {
    let all = aggregate(rows.iter().map(|(_, r)| r));
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(8);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$} {:>7} {:>7} {:>5} {:>5} {:>7} {:>7} {:>6}",
        "sequence", "MOTA", "IDF1", "MT", "ML", "FP", "FN", "IDSW"
    );
    for (name, r) in rows
        .iter()
        .map(|(n, r)| (n.as_str(), r))
        .chain([("ALL", &all)])
    {
        let _ = writeln!(
            s,
            "{:<width$} {:>7} {:>7} {:>5} {:>5} {:>7} {:>7} {:>6}",
            name,
            fmt_ratio(r.mota, 3),
            fmt_ratio(r.idf1, 3),
            r.mt,
            r.ml,
            r.fp,
            r.fn_,
            r.idsw
        );
    }
    s
}

/// CSV with header `sequence,MOTA,IDF1,MT,ML,FP,FN,IDSW` and an `ALL` row.
pub fn csv_report(rows: &[(String, MetricsReport)]) -> String {
    let all = aggregate(rows.iter().map(|(_, r)| r));
    let mut s = String::from("sequence,MOTA,IDF1,MT,ML,FP,FN,IDSW\n");
    for (name, r) in rows
        .iter()
        .map(|(n, r)| (n.as_str(), r))
        .chain([("ALL", &all)])
    {
        let _ = writeln!(
            s,
            "{name},{},{},{},{},{},{},{}",
            fmt_ratio(r.mota, 6),
            fmt_ratio(r.idf1, 6),
            r.mt,
            r.ml,
            r.fp,
            r.fn_,
            r.idsw
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motio::{ConsiderRule, GtEntry};

    fn bb(x: f64) -> BoundingBox {
        BoundingBox::new(x, 0.0, 10.0, 10.0).unwrap()
    }

    fn f(t: u32) -> FrameIndex {
        FrameIndex::new(t).unwrap()
    }

    fn gt_of(rows: &[(u32, u64, f64)]) -> GroundTruth {
        let entries: Vec<GtEntry> = rows
            .iter()
            .map(|&(t, id, x)| GtEntry {
                frame: f(t),
                track_id: id,
                bbox: bb(x),
                conf: 1,
                class_id: 1,
                visibility: 1.0,
            })
            .collect();
        GroundTruth::from_entries(&entries, &ConsiderRule::default())
    }

    fn res(rows: &[(u32, u64, f64)]) -> Vec<ResultEntry> {
        rows.iter()
            .map(|&(t, id, x)| ResultEntry {
                frame: f(t),
                track_id: id,
                bbox: bb(x),
                conf: 1.0,
            })
            .collect()
    }

    #[test]
    fn persistence_precedes_optimality() {
        let g = [(1u64, bb(0.0))];
        // persisting partner at IoU 0.55, a newcomer at IoU 0.9
        let keep = BoundingBox::new(10.0 * (1.0 - 0.55) / 1.55, 0.0, 10.0, 10.0).unwrap();
        assert!((iou(&g[0].1, &keep) - 0.55).abs() < 1e-9);
        let newcomer = BoundingBox::new(10.0 * 0.1 / 1.9, 0.0, 10.0, 10.0).unwrap();
        let p = [(7u64, keep), (8u64, newcomer)];
        let prev = HashMap::from([(1u64, 7u64)]);
        assert_eq!(match_frame(&g, &p, &prev, 0.5), vec![(0, 0)]);
        assert_eq!(match_frame(&g, &p, &HashMap::new(), 0.5), vec![(0, 1)]);
    }

    #[test]
    fn empty_predictions() {
        let gt = gt_of(&[(1, 1, 0.0), (1, 2, 50.0)]);
        let r = evaluate(&gt, &[], None).unwrap();
        assert_eq!(r.fn_, 2);
        assert_eq!(r.ml, 2);
        assert_eq!(r.idf1, 0.0);
    }

    #[test]
    fn coverage_band() {
        let rows: Vec<(u32, u64, f64)> = (1..=10).map(|t| (t, 1, 0.0)).collect();
        let gt = gt_of(&rows);
        let r = evaluate(&gt, &res(&rows[..7]), None).unwrap();
        assert_eq!((r.mt, r.ml), (0, 0));
        let r = evaluate(&gt, &res(&rows[..8]), None).unwrap();
        assert_eq!((r.mt, r.ml), (1, 0));
        let r = evaluate(&gt, &res(&rows[..2]), None).unwrap();
        assert_eq!((r.mt, r.ml), (0, 1));
    }

    #[test]
    fn switch_counted_against_last_match() {
        let gt = gt_of(&[(1, 1, 0.0), (2, 1, 0.0), (3, 1, 0.0)]);
        // matched to 5, lost, then matched to 6
        let r = evaluate(&gt, &res(&[(1, 5, 0.0), (3, 6, 0.0)]), None).unwrap();
        assert_eq!(r.idsw, 1);
        let r = evaluate(&gt, &res(&[(1, 5, 0.0), (3, 5, 0.0)]), None).unwrap();
        assert_eq!(r.idsw, 0);
    }

    #[test]
    fn out_of_range_result() {
        let gt = gt_of(&[(1, 1, 0.0)]);
        assert!(evaluate(&gt, &res(&[(4, 1, 0.0)]), None).is_err());
        assert!(evaluate(&gt, &res(&[(4, 1, 0.0)]), Some(5)).is_ok());
    }

    #[test]
    fn aggregation_sums_counts() {
        let a = MetricsReport::from_counts(Counts {
            gt: 10,
            tp: 8,
            fn_: 2,
            ..Counts::default()
        });
        let b = MetricsReport::from_counts(Counts {
            gt: 30,
            tp: 30,
            fp: 6,
            ..Counts::default()
        });
        let all = aggregate([&a, &b]);
        assert_eq!(all.gt_count, 40);
        assert!((all.mota - (1.0 - 8.0 / 40.0)).abs() < 1e-12);
        let csv = csv_report(&[("a".into(), a), ("b".into(), b)]);
        assert!(csv.lines().last().unwrap().starts_with("ALL,0.800000"));
        assert!(text_report(&[("a".into(), a)]).contains("ALL"));
    }
}
