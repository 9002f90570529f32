//! Tracker components replaced by ground truth, for upper-bound studies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assignment::match_by_iou;
use crate::geometry::{iou, BoundingBox, Detection, FrameIndex};
use crate::motio::GtBox;
use crate::tracker::Track;

/// IoU needed to associate a box with a ground-truth object.
pub const ORACLE_IOU: f64 = 0.5;
/// Two tracks overlapping more than this are treated as an occlusion pair.
pub const OCCLUSION_IOU: f64 = 0.8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub kill: bool,
    pub reg: bool,
    pub mm: bool,
    pub reid: bool,
    /// Linear interpolation over gaps after the run.
    pub inter: bool,
}

impl OracleConfig {
    pub fn all() -> Self {
        Self {
            kill: true,
            reg: true,
            mm: false,
            reid: true,
            inter: false,
        }
    }

    pub fn is_all(&self) -> bool {
        self.kill && self.reg && self.reid
    }

    pub fn any_online(&self) -> bool {
        self.kill || self.reg || self.mm || self.reid
    }
}

impl fmt::Display for OracleConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [
            (self.kill, "kill"),
            (self.reg, "reg"),
            (self.mm, "mm"),
            (self.reid, "reid"),
            (self.inter, "inter"),
        ]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

impl FromStr for OracleConfig {
    type Err = String;

    /// Comma-separated subset of `kill,reg,mm,reid,inter,all,none`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut c = OracleConfig::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "kill" => c.kill = true,
                "reg" => c.reg = true,
                "mm" => c.mm = true,
                "reid" => c.reid = true,
                "inter" => c.inter = true,
                "all" => {
                    c.kill = true;
                    c.reg = true;
                    c.reid = true;
                }
                "none" => {}
                other => return Err(format!("unknown oracle '{other}'")),
            }
        }
        Ok(c)
    }
}

/// Ground-truth object index for each box, by min-cost `1 - IoU` matching
/// with IoU >= 0.5.
pub fn match_to_gt(boxes: &[BoundingBox], gt: &[GtBox]) -> Vec<Option<usize>> {
    let gt_boxes: Vec<BoundingBox> = gt.iter().map(|g| g.bbox).collect();
    let mut out = vec![None; boxes.len()];
    for (b, g) in match_by_iou(boxes, &gt_boxes, ORACLE_IOU) {
        out[b] = Some(g);
    }
    out
}

/// Ground-truth identity for each box; see [`match_to_gt`].
pub fn gt_identities(boxes: &[BoundingBox], gt: &[GtBox]) -> Vec<Option<u64>> {
    match_to_gt(boxes, gt)
        .into_iter()
        .map(|m| m.map(|g| gt[g].id))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KillDecision {
    Keep,
    Kill,
}

/// Kill decisions for a frame's regressed track boxes.
///
/// A box without a ground-truth match is killed. Of two kept boxes
/// overlapping by more than [`OCCLUSION_IOU`], the one whose object is less
/// visible is killed; equal visibility kills the later index.
pub fn oracle_kill(boxes: &[BoundingBox], gt: &[GtBox]) -> Vec<KillDecision> {
    let matched = match_to_gt(boxes, gt);
    let mut keep: Vec<bool> = matched.iter().map(Option::is_some).collect();
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            if !(keep[i] && keep[j]) || iou(&boxes[i], &boxes[j]) <= OCCLUSION_IOU {
                continue;
            }
            let vi = gt[matched[i].expect("kept boxes are matched")].visibility;
            let vj = gt[matched[j].expect("kept boxes are matched")].visibility;
            if vi < vj {
                keep[i] = false;
            } else {
                keep[j] = false;
            }
        }
    }
    keep.into_iter()
        .map(|k| {
            if k {
                KillDecision::Keep
            } else {
                KillDecision::Kill
            }
        })
        .collect()
}

/// Decision for one box among the frame's active boxes.
pub fn oracle_kill_decision(index: usize, boxes: &[BoundingBox], gt: &[GtBox]) -> KillDecision {
    oracle_kill(boxes, gt)[index]
}

/// Replaces each box matched to ground truth by its ground-truth box.
pub fn oracle_regress(boxes: &[BoundingBox], gt: &[GtBox]) -> Vec<BoundingBox> {
    match_to_gt(boxes, gt)
        .into_iter()
        .zip(boxes)
        .map(|(m, b)| m.map_or(*b, |g| gt[g].bbox))
        .collect()
}

/// Moves each matched box onto its ground-truth center, keeping its size.
pub fn oracle_motion(boxes: &[BoundingBox], gt: &[GtBox]) -> Vec<BoundingBox> {
    match_to_gt(boxes, gt)
        .into_iter()
        .zip(boxes)
        .map(|(m, b)| {
            m.map_or(*b, |g| {
                let (cx, cy) = gt[g].bbox.center();
                b.recentered(cx, cy)
            })
        })
        .collect()
}

/// Box of identity `id` in `gt`, if present.
pub fn gt_box_of(gt: &[GtBox], id: u64) -> Option<&GtBox> {
    gt.iter().find(|g| g.id == id)
}

/// Revives a gallery track with a candidate iff both belong to the same
/// ground-truth identity. Returns `(gallery index, candidate index)`.
pub fn oracle_reid(
    gallery_identities: &[Option<u64>],
    candidates: &[BoundingBox],
    gt: &[GtBox],
) -> Vec<(usize, usize)> {
    let cand_ids = gt_identities(candidates, gt);
    let mut out = Vec::new();
    for (c, id) in cand_ids.iter().enumerate() {
        let Some(id) = id else { continue };
        if let Some(g) = gallery_identities.iter().position(|g| *g == Some(*id)) {
            out.push((g, c));
        }
    }
    out
}

/// Fills every gap inside each track by linear interpolation of the boxes
/// at the gap's flanks. Filled boxes take the smaller flank score.
pub fn interpolate_gaps(tracks: &mut [Track]) {
    for t in tracks {
        let frames: Vec<(FrameIndex, Detection)> =
            t.boxes().iter().map(|(f, d)| (*f, *d)).collect();
        for w in frames.windows(2) {
            let (f0, d0) = w[0];
            let (f1, d1) = w[1];
            let span = f1.get() - f0.get();
            for k in 1..span {
                let a = f64::from(k) / f64::from(span);
                let lerp = |p: f64, q: f64| p + (q - p) * a;
                let b = BoundingBox {
                    x: lerp(d0.bbox.x, d1.bbox.x),
                    y: lerp(d0.bbox.y, d1.bbox.y),
                    w: lerp(d0.bbox.w, d1.bbox.w),
                    h: lerp(d0.bbox.h, d1.bbox.h),
                };
                let frame = FrameIndex::new(f0.get() + k).expect("between two valid frames");
                t.fill(
                    frame,
                    Detection {
                        bbox: b,
                        score: d0.score.min(d1.score),
                    },
                );
            }
        }
    }
}
