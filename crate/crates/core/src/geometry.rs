//! Box geometry: IoU, greedy NMS, frame clipping and 2D warps.
//!
//! Boxes use the MOTChallenge convention: `(x, y)` is the top-left corner in
//! pixels, `y` grows downward, and all coordinates are real-valued.

use std::fmt;
use std::num::NonZeroU32;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid box ({x}, {y}, {w}, {h}): width and height must be positive and finite")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },
    #[error("score {0} outside [0, 1]")]
    InvalidScore(f64),
    #[error("frame index must be >= 1")]
    InvalidFrame,
    #[error("transform collapses box ({x}, {y}, {w}, {h}) to zero area")]
    DegenerateWarp { x: f64, y: f64, w: f64, h: f64 },
    #[error("euclidean transform has a non-rotation linear part")]
    NotEuclidean,
}

/// Axis-aligned bounding box `(x, y, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        let b = Self { x, y, w, h };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(GeometryError::InvalidBox { x, y, w, h })
        }
    }

    /// Builds a box from its corners `(x1, y1)` top-left and `(x2, y2)` bottom-right.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        Self::new(x1, y1, x2 - x1, y2 - y1)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w > 0.0
            && self.h > 0.0
    }

    #[inline]
    pub fn x2(&self) -> f64 {
        self.x + self.w
    }

    #[inline]
    pub fn y2(&self) -> f64 {
        self.y + self.h
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    #[inline]
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Same size, new center.
    pub fn recentered(&self, cx: f64, cy: f64) -> Self {
        Self {
            x: cx - self.w / 2.0,
            y: cy - self.h / 2.0,
            ..*self
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }

    /// Area of the intersection with `other` (zero when disjoint).
    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let iw = self.x2().min(other.x2()) - self.x.max(other.x);
        let ih = self.y2().min(other.y2()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// The four corners, clockwise from top-left.
    pub fn corners(&self) -> [(f64, f64); 4] {
        [
            (self.x, self.y),
            (self.x2(), self.y),
            (self.x2(), self.y2()),
            (self.x, self.y2()),
        ]
    }
}

/// A scored box: either a detector output or one emitted track position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, score: f64) -> Result<Self, GeometryError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(GeometryError::InvalidScore(score));
        }
        Ok(Self { bbox, score })
    }
}

/// 1-based frame number, as used by MOTChallenge files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct FrameIndex(NonZeroU32);

impl FrameIndex {
    pub const FIRST: FrameIndex = FrameIndex(NonZeroU32::MIN);

    pub fn new(t: u32) -> Result<Self, GeometryError> {
        NonZeroU32::new(t)
            .map(Self)
            .ok_or(GeometryError::InvalidFrame)
    }

    #[inline]
    pub fn get(self) -> u32 {
        self.0.get()
    }

    pub fn next(self) -> Self {
        Self(self.0.saturating_add(1))
    }

    /// Previous frame, or `None` at frame 1.
    pub fn prev(self) -> Option<Self> {
        Self::new(self.get() - 1).ok()
    }
}

impl TryFrom<u32> for FrameIndex {
    type Error = GeometryError;

    fn try_from(t: u32) -> Result<Self, Self::Error> {
        Self::new(t)
    }
}

impl From<FrameIndex> for u32 {
    fn from(f: FrameIndex) -> u32 {
        f.get()
    }
}

impl fmt::Display for FrameIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.get())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Euclidean,
    Affine,
}

/// 2x3 warp mapping previous-frame pixel coordinates to current-frame ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform2D {
    pub kind: TransformKind,
    pub matrix: [[f64; 3]; 2],
}

const ROTATION_TOL: f64 = 1e-6;

impl Transform2D {
    pub fn identity(kind: TransformKind) -> Self {
        Self {
            kind,
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            kind: TransformKind::Euclidean,
            matrix: [[1.0, 0.0, dx], [0.0, 1.0, dy]],
        }
    }

    /// Rotation by `angle` radians about the origin followed by a translation.
    pub fn euclidean(angle: f64, dx: f64, dy: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            kind: TransformKind::Euclidean,
            matrix: [[c, -s, dx], [s, c, dy]],
        }
    }

    /// Rotation by `angle` radians about `(cx, cy)`.
    pub fn rotation_about(angle: f64, cx: f64, cy: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::euclidean(angle, cx - c * cx + s * cy, cy - s * cx - c * cy)
    }

    /// Checked constructor; euclidean matrices must carry a proper rotation.
    pub fn new(kind: TransformKind, matrix: [[f64; 3]; 2]) -> Result<Self, GeometryError> {
        let t = Self { kind, matrix };
        if kind == TransformKind::Euclidean && !t.has_rotation_part() {
            return Err(GeometryError::NotEuclidean);
        }
        Ok(t)
    }

    fn has_rotation_part(&self) -> bool {
        let [[a, b, _], [c, d, _]] = self.matrix;
        let det = a * d - b * c;
        (a * a + c * c - 1.0).abs() < ROTATION_TOL
            && (b * b + d * d - 1.0).abs() < ROTATION_TOL
            && (a * b + c * d).abs() < ROTATION_TOL
            && (det - 1.0).abs() < ROTATION_TOL
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.matrix;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn compose(&self, first: &Transform2D) -> Transform2D {
        let a = &self.matrix;
        let b = &first.matrix;
        let mut m = [[0.0; 3]; 2];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
            row[2] += a[r][2];
        }
        let kind =
            if self.kind == TransformKind::Euclidean && first.kind == TransformKind::Euclidean {
                TransformKind::Euclidean
            } else {
                TransformKind::Affine
            };
        Transform2D { kind, matrix: m }
    }

    /// Inverse warp, `None` when the linear part is singular.
    pub fn inverse(&self) -> Option<Transform2D> {
        let [[a, b, tx], [c, d, ty]] = self.matrix;
        let det = a * d - b * c;
        if det.abs() < 1e-12 || !det.is_finite() {
            return None;
        }
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Some(Transform2D {
            kind: self.kind,
            matrix: [
                [ia, ib, -(ia * tx + ib * ty)],
                [ic, id, -(ic * tx + id * ty)],
            ],
        })
    }

    /// Largest entry-wise difference from the identity matrix.
    pub fn distance_from_identity(&self) -> f64 {
        let id = Self::identity(self.kind);
        self.matrix
            .iter()
            .flatten()
            .zip(id.matrix.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_identity(&self) -> bool {
        self.distance_from_identity() == 0.0
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Greedy non-maximum suppression.
///
/// Repeatedly keeps the highest-scoring remaining item and suppresses every
/// remaining item whose IoU with it is strictly greater than `threshold`.
/// Equal scores are ordered by lower index. Returns kept indices in the order
/// they were kept (descending score).
pub fn nms(items: &[(BoundingBox, f64)], threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&i, &j| items[j].1.total_cmp(&items[i].1).then(i.cmp(&j)));

    let mut suppressed = vec![false; items.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && iou(&items[i].0, &items[j].0) > threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// Intersects `b` with the frame `[0, frame_w] x [0, frame_h]`.
///
/// Returns `None` when nothing of the box remains inside the frame.
pub fn clip_to_frame(b: &BoundingBox, frame_w: f64, frame_h: f64) -> Option<BoundingBox> {
    if b.x >= 0.0 && b.y >= 0.0 && b.x2() <= frame_w && b.y2() <= frame_h {
        return Some(*b);
    }
    let x1 = b.x.max(0.0);
    let y1 = b.y.max(0.0);
    let x2 = b.x2().min(frame_w);
    let y2 = b.y2().min(frame_h);
    if x2 > x1 && y2 > y1 {
        Some(BoundingBox {
            x: x1,
            y: y1,
            w: x2 - x1,
            h: y2 - y1,
        })
    } else {
        None
    }
}

/// Warps the four corners of `b` and returns their axis-aligned hull.
pub fn warp_box(b: &BoundingBox, t: &Transform2D) -> Result<BoundingBox, GeometryError> {
    if t.is_identity() {
        return Ok(*b);
    }
    let mut x1 = f64::INFINITY;
    let mut y1 = f64::INFINITY;
    let mut x2 = f64::NEG_INFINITY;
    let mut y2 = f64::NEG_INFINITY;
    for (cx, cy) in b.corners() {
        let (wx, wy) = t.apply(cx, cy);
        x1 = x1.min(wx);
        y1 = y1.min(wy);
        x2 = x2.max(wx);
        y2 = y2.max(wy);
    }
    BoundingBox::from_corners(x1, y1, x2, y2).map_err(|_| GeometryError::DegenerateWarp {
        x: b.x,
        y: b.y,
        w: b.w,
        h: b.h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&bb(0., 0., 10., 10.), &bb(0., 0., 10., 10.)), 1.0);
        assert_eq!(iou(&bb(0., 0., 10., 10.), &bb(20., 20., 5., 5.)), 0.0);
        // inter 50, union 150
        assert!((iou(&bb(0., 0., 10., 10.), &bb(5., 0., 10., 10.)) - 1.0 / 3.0).abs() < 1e-12);
        // touching edges do not overlap
        assert_eq!(iou(&bb(0., 0., 10., 10.), &bb(10., 0., 10., 10.)), 0.0);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BoundingBox::new(0., 0., 0., 5.).is_err());
        assert!(BoundingBox::new(0., 0., 5., -1.).is_err());
        assert!(BoundingBox::new(f64::NAN, 0., 5., 5.).is_err());
        assert!(Detection::new(bb(0., 0., 1., 1.), 1.5).is_err());
        assert!(FrameIndex::new(0).is_err());
    }

    #[test]
    fn nms_examples() {
        let a = (bb(0., 0., 10., 10.), 0.9);
        let b = (bb(1., 0., 10., 10.), 0.8);
        assert_eq!(nms(&[a], 0.3), vec![0]);
        // IoU = 90 / 110
        assert!((iou(&a.0, &b.0) - 90.0 / 110.0).abs() < 1e-12);
        assert_eq!(nms(&[a, b], 0.6), vec![0]);
        assert_eq!(nms(&[a, b], 0.9), vec![0, 1]);
        assert!(nms(&[], 0.5).is_empty());
    }

    #[test]
    fn nms_ties_and_order() {
        let a = (bb(0., 0., 10., 10.), 0.5);
        let b = (bb(0., 0., 10., 10.), 0.5);
        let c = (bb(50., 50., 10., 10.), 0.9);
        assert_eq!(nms(&[a, b, c], 0.5), vec![2, 0]);
        // IoU exactly at the threshold is kept
        let d = (bb(5., 0., 10., 10.), 0.4);
        assert_eq!(nms(&[a, d], 1.0 / 3.0), vec![0, 1]);
    }

    #[test]
    fn clip_examples() {
        assert_eq!(
            clip_to_frame(&bb(-5., -5., 20., 20.), 100., 100.),
            Some(bb(0., 0., 15., 15.))
        );
        assert_eq!(
            clip_to_frame(&bb(10., 10., 5., 5.), 100., 100.),
            Some(bb(10., 10., 5., 5.))
        );
        assert_eq!(clip_to_frame(&bb(200., 200., 10., 10.), 100., 100.), None);
    }

    #[test]
    fn warp_examples() {
        let b = bb(0., 0., 10., 10.);
        assert_eq!(
            warp_box(&b, &Transform2D::identity(TransformKind::Affine)).unwrap(),
            b
        );
        assert_eq!(
            warp_box(&b, &Transform2D::translation(5., 3.)).unwrap(),
            bb(5., 3., 10., 10.)
        );
        let r = warp_box(
            &bb(0., 0., 10., 20.),
            &Transform2D::euclidean(std::f64::consts::FRAC_PI_2, 0., 0.),
        )
        .unwrap();
        let expect = bb(-20., 0., 20., 10.);
        for (a, e) in [
            (r.x, expect.x),
            (r.y, expect.y),
            (r.w, expect.w),
            (r.h, expect.h),
        ] {
            assert!((a - e).abs() < 1e-9, "{r:?}");
        }
        let collapse = Transform2D {
            kind: TransformKind::Affine,
            matrix: [[1., 0., 0.], [0., 0., 0.]],
        };
        assert!(matches!(
            warp_box(&b, &collapse),
            Err(GeometryError::DegenerateWarp { .. })
        ));
    }

    #[test]
    fn transform_algebra() {
        let t = Transform2D::rotation_about(0.3, 50., 40.);
        assert!(Transform2D::new(TransformKind::Euclidean, t.matrix).is_ok());
        assert!(Transform2D::new(TransformKind::Euclidean, [[2., 0., 0.], [0., 1., 0.]]).is_err());
        let (x, y) = t.apply(50., 40.);
        assert!((x - 50.).abs() < 1e-12 && (y - 40.).abs() < 1e-12);
        let round = t.inverse().unwrap().compose(&t);
        assert!(round.distance_from_identity() < 1e-12);
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (-50.0..150.0f64, -50.0..150.0f64, 0.5..80.0f64, 0.5..80.0f64)
            .prop_map(|(x, y, w, h)| bb(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn warp_identity_is_noop(a in arb_box()) {
            prop_assert_eq!(warp_box(&a, &Transform2D::identity(TransformKind::Euclidean)).unwrap(), a);
        }

        #[test]
        fn nms_threshold_extremes(boxes in prop::collection::vec((arb_box(), 0.0..1.0f64), 0..20)) {
            let all = nms(&boxes, 1.0);
            prop_assert_eq!(all.len(), boxes.len());
            let strict = nms(&boxes, 0.0);
            for (i, &a) in strict.iter().enumerate() {
                for &b in &strict[i + 1..] {
                    prop_assert_eq!(iou(&boxes[a].0, &boxes[b].0), 0.0);
                }
            }
        }
    }
}
