use crate::assignment::match_by_iou;
use crate::geometry::{BoundingBox, Detection, FrameIndex};
use crate::motio::{GroundTruth, GtBox};

use super::{BackendError, NoiseModel, Regression, RegressorClassifier};

/// Minimum IoU for a query box to be explained by a ground-truth object.
pub const GT_MATCH_IOU: f64 = 0.5;

/// Simulated detector answering from ground truth.
///
/// Query boxes are matched to the frame's ground truth by minimum-cost
/// `1 - IoU` assignment (IoU >= 0.5). Matched boxes come back as the
/// perturbed ground-truth box; unmatched boxes come back unchanged with
/// score 0.
#[derive(Debug, Clone)]
pub struct GtOracle {
    gt: GroundTruth,
    noise: NoiseModel,
}

impl GtOracle {
    pub fn new(gt: GroundTruth, noise: NoiseModel) -> Self {
        Self { gt, noise }
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.gt
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    /// Pure form of [`RegressorClassifier::reg_and_class`].
    pub fn regress(&self, frame: FrameIndex, boxes: &[BoundingBox]) -> Regression {
        let gt: &[GtBox] = self.gt.frame(frame);
        let gt_boxes: Vec<BoundingBox> = gt.iter().map(|g| g.bbox).collect();
        let mut out = Regression {
            boxes: boxes.to_vec(),
            scores: vec![0.0; boxes.len()],
        };
        for (q, g) in match_by_iou(boxes, &gt_boxes, GT_MATCH_IOU) {
            let d = self.noise.perturb(frame, &gt[g]);
            out.boxes[q] = d.bbox;
            out.scores[q] = d.score;
        }
        out
    }

    pub fn detections(&self, frame: FrameIndex) -> Vec<Detection> {
        self.noise.sample_detections(frame, self.gt.frame(frame))
    }
}

impl RegressorClassifier for GtOracle {
    fn reg_and_class(
        &mut self,
        frame: FrameIndex,
        boxes: &[BoundingBox],
    ) -> Result<Regression, BackendError> {
        Ok(self.regress(frame, boxes))
    }

    fn detect(&mut self, frame: FrameIndex) -> Result<Vec<Detection>, BackendError> {
        Ok(self.detections(frame))
    }

    fn describe(&self) -> String {
        let n = &self.noise;
        format!(
            "gt(center_sigma={},scale_sigma={},flip={},miss_vis={},seed={})",
            n.center_sigma, n.scale_sigma, n.score_flip_prob, n.miss_visibility, n.rng_seed
        )
    }
}
