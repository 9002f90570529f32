use std::sync::Arc;

use crate::assignment::{solve_min_cost, CostMatrix};
use crate::geometry::{iou, BoundingBox, Detection, FrameIndex};
use crate::motio::GroundTruth;

use super::Track;

/// Appearance model used by the reID gallery.
pub trait EmbeddingProvider {
    fn embed(&mut self, frame: FrameIndex, bbox: &BoundingBox) -> Vec<f64>;

    /// Euclidean distance unless overridden.
    fn distance(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter()
            .zip(v)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Embeds a box as the identity of the ground-truth object it overlaps most
/// (IoU >= 0.5), scaled so different identities are `scale` apart.
/// Boxes matching nothing get a fresh vector far from everything else.
#[derive(Debug, Clone)]
pub struct GtIdentityEmbedder {
    gt: Arc<GroundTruth>,
    scale: f64,
    unmatched: u64,
}

impl GtIdentityEmbedder {
    pub const DEFAULT_SCALE: f64 = 10.0;

    pub fn new(gt: Arc<GroundTruth>) -> Self {
        Self {
            gt,
            scale: Self::DEFAULT_SCALE,
            unmatched: 0,
        }
    }
}

impl EmbeddingProvider for GtIdentityEmbedder {
    fn embed(&mut self, frame: FrameIndex, bbox: &BoundingBox) -> Vec<f64> {
        let best = self
            .gt
            .frame(frame)
            .iter()
            .map(|g| (iou(&g.bbox, bbox), g.id))
            .filter(|(v, _)| *v >= 0.5)
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        match best {
            Some((_, id)) => vec![id as f64 * self.scale, 0.0],
            None => {
                self.unmatched += 1;
                vec![0.0, -(self.unmatched as f64) * self.scale]
            }
        }
    }
}

/// Result of matching candidates against the gallery.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReidMatches {
    /// `(gallery index, candidate index)`.
    pub revived: Vec<(usize, usize)>,
    pub unmatched: Vec<usize>,
}

/// Smallest distance between `e` and any stored embedding of `track`.
pub fn gallery_distance(embedder: &dyn EmbeddingProvider, track: &Track, e: &[f64]) -> f64 {
    track
        .embeddings()
        .map(|g| embedder.distance(g, e))
        .fold(f64::INFINITY, f64::min)
}

/// Min-cost matching of candidates to gallery tracks by embedding distance.
///
/// A pair is allowed only when the IoU between the track's motion-advanced
/// box and the candidate reaches `iou_gate` and the distance does not
/// exceed `max_distance`.
pub fn try_reid(
    gallery: &[&Track],
    candidates: &[Detection],
    candidate_embeddings: &[Vec<f64>],
    embedder: &dyn EmbeddingProvider,
    max_distance: f64,
    iou_gate: f64,
) -> ReidMatches {
    let m = CostMatrix::from_fn(gallery.len(), candidates.len(), |g, c| {
        if iou(&gallery[g].position(), &candidates[c].bbox) < iou_gate {
            return f64::INFINITY;
        }
        let d = gallery_distance(embedder, gallery[g], &candidate_embeddings[c]);
        if d > max_distance {
            f64::INFINITY
        } else {
            d
        }
    });
    let revived = solve_min_cost(&m);
    let mut taken = vec![false; candidates.len()];
    for &(_, c) in &revived {
        taken[c] = true;
    }
    ReidMatches {
        revived,
        unmatched: (0..candidates.len()).filter(|c| !taken[*c]).collect(),
    }
}
