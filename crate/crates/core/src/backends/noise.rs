use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundingBox, Detection, FrameIndex};
use crate::motio::GtBox;

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("noise parameter `{0}` out of range")]
    OutOfRange(&'static str),
}

/// Seeded perturbation model for the simulated detector.
///
/// Randomness is drawn from ChaCha8 streams keyed by `(rng_seed, frame,
/// object id)`, so the perturbation of one object in one frame does not
/// depend on call order or on which other boxes were queried.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Std-dev of the box center offset, pixels.
    pub center_sigma: f64,
    /// Std-dev of the relative width/height change.
    pub scale_sigma: f64,
    /// Probability that a classification comes back as 0.
    pub score_flip_prob: f64,
    /// Objects with ground-truth visibility below this score 0.
    pub miss_visibility: f64,
    pub rng_seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::zero()
    }
}

// Scale factors are kept positive so perturbed boxes stay valid.
const MIN_SCALE: f64 = 0.2;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl NoiseModel {
    pub fn zero() -> Self {
        Self {
            center_sigma: 0.0,
            scale_sigma: 0.0,
            score_flip_prob: 0.0,
            miss_visibility: 0.0,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        if !(self.center_sigma >= 0.0 && self.center_sigma.is_finite()) {
            return Err(NoiseError::OutOfRange("center_sigma"));
        }
        if !(self.scale_sigma >= 0.0 && self.scale_sigma.is_finite()) {
            return Err(NoiseError::OutOfRange("scale_sigma"));
        }
        if !(0.0..=1.0).contains(&self.score_flip_prob) {
            return Err(NoiseError::OutOfRange("score_flip_prob"));
        }
        if !(0.0..=1.0).contains(&self.miss_visibility) {
            return Err(NoiseError::OutOfRange("miss_visibility"));
        }
        Ok(())
    }

    fn rng(&self, frame: FrameIndex, key: u64) -> ChaCha8Rng {
        let a = splitmix64(self.rng_seed);
        let b = splitmix64(a ^ u64::from(frame.get()));
        ChaCha8Rng::seed_from_u64(splitmix64(b ^ key))
    }

    /// Perturbed copy of `gt` at `frame` with its classification score.
    pub fn perturb(&self, frame: FrameIndex, gt: &GtBox) -> Detection {
        let mut rng = self.rng(frame, gt.id);
        let n: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let flipped = rng.random::<f64>() < self.score_flip_prob;

        let b = gt.bbox;
        let sw = (1.0 + self.scale_sigma * n[2]).max(MIN_SCALE);
        let sh = (1.0 + self.scale_sigma * n[3]).max(MIN_SCALE);
        let w = b.w * sw;
        let h = b.h * sh;
        let bbox = BoundingBox {
            x: b.x + self.center_sigma * n[0] - (w - b.w) / 2.0,
            y: b.y + self.center_sigma * n[1] - (h - b.h) / 2.0,
            w,
            h,
        };
        let score = if flipped || gt.visibility < self.miss_visibility {
            0.0
        } else {
            1.0
        };
        Detection { bbox, score }
    }

    /// Frame detections: every object with visibility at least
    /// `miss_visibility`, perturbed, in ground-truth order.
    pub fn sample_detections(&self, frame: FrameIndex, gt: &[GtBox]) -> Vec<Detection> {
        gt.iter()
            .filter(|g| g.visibility >= self.miss_visibility)
            .map(|g| self.perturb(frame, g))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(id: u64, vis: f64) -> GtBox {
        GtBox {
            id,
            bbox: BoundingBox::new(10.3, 20.7, 33.1, 71.9).unwrap(),
            visibility: vis,
        }
    }

    #[test]
    fn zero_noise_is_exact() {
        let d = NoiseModel::zero().perturb(FrameIndex::FIRST, &gt(4, 1.0));
        assert_eq!(d.bbox, gt(4, 1.0).bbox);
        assert_eq!(d.score, 1.0);
    }

    #[test]
    fn visibility_gate() {
        let noise = NoiseModel {
            miss_visibility: 0.3,
            ..NoiseModel::zero()
        };
        assert_eq!(noise.perturb(FrameIndex::FIRST, &gt(1, 0.1)).score, 0.0);
        let dets = noise.sample_detections(FrameIndex::FIRST, &[gt(1, 0.1), gt(2, 0.3)]);
        assert_eq!(dets.len(), 1);
    }

    #[test]
    fn keyed_streams_are_deterministic() {
        let noise = NoiseModel {
            center_sigma: 3.0,
            scale_sigma: 0.1,
            score_flip_prob: 0.5,
            miss_visibility: 0.0,
            rng_seed: 42,
        };
        let f = FrameIndex::new(7).unwrap();
        assert_eq!(noise.perturb(f, &gt(3, 1.0)), noise.perturb(f, &gt(3, 1.0)));
        assert_ne!(noise.perturb(f, &gt(3, 1.0)), noise.perturb(f, &gt(4, 1.0)));
        let other_seed = NoiseModel {
            rng_seed: 43,
            ..noise
        };
        assert_ne!(
            noise.perturb(f, &gt(3, 1.0)),
            other_seed.perturb(f, &gt(3, 1.0))
        );
        assert!(noise.perturb(f, &gt(3, 1.0)).bbox.is_valid());
    }

    #[test]
    fn validation() {
        assert!(NoiseModel::zero().validate().is_ok());
        let bad = NoiseModel {
            score_flip_prob: 1.5,
            ..NoiseModel::zero()
        };
        assert_eq!(
            bad.validate(),
            Err(NoiseError::OutOfRange("score_flip_prob"))
        );
    }
}
