use std::sync::Arc;

use crate::backends::RegressorClassifier;
use crate::geometry::{Detection, Transform2D};
use crate::motion::{ecc_align, GrayImage};
use crate::oracles::{self, OracleConfig};
use crate::sequence::Sequence;

use super::{
    EmbeddingProvider, FrameInput, OracleContext, Track, Tracker, TrackerConfig, TrackerError,
};

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub tracks: Vec<Track>,
    /// Non-fatal problems, such as camera motion being unavailable.
    pub warnings: Vec<String>,
}

/// Tracks a whole sequence.
pub fn run(
    seq: &Sequence,
    config: &TrackerConfig,
    backend: &mut dyn RegressorClassifier,
    embedder: Option<&mut dyn EmbeddingProvider>,
) -> Result<RunOutput, TrackerError> {
    run_with_oracle(seq, config, &OracleConfig::default(), backend, embedder)
}

/// Tracks a whole sequence with the given components replaced by the
/// sequence's ground truth.
pub fn run_with_oracle(
    seq: &Sequence,
    config: &TrackerConfig,
    oracle: &OracleConfig,
    backend: &mut dyn RegressorClassifier,
    mut embedder: Option<&mut dyn EmbeddingProvider>,
) -> Result<RunOutput, TrackerError> {
    let mut tracker = Tracker::new(config.clone(), Some(seq.frame_size()))?;
    if oracle.any_online() {
        tracker = tracker.with_oracle(OracleContext {
            config: *oracle,
            gt: Arc::new(seq.gt()),
        });
    }
    let mut warnings = Vec::new();
    let mut cmc = config.enable_cmc;
    if cmc && !seq.has_images() {
        warnings.push("no frame images found; camera motion compensation disabled".to_string());
        cmc = false;
    }

    let empty: Vec<Detection> = Vec::new();
    let mut prev_image: Option<GrayImage> = None;
    for t in seq.info.frames() {
        let mut camera_motion: Option<Transform2D> = None;
        if cmc {
            match seq.image(t) {
                Ok(Some(img)) => {
                    if let Some(prev) = &prev_image {
                        match ecc_align(prev, &img, &config.ecc) {
                            Ok(r) => {
                                if !r.converged {
                                    warnings.push(format!(
                                        "frame {t}: ECC did not converge (rho {:.4})",
                                        r.correlation
                                    ));
                                }
                                camera_motion = Some(r.transform);
                            }
                            Err(e) => {
                                warnings.push(format!("frame {t}: {e}; no camera motion applied"))
                            }
                        }
                    }
                    prev_image = Some(img);
                }
                Ok(None) => {
                    warnings.push(format!(
                        "frame {t}: image missing; no camera motion applied"
                    ));
                    prev_image = None;
                }
                Err(e) => {
                    warnings.push(format!("{e}; no camera motion applied"));
                    prev_image = None;
                }
            }
        }
        let detections = seq
            .detections
            .as_ref()
            .map(|d| d.frames.get(&t).unwrap_or(&empty).as_slice());
        let input = FrameInput {
            frame: t,
            detections,
            camera_motion,
        };
        let emb = embedder
            .as_mut()
            .map(|e| &mut **e as &mut dyn EmbeddingProvider);
        tracker.step(input, backend, emb)?;
    }

    let mut tracks = tracker.finish();
    if oracle.inter {
        oracles::interpolate_gaps(&mut tracks);
    }
    Ok(RunOutput { tracks, warnings })
}
