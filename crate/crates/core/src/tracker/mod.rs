//! The tracking-by-regression state machine.

mod config;
mod reid;
mod run;
mod track;

pub use config::{ConfigError, Mode, TrackerConfig};
pub use reid::{gallery_distance, try_reid, EmbeddingProvider, GtIdentityEmbedder, ReidMatches};
pub use run::{run, run_with_oracle, RunOutput};
pub use track::{Track, TrackState};

use std::sync::Arc;

use thiserror::Error;

use crate::backends::{
    detect_checked, reg_and_class_checked, BackendError, Regression, RegressorClassifier,
};
use crate::geometry::{iou, nms, BoundingBox, Detection, FrameIndex, Transform2D};
use crate::motio::{GroundTruth, GtBox};
use crate::motion::{apply_cmc, cva_predict};
use crate::oracles::{self, KillDecision, OracleConfig};

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("frame {got} presented after frame {last}")]
    OutOfOrder { last: FrameIndex, got: FrameIndex },
    #[error("public mode needs detections for frame {0}")]
    MissingDetections(FrameIndex),
    #[error("reID is enabled but no embedding provider was given")]
    MissingEmbedder,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("backend failed: {0}")]
    Backend(#[from] BackendError),
}

/// Everything the tracker sees of one frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameInput<'a> {
    pub frame: FrameIndex,
    /// Public detections; required in public mode.
    pub detections: Option<&'a [Detection]>,
    /// Camera transform from the previous frame to this one.
    pub camera_motion: Option<Transform2D>,
}

/// Ground truth handed to the tracker when some components are oracles.
#[derive(Debug, Clone)]
pub struct OracleContext {
    pub config: OracleConfig,
    pub gt: Arc<GroundTruth>,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    oracle: Option<OracleContext>,
    frame_size: Option<(f64, f64)>,
    active: Vec<Track>,
    gallery: Vec<Track>,
    finished: Vec<Track>,
    next_id: u64,
    last_frame: Option<FrameIndex>,
}

impl Tracker {
    pub fn new(
        config: TrackerConfig,
        frame_size: Option<(f64, f64)>,
    ) -> Result<Self, TrackerError> {
        config.validate()?;
        Ok(Self {
            config,
            oracle: None,
            frame_size,
            active: Vec::new(),
            gallery: Vec::new(),
            finished: Vec::new(),
            next_id: 1,
            last_frame: None,
        })
    }

    pub fn with_oracle(mut self, oracle: OracleContext) -> Self {
        self.oracle = Some(oracle);
        self
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn active(&self) -> &[Track] {
        &self.active
    }

    pub fn gallery(&self) -> &[Track] {
        &self.gallery
    }

    fn oracle_flags(&self) -> OracleConfig {
        self.oracle.as_ref().map(|o| o.config).unwrap_or_default()
    }

    fn gt_frame(&self, t: FrameIndex) -> Option<&[GtBox]> {
        let o = self.oracle.as_ref()?;
        o.gt.has_frame(t).then(|| o.gt.frame(t))
    }

    /// Processes one frame and returns the active `(id, box)` pairs after it.
    ///
    /// On error the tracker state is left as it was before the call.
    pub fn step(
        &mut self,
        input: FrameInput<'_>,
        backend: &mut dyn RegressorClassifier,
        embedder: Option<&mut dyn EmbeddingProvider>,
    ) -> Result<Vec<(u64, BoundingBox)>, TrackerError> {
        let t = input.frame;
        if let Some(last) = self.last_frame {
            if t <= last {
                return Err(TrackerError::OutOfOrder { last, got: t });
            }
        }
        if self.config.mode == Mode::Public && input.detections.is_none() {
            return Err(TrackerError::MissingDetections(t));
        }
        let flags = self.oracle_flags();
        if self.config.enable_reid && !flags.reid && embedder.is_none() {
            return Err(TrackerError::MissingEmbedder);
        }

        // Identities of the active tracks at their last frame, for the
        // oracles that follow an object.
        let prev_ids: Vec<Option<u64>> = match (&self.oracle, self.last_frame) {
            (Some(o), Some(last)) if flags.reg || flags.mm || flags.reid => {
                let boxes: Vec<BoundingBox> = self.active.iter().map(Track::last_box).collect();
                oracles::gt_identities(&boxes, o.gt.frame(last))
            }
            _ => vec![None; self.active.len()],
        };

        let saved: Vec<BoundingBox> = self
            .active
            .iter()
            .chain(&self.gallery)
            .map(Track::position)
            .collect();
        self.advance_motion(t, input.camera_motion, &prev_ids);

        let answers = self.query_backend(t, input.detections, backend);
        let (reg, raw_candidates) = match answers {
            Ok(a) => a,
            Err(e) => {
                for (track, b) in self
                    .active
                    .iter_mut()
                    .chain(self.gallery.iter_mut())
                    .zip(saved)
                {
                    track.set_position(b);
                }
                return Err(e.into());
            }
        };

        self.last_frame = Some(t);
        self.update_active(t, reg, &prev_ids);
        let candidates = self.select_candidates(t, raw_candidates);
        self.initialize(t, candidates, embedder);
        Ok(self
            .active
            .iter()
            .map(|tr| (tr.id(), tr.last_box()))
            .collect())
    }

    fn advance_motion(
        &mut self,
        t: FrameIndex,
        camera: Option<Transform2D>,
        prev_ids: &[Option<u64>],
    ) {
        if self.config.enable_cmc {
            if let Some(m) = camera {
                apply_cmc(&mut self.active, &m, self.frame_size);
                apply_cmc(&mut self.gallery, &m, self.frame_size);
            }
        }
        if self.config.enable_cva {
            for tr in self.active.iter_mut().chain(self.gallery.iter_mut()) {
                let p = cva_predict(tr);
                tr.set_position(p);
            }
        }
        if self.oracle_flags().mm {
            if let Some(gt) = self.gt_frame(t) {
                let targets: Vec<Option<(f64, f64)>> = prev_ids
                    .iter()
                    .map(|id| {
                        id.and_then(|id| oracles::gt_box_of(gt, id))
                            .map(|g| g.bbox.center())
                    })
                    .collect();
                for (tr, c) in self.active.iter_mut().zip(targets) {
                    if let Some((cx, cy)) = c {
                        let p = tr.position().recentered(cx, cy);
                        tr.set_position(p);
                    }
                }
            }
        }
    }

    fn query_backend(
        &self,
        t: FrameIndex,
        detections: Option<&[Detection]>,
        backend: &mut dyn RegressorClassifier,
    ) -> Result<(Regression, Vec<Detection>), BackendError> {
        let query: Vec<BoundingBox> = self.active.iter().map(Track::position).collect();
        let reg = if query.is_empty() {
            Regression::default()
        } else {
            reg_and_class_checked(backend, t, &query)?
        };
        let candidates = match self.config.mode {
            Mode::Private => detect_checked(backend, t)?,
            Mode::Public => {
                let dets = detections.unwrap_or_default();
                if dets.is_empty() {
                    Vec::new()
                } else {
                    let boxes: Vec<BoundingBox> = dets.iter().map(|d| d.bbox).collect();
                    let r = reg_and_class_checked(backend, t, &boxes)?;
                    r.boxes
                        .into_iter()
                        .zip(r.scores)
                        .map(|(bbox, score)| Detection { bbox, score })
                        .collect()
                }
            }
        };
        Ok((reg, candidates))
    }

    fn update_active(&mut self, t: FrameIndex, reg: Regression, prev_ids: &[Option<u64>]) {
        let flags = self.oracle_flags();
        let gt = self.gt_frame(t).map(<[GtBox]>::to_vec);
        let Regression { mut boxes, scores } = reg;

        if let (true, Some(gt)) = (flags.reg, &gt) {
            for (b, id) in boxes.iter_mut().zip(prev_ids) {
                if let Some(g) = id.and_then(|id| oracles::gt_box_of(gt, id)) {
                    *b = g.bbox;
                }
            }
        }

        let alive: Vec<bool> = match (flags.kill, &gt) {
            (true, Some(gt)) => oracles::oracle_kill(&boxes, gt)
                .into_iter()
                .map(|d| d == KillDecision::Keep)
                .collect(),
            _ => {
                let mut alive: Vec<bool> = scores
                    .iter()
                    .map(|s| *s >= self.config.sigma_active)
                    .collect();
                let idx: Vec<usize> = (0..boxes.len()).filter(|&i| alive[i]).collect();
                let items: Vec<(BoundingBox, f64)> =
                    idx.iter().map(|&i| (boxes[i], scores[i])).collect();
                let kept = nms(&items, self.config.lambda_active);
                for a in alive.iter_mut() {
                    *a = false;
                }
                for k in kept {
                    alive[idx[k]] = true;
                }
                alive
            }
        };

        let keep_gallery = self.config.enable_reid || flags.reid;
        let previous = std::mem::take(&mut self.active);
        for (i, mut tr) in previous.into_iter().enumerate() {
            if alive[i] {
                tr.append(
                    t,
                    Detection {
                        bbox: boxes[i],
                        score: scores[i],
                    },
                );
                self.active.push(tr);
            } else {
                let unregressed = tr.position();
                tr.gt_identity = prev_ids[i];
                tr.deactivate(t, unregressed);
                if keep_gallery {
                    self.gallery.push(tr);
                } else {
                    self.finished.push(tr);
                }
            }
        }
    }

    fn select_candidates(&self, t: FrameIndex, mut cands: Vec<Detection>) -> Vec<Detection> {
        let flags = self.oracle_flags();
        let gt = self.gt_frame(t);
        if let (true, Some(gt)) = (flags.reg, gt) {
            let boxes: Vec<BoundingBox> = cands.iter().map(|d| d.bbox).collect();
            for (d, b) in cands.iter_mut().zip(oracles::oracle_regress(&boxes, gt)) {
                d.bbox = b;
            }
        }
        match (flags.kill, gt) {
            (true, Some(gt)) => {
                let boxes: Vec<BoundingBox> = cands.iter().map(|d| d.bbox).collect();
                let matched = oracles::match_to_gt(&boxes, gt);
                cands = cands
                    .into_iter()
                    .zip(matched)
                    .filter_map(|(d, m)| m.map(|_| d))
                    .collect();
            }
            _ => cands.retain(|d| d.score >= self.config.sigma_active),
        }
        let items: Vec<(BoundingBox, f64)> = cands.iter().map(|d| (d.bbox, d.score)).collect();
        nms(&items, self.config.lambda_new)
            .into_iter()
            .map(|i| cands[i])
            .filter(|c| {
                self.active
                    .iter()
                    .all(|a| iou(&a.last_box(), &c.bbox) <= self.config.lambda_new)
            })
            .collect()
    }

    fn initialize(
        &mut self,
        t: FrameIndex,
        candidates: Vec<Detection>,
        mut embedder: Option<&mut dyn EmbeddingProvider>,
    ) {
        let flags = self.oracle_flags();
        let cfg = &self.config;
        let use_embeddings = cfg.enable_reid && embedder.is_some();
        let eligible: Vec<usize> = (0..self.gallery.len())
            .filter(|&g| {
                let since = self.gallery[g]
                    .inactive_since()
                    .expect("gallery tracks are inactive");
                since < t && (flags.reid || t.get() - since.get() <= cfg.f_reid)
            })
            .collect();

        let mut cand_embeddings: Vec<Option<Vec<f64>>> = vec![None; candidates.len()];
        let matches: Vec<(usize, usize)> = match (flags.reid, self.gt_frame(t)) {
            (true, Some(gt)) => {
                let ids: Vec<Option<u64>> = eligible
                    .iter()
                    .map(|&g| self.gallery[g].gt_identity)
                    .collect();
                let boxes: Vec<BoundingBox> = candidates.iter().map(|d| d.bbox).collect();
                oracles::oracle_reid(&ids, &boxes, gt)
            }
            _ if use_embeddings && !eligible.is_empty() && !candidates.is_empty() => {
                let emb = embedder.as_deref_mut().expect("checked above");
                let embs: Vec<Vec<f64>> =
                    candidates.iter().map(|d| emb.embed(t, &d.bbox)).collect();
                let refs: Vec<&Track> = eligible.iter().map(|&g| &self.gallery[g]).collect();
                let r = try_reid(
                    &refs,
                    &candidates,
                    &embs,
                    &*emb,
                    cfg.reid_distance_threshold,
                    cfg.reid_iou_gate,
                );
                for (slot, e) in cand_embeddings.iter_mut().zip(embs) {
                    *slot = Some(e);
                }
                r.revived
            }
            _ => Vec::new(),
        };

        let mut revived_for: Vec<Option<usize>> = vec![None; candidates.len()];
        for &(g, c) in &matches {
            revived_for[c] = Some(eligible[g]);
        }
        let mut taken: Vec<Option<Track>> = std::mem::take(&mut self.gallery)
            .into_iter()
            .map(Some)
            .collect();
        let mut fresh = Vec::new();
        for (c, d) in candidates.into_iter().enumerate() {
            let mut tr = match revived_for[c] {
                Some(g) => {
                    let mut tr = taken[g].take().expect("each gallery track revives once");
                    tr.revive(t, d);
                    tr
                }
                None => {
                    let tr = Track::new(self.next_id, t, d, self.config.embedding_history);
                    self.next_id += 1;
                    tr
                }
            };
            if use_embeddings {
                if let Some(e) = cand_embeddings[c].take() {
                    tr.push_embedding(e);
                }
            }
            fresh.push(tr);
        }

        // every active track now carries a box at t
        if let Some(emb) = embedder.as_mut().filter(|_| use_embeddings) {
            for tr in &mut self.active {
                let b = tr.last_box();
                tr.push_embedding(emb.embed(t, &b));
            }
            for tr in fresh
                .iter_mut()
                .filter(|tr| tr.embeddings().next().is_none())
            {
                let b = tr.last_box();
                tr.push_embedding(emb.embed(t, &b));
            }
        }
        self.active.extend(fresh);
        self.active.sort_by_key(Track::id);

        let unlimited = flags.reid;
        let f_reid = self.config.f_reid;
        for tr in taken.into_iter().flatten() {
            let since = tr.inactive_since().expect("gallery tracks are inactive");
            if unlimited || t.get() < since.get() + f_reid {
                self.gallery.push(tr);
            } else {
                self.finished.push(tr);
            }
        }
    }

    /// Ends the run; returns every track that emitted a box, ordered by id.
    pub fn finish(self) -> Vec<Track> {
        let mut all: Vec<Track> = self
            .finished
            .into_iter()
            .chain(self.active)
            .chain(self.gallery)
            .collect();
        all.sort_by_key(Track::id);
        all
    }
}
