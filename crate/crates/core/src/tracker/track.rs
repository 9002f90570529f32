use std::collections::{BTreeMap, VecDeque};

use crate::geometry::{BoundingBox, Detection, FrameIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackState {
    Active,
    /// Deactivated at `since`; held in the reID gallery.
    Inactive {
        since: FrameIndex,
    },
}

/// One trajectory: an identity and the boxes it emitted while active.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    id: u64,
    boxes: BTreeMap<FrameIndex, Detection>,
    state: TrackState,
    /// Working box: the last emitted box, advanced by the motion models.
    position: BoundingBox,
    /// First frame of the current active stretch.
    segment_start: FrameIndex,
    last_unregressed_box: Option<BoundingBox>,
    embeddings: VecDeque<Vec<f64>>,
    embedding_capacity: usize,
    pub(crate) gt_identity: Option<u64>,
}

impl Track {
    pub fn new(
        id: u64,
        frame: FrameIndex,
        detection: Detection,
        embedding_capacity: usize,
    ) -> Self {
        Self {
            id,
            boxes: BTreeMap::from([(frame, detection)]),
            state: TrackState::Active,
            position: detection.bbox,
            segment_start: frame,
            last_unregressed_box: None,
            embeddings: VecDeque::new(),
            embedding_capacity: embedding_capacity.max(1),
            gt_identity: None,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn boxes(&self) -> &BTreeMap<FrameIndex, Detection> {
        &self.boxes
    }

    pub fn state(&self) -> TrackState {
        self.state
    }

    pub fn is_active(&self) -> bool {
        self.state == TrackState::Active
    }

    pub fn inactive_since(&self) -> Option<FrameIndex> {
        match self.state {
            TrackState::Active => None,
            TrackState::Inactive { since } => Some(since),
        }
    }

    pub fn position(&self) -> BoundingBox {
        self.position
    }

    pub fn set_position(&mut self, b: BoundingBox) {
        self.position = b;
    }

    pub fn last_frame(&self) -> FrameIndex {
        *self
            .boxes
            .keys()
            .next_back()
            .expect("tracks are never empty")
    }

    pub fn last_box(&self) -> BoundingBox {
        self.boxes
            .values()
            .next_back()
            .expect("tracks are never empty")
            .bbox
    }

    pub fn last_unregressed_box(&self) -> Option<BoundingBox> {
        self.last_unregressed_box
    }

    pub fn embeddings(&self) -> impl Iterator<Item = &[f64]> {
        self.embeddings.iter().map(Vec::as_slice)
    }

    pub fn push_embedding(&mut self, e: Vec<f64>) {
        if self.embeddings.len() == self.embedding_capacity {
            self.embeddings.pop_front();
        }
        self.embeddings.push_back(e);
    }

    /// Center displacement between the last two boxes of the current active
    /// stretch, if it has two.
    pub fn velocity(&self) -> Option<(f64, f64)> {
        let mut recent = self.boxes.range(self.segment_start..).rev();
        let (_, last) = recent.next()?;
        let (_, before) = recent.next()?;
        let (x1, y1) = last.bbox.center();
        let (x0, y0) = before.bbox.center();
        Some((x1 - x0, y1 - y0))
    }

    pub(crate) fn append(&mut self, frame: FrameIndex, d: Detection) {
        debug_assert!(frame > self.last_frame());
        self.boxes.insert(frame, d);
        self.position = d.bbox;
    }

    pub(crate) fn deactivate(&mut self, frame: FrameIndex, unregressed: BoundingBox) {
        self.state = TrackState::Inactive { since: frame };
        self.last_unregressed_box = Some(unregressed);
        self.position = unregressed;
    }

    /// Re-activates a gallery track at `frame`; motion history restarts.
    pub(crate) fn revive(&mut self, frame: FrameIndex, d: Detection) {
        self.state = TrackState::Active;
        self.segment_start = frame;
        self.last_unregressed_box = None;
        self.append(frame, d);
    }

    /// Inserts boxes strictly between existing frames (used only by
    /// post-processing).
    pub(crate) fn fill(&mut self, frame: FrameIndex, d: Detection) {
        debug_assert!(!self.boxes.contains_key(&frame));
        self.boxes.insert(frame, d);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x: f64, y: f64) -> Detection {
        Detection::new(BoundingBox::new(x, y, 10.0, 20.0).unwrap(), 1.0).unwrap()
    }

    fn f(t: u32) -> FrameIndex {
        FrameIndex::new(t).unwrap()
    }

    #[test]
    fn velocity_uses_current_segment_only() {
        let mut t = Track::new(1, f(1), det(0., 0.), 10);
        assert_eq!(t.velocity(), None);
        t.append(f(2), det(3., 4.));
        assert_eq!(t.velocity(), Some((3.0, 4.0)));
        t.deactivate(f(3), det(3., 4.).bbox);
        assert!(!t.is_active());
        assert_eq!(t.inactive_since(), Some(f(3)));
        t.revive(f(6), det(50., 50.));
        assert_eq!(t.velocity(), None);
        t.append(f(7), det(51., 50.));
        assert_eq!(t.velocity(), Some((1.0, 0.0)));
        assert_eq!(t.boxes().len(), 4);
    }

    #[test]
    fn embedding_history_is_bounded() {
        let mut t = Track::new(1, f(1), det(0., 0.), 2);
        for i in 0..5 {
            t.push_embedding(vec![i as f64]);
        }
        let e: Vec<f64> = t.embeddings().map(|e| e[0]).collect();
        assert_eq!(e, vec![3.0, 4.0]);
    }
}
