//! Synthetic sequences: bouncing constant-velocity boxes, forced occlusions,
//! camera motion and rendered frames.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::NoiseModel;
use crate::geometry::{clip_to_frame, iou, warp_box, BoundingBox, FrameIndex, Transform2D};
use crate::motio::{self, ConsiderRule, DetectionSet, GroundTruth, GtEntry, SequenceInfo};
use crate::motion::GrayImage;
use crate::sequence::{ImageSource, Sequence};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    Config(String),
    #[error("occlusion event {index} ({front} over {back} at frame {start}): {reason}")]
    InfeasibleOcclusion {
        index: usize,
        front: u64,
        back: u64,
        start: u32,
        reason: String,
    },
    #[error("no layout with pairwise IoU <= {0} found in {1} attempts")]
    Rejected(f64, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[cfg(feature = "image-io")]
    #[error(transparent)]
    Image(#[from] crate::motion::ImageError),
}

/// Track `back` moves onto the center of track `front` at `start` and
/// follows it for `length` frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionEvent {
    pub front: u64,
    pub back: u64,
    pub start: u32,
    pub length: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub name: String,
    pub n_tracks: u32,
    pub n_frames: u32,
    pub frame_w: u32,
    pub frame_h: u32,
    pub frame_rate: f64,
    /// Pixels per frame.
    pub speed_range: (f64, f64),
    /// Box height in pixels; width is `aspect * height`.
    pub size_range: (f64, f64),
    pub aspect: f64,
    pub occlusion_events: Vec<OcclusionEvent>,
    /// World-to-image transform per frame; empty means a static camera.
    pub camera_path: Vec<Transform2D>,
    pub rng_seed: u64,
    /// Resample until no two tracks outside occlusion events overlap more
    /// than this in any frame.
    pub max_pair_iou: Option<f64>,
    pub render: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            name: "synth".into(),
            n_tracks: 5,
            n_frames: 50,
            frame_w: 640,
            frame_h: 480,
            frame_rate: 30.0,
            speed_range: (0.5, 3.0),
            size_range: (60.0, 120.0),
            aspect: 0.45,
            occlusion_events: Vec::new(),
            camera_path: Vec::new(),
            rng_seed: 0,
            max_pair_iou: None,
            render: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub info: SequenceInfo,
    pub entries: Vec<GtEntry>,
    pub images: Option<Vec<GrayImage>>,
}

impl SynthSequence {
    pub fn gt(&self) -> GroundTruth {
        GroundTruth::from_entries(&self.entries, &ConsiderRule::default())
    }

    /// In-memory sequence with `detections` as its public detections.
    pub fn to_sequence(&self, detections: Option<DetectionSet>) -> Sequence {
        let mut s = Sequence::new(self.info.clone());
        s.ground_truth = self.entries.clone();
        s.detections = detections;
        if let Some(imgs) = &self.images {
            s.images = ImageSource::Memory(imgs.clone());
        }
        s
    }
}

const MAX_ATTEMPTS: usize = 1000;

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

impl SynthConfig {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.n_frames == 0 {
            return bad("n_frames must be >= 1");
        }
        if self.frame_w < 16 || self.frame_h < 16 {
            return bad("frame must be at least 16x16");
        }
        if !(self.frame_rate > 0.0) {
            return bad("frame_rate must be positive");
        }
        let (s0, s1) = self.speed_range;
        if !(s0 >= 0.0 && s0 <= s1 && s1.is_finite()) {
            return bad("speed_range must satisfy 0 <= min <= max");
        }
        let (h0, h1) = self.size_range;
        if !(h0 > 0.0 && h0 <= h1) || !(self.aspect > 0.0) {
            return bad("size_range and aspect must be positive with min <= max");
        }
        if h1 >= f64::from(self.frame_h) || h1 * self.aspect >= f64::from(self.frame_w) {
            return bad("boxes must fit inside the frame");
        }
        if !self.camera_path.is_empty() && self.camera_path.len() != self.n_frames as usize {
            return bad("camera_path needs one transform per frame");
        }
        if self.camera_path.iter().any(|t| t.inverse().is_none()) {
            return bad("camera_path transforms must be invertible");
        }
        for (i, e) in self.occlusion_events.iter().enumerate() {
            let ok = e.front >= 1
                && e.back <= u64::from(self.n_tracks)
                && e.front < e.back
                && e.length >= 1
                && e.start >= 1
                && e.start + e.length - 1 <= self.n_frames;
            if !ok {
                return Err(SynthError::Config(format!(
                    "occlusion event {i} needs 1 <= front < back <= n_tracks and frames within 1..={}",
                    self.n_frames
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Motion {
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
}

/// Advances one frame with reflection at the world boundary.
fn bounce(m: &mut Motion, w: f64, h: f64, fw: f64, fh: f64) {
    m.cx += m.vx;
    m.cy += m.vy;
    if m.cx - w / 2.0 < 0.0 {
        m.cx = w - m.cx;
        m.vx = m.vx.abs();
    } else if m.cx + w / 2.0 > fw {
        m.cx = 2.0 * fw - w - m.cx;
        m.vx = -m.vx.abs();
    }
    if m.cy - h / 2.0 < 0.0 {
        m.cy = h - m.cy;
        m.vy = m.vy.abs();
    } else if m.cy + h / 2.0 > fh {
        m.cy = 2.0 * fh - h - m.cy;
        m.vy = -m.vy.abs();
    }
}

struct Layout {
    sizes: Vec<(f64, f64)>,
    /// centers[track][frame - 1]
    centers: Vec<Vec<(f64, f64)>>,
}

fn simulate(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Layout, SynthError> {
    let n = cfg.n_frames as usize;
    let (fw, fh) = (f64::from(cfg.frame_w), f64::from(cfg.frame_h));
    let mut sizes = Vec::new();
    let mut starts = Vec::new();
    for _ in 0..cfg.n_tracks {
        let h = rng.random_range(cfg.size_range.0..=cfg.size_range.1);
        let w = h * cfg.aspect;
        let cx = rng.random_range(w / 2.0..=fw - w / 2.0);
        let cy = rng.random_range(h / 2.0..=fh - h / 2.0);
        let speed = rng.random_range(cfg.speed_range.0..=cfg.speed_range.1);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        sizes.push((w, h));
        starts.push(Motion {
            cx,
            cy,
            vx: speed * angle.cos(),
            vy: speed * angle.sin(),
        });
    }

    let max_speed = cfg.speed_range.1;
    let mut centers: Vec<Vec<(f64, f64)>> = Vec::with_capacity(sizes.len());
    for (k, &(w, h)) in sizes.iter().enumerate() {
        let id = k as u64 + 1;
        let mut events: Vec<(usize, OcclusionEvent)> = cfg
            .occlusion_events
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, e)| e.back == id)
            .collect();
        events.sort_by_key(|(_, e)| e.start);

        let mut path: Vec<(f64, f64)> = Vec::with_capacity(n);
        let mut state = starts[k];
        let natural = |state: Motion, from: usize, to: usize| {
            // centers for frames from..=to (1-based), `state` sits at `from`
            let mut m = state;
            let mut out = vec![(m.cx, m.cy)];
            for _ in from..to {
                bounce(&mut m, w, h, fw, fh);
                out.push((m.cx, m.cy));
            }
            (out, m)
        };
        let mut t = 1usize;
        for (index, e) in events {
            let s = e.start as usize;
            let fail = |reason: String| SynthError::InfeasibleOcclusion {
                index,
                front: e.front,
                back: e.back,
                start: e.start,
                reason,
            };
            if s <= t {
                return Err(fail(
                    "overlaps the start of the track or a previous event".into(),
                ));
            }
            let front = &centers[(e.front - 1) as usize];
            let target = front[s - 1];
            let (nat, _) = natural(state, t, s);
            let approach = (1..=s - t).find(|&a| {
                let (px, py) = nat[s - a - t];
                ((target.0 - px).powi(2) + (target.1 - py).powi(2)).sqrt() / a as f64 <= max_speed
            });
            let Some(a) = approach else {
                return Err(fail(format!("tracks cannot meet at speed <= {max_speed}")));
            };
            let p = s - a;
            path.extend_from_slice(&nat[..=p - t]);
            let from = nat[p - t];
            for j in 1..a {
                let u = j as f64 / a as f64;
                path.push((
                    from.0 + (target.0 - from.0) * u,
                    from.1 + (target.1 - from.1) * u,
                ));
            }
            let end = s + e.length as usize - 1;
            path.extend_from_slice(&front[s - 1..end]);
            let last = front[end - 1];
            state = Motion {
                cx: last.0,
                cy: last.1,
                ..starts[k]
            };
            if end < n {
                bounce(&mut state, w, h, fw, fh);
            }
            t = end + 1;
        }
        if t <= n {
            let (rest, _) = natural(state, t, n);
            path.extend(rest);
        }
        debug_assert_eq!(path.len(), n);
        centers.push(path);
    }
    Ok(Layout { sizes, centers })
}

/// Fraction of each box not covered by the union of boxes earlier in the
/// slice (nearer to the camera).
pub fn visibilities(boxes: &[BoundingBox]) -> Vec<f64> {
    let mut out = Vec::with_capacity(boxes.len());
    for (i, b) in boxes.iter().enumerate() {
        let covers: Vec<(f64, f64, f64, f64)> = boxes[..i]
            .iter()
            .filter_map(|o| {
                let (x1, y1) = (o.x.max(b.x), o.y.max(b.y));
                let (x2, y2) = (o.x2().min(b.x2()), o.y2().min(b.y2()));
                (x2 > x1 && y2 > y1).then_some((x1, y1, x2, y2))
            })
            .collect();
        out.push(1.0 - union_area(&covers) / b.area());
    }
    out.into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

/// Area of a union of rectangles by coordinate compression.
fn union_area(rects: &[(f64, f64, f64, f64)]) -> f64 {
    if rects.is_empty() {
        return 0.0;
    }
    let mut xs: Vec<f64> = rects.iter().flat_map(|r| [r.0, r.2]).collect();
    let mut ys: Vec<f64> = rects.iter().flat_map(|r| [r.1, r.3]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let mut area = 0.0;
    for i in 0..xs.len() - 1 {
        let mx = (xs[i] + xs[i + 1]) / 2.0;
        for j in 0..ys.len() - 1 {
            let my = (ys[j] + ys[j + 1]) / 2.0;
            if rects
                .iter()
                .any(|r| r.0 <= mx && mx <= r.2 && r.1 <= my && my <= r.3)
            {
                area += (xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j]);
            }
        }
    }
    area
}

fn in_event(cfg: &SynthConfig, a: u64, b: u64, t: u32) -> bool {
    cfg.occlusion_events.iter().any(|e| {
        let pair = (e.front == a && e.back == b) || (e.front == b && e.back == a);
        // the approach may start overlapping a few frames early
        let slack = (cfg.size_range.1 / cfg.speed_range.1.max(1e-9)).ceil() as u32 + 1;
        pair && t + slack >= e.start && t < e.start + e.length + slack
    })
}

fn camera(cfg: &SynthConfig, t: u32) -> Transform2D {
    cfg.camera_path
        .get(t as usize - 1)
        .copied()
        .unwrap_or_else(|| Transform2D::translation(0.0, 0.0))
}

/// Generates ground truth (and frames when `cfg.render` is set).
pub fn generate(cfg: &SynthConfig) -> Result<SynthSequence, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let (fw, fh) = (f64::from(cfg.frame_w), f64::from(cfg.frame_h));
    let mut attempts = 0;
    let (layout, entries) = loop {
        attempts += 1;
        let layout = simulate(cfg, &mut rng)?;
        let mut entries = Vec::new();
        let mut worst: f64 = 0.0;
        for t in 1..=cfg.n_frames {
            let cam = camera(cfg, t);
            let mut frame: Vec<(u64, BoundingBox)> = Vec::new();
            for (k, path) in layout.centers.iter().enumerate() {
                let (w, h) = layout.sizes[k];
                let (cx, cy) = path[t as usize - 1];
                let world = BoundingBox::from_center(cx, cy, w, h).expect("positive size");
                let Some(b) = warp_box(&world, &cam)
                    .ok()
                    .and_then(|b| clip_to_frame(&b, fw, fh))
                else {
                    continue;
                };
                let b = BoundingBox {
                    x: round2(b.x),
                    y: round2(b.y),
                    w: round2(b.w),
                    h: round2(b.h),
                };
                if b.w > 0.0 && b.h > 0.0 {
                    frame.push((k as u64 + 1, b));
                }
            }
            let boxes: Vec<BoundingBox> = frame.iter().map(|f| f.1).collect();
            if cfg.max_pair_iou.is_some() {
                for i in 0..frame.len() {
                    for j in i + 1..frame.len() {
                        if !in_event(cfg, frame[i].0, frame[j].0, t) {
                            worst = worst.max(iou(&boxes[i], &boxes[j]));
                        }
                    }
                }
            }
            for ((id, b), v) in frame.iter().zip(visibilities(&boxes)) {
                entries.push(GtEntry {
                    frame: FrameIndex::new(t).expect("t >= 1"),
                    track_id: *id,
                    bbox: *b,
                    conf: 1,
                    class_id: 1,
                    visibility: round6(v),
                });
            }
        }
        match cfg.max_pair_iou {
            Some(limit) if worst > limit => {
                if attempts >= MAX_ATTEMPTS {
                    return Err(SynthError::Rejected(limit, attempts));
                }
            }
            _ => break (layout, entries),
        }
    };

    let info = SequenceInfo {
        name: cfg.name.clone(),
        frame_rate: cfg.frame_rate,
        width: cfg.frame_w,
        height: cfg.frame_h,
        length: cfg.n_frames,
        image_dir: cfg.render.then(|| "img1".to_string()),
    };
    let images = cfg.render.then(|| {
        (1..=cfg.n_frames)
            .map(|t| render_frame(cfg, &layout, t))
            .collect()
    });
    Ok(SynthSequence {
        info,
        entries,
        images,
    })
}

/// Smooth background intensity at world point `(x, y)`.
pub fn background(x: f64, y: f64) -> f64 {
    0.45 + 0.15 * (x * 0.031).sin() * (y * 0.027 + 0.7).cos()
        + 0.1 * ((x + 0.6 * y) * 0.083).sin()
        + 0.07 * (x * 0.19 - y * 0.13).cos()
}

/// Texture of track `id` at offset `(u, v)` from its box corner.
fn patch(id: u64, u: f64, v: f64) -> f64 {
    let h = (id.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 40) as f64 / (1u64 << 24) as f64;
    let fx = 0.15 + 0.2 * h;
    let fy = 0.1 + 0.25 * (1.0 - h);
    0.5 + 0.3 * (u * fx + h * 6.0).sin() * (v * fy).cos() + 0.15 * ((u - v) * 0.3 + id as f64).sin()
}

fn render_frame(cfg: &SynthConfig, layout: &Layout, t: u32) -> GrayImage {
    let to_world = camera(cfg, t).inverse().expect("validated");
    let boxes: Vec<(u64, BoundingBox)> = layout
        .centers
        .iter()
        .enumerate()
        .map(|(k, path)| {
            let (w, h) = layout.sizes[k];
            let (cx, cy) = path[t as usize - 1];
            (
                k as u64 + 1,
                BoundingBox::from_center(cx, cy, w, h).expect("positive size"),
            )
        })
        .collect();
    GrayImage::from_fn(cfg.frame_w as usize, cfg.frame_h as usize, |x, y| {
        let (wx, wy) = to_world.apply(x, y);
        // lowest id is nearest
        for (id, b) in &boxes {
            if wx >= b.x && wx < b.x2() && wy >= b.y && wy < b.y2() {
                return patch(*id, wx - b.x, wy - b.y);
            }
        }
        background(wx, wy)
    })
}

/// Detections sampled from considered ground truth through `noise`.
pub fn derive_detections(entries: &[GtEntry], noise: &NoiseModel) -> DetectionSet {
    let gt = GroundTruth::from_entries(entries, &ConsiderRule::default());
    let mut set = DetectionSet::default();
    for (t, boxes) in gt.iter() {
        let dets = noise.sample_detections(t, boxes);
        if !dets.is_empty() {
            set.frames.insert(t, dets);
        }
    }
    set
}

/// Camera that drifts by random steps of at most `max_step` pixels and
/// `max_rotation` radians per frame, starting at the identity.
pub fn random_camera_path(
    n_frames: u32,
    max_step: f64,
    max_rotation: f64,
    seed: u64,
) -> Vec<Transform2D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut a, mut x, mut y) = (0.0, 0.0, 0.0);
    (0..n_frames)
        .map(|i| {
            if i > 0 {
                a += rng.random_range(-max_rotation..=max_rotation);
                x += rng.random_range(-max_step..=max_step);
                y += rng.random_range(-max_step..=max_step);
            }
            Transform2D::euclidean(a, x, y)
        })
        .collect()
}

/// Writes `seqinfo.ini`, `gt/gt.txt`, `det/det.txt` and frames (when
/// rendered) under `dir`.
pub fn write_tree(
    dir: &Path,
    seq: &SynthSequence,
    detections: Option<&DetectionSet>,
) -> Result<(), SynthError> {
    fs::create_dir_all(dir.join("gt"))?;
    fs::write(dir.join("seqinfo.ini"), seq.info.to_ini())?;
    motio::write_ground_truth(
        &seq.entries,
        BufWriter::new(fs::File::create(dir.join("gt/gt.txt"))?),
    )?;
    if let Some(d) = detections {
        fs::create_dir_all(dir.join("det"))?;
        motio::write_detections(
            d,
            BufWriter::new(fs::File::create(dir.join("det/det.txt"))?),
        )?;
    }
    #[cfg(feature = "image-io")]
    if let (Some(images), Some(img_dir)) = (&seq.images, &seq.info.image_dir) {
        let img_dir = dir.join(img_dir);
        fs::create_dir_all(&img_dir)?;
        for (i, img) in images.iter().enumerate() {
            img.save_png(&img_dir.join(format!("{:06}.png", i + 1)))?;
        }
    }
    Ok(())
}
