//! Browser demo: each export takes and returns JSON strings so the page
//! needs no generated bindings beyond plain functions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use tracktor::backends::{GtOracle, NoiseModel};
use tracktor::metrics::{self, MetricsReport};
use tracktor::motio;
use tracktor::motion::{ecc_align, EccConfig, GrayImage};
use tracktor::oracles::OracleConfig;
use tracktor::synth::{self, OcclusionEvent, SynthConfig};
use tracktor::tracker::{self, GtIdentityEmbedder, TrackerConfig};
use tracktor::{nms, BoundingBox, Transform2D};

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct SimulationRequest {
    pub seed: u64,
    pub tracks: u32,
    pub frames: u32,
    pub noise: f64,
    pub flip: f64,
    pub occlusions: bool,
    pub reid: bool,
    pub oracle: String,
}

impl Default for SimulationRequest {
    fn default() -> Self {
        Self {
            seed: 1,
            tracks: 6,
            frames: 80,
            noise: 1.5,
            flip: 0.02,
            occlusions: true,
            reid: false,
            oracle: "none".into(),
        }
    }
}

#[derive(Debug, Serialize)]
struct FrameView {
    gt: Vec<(u64, [f64; 4])>,
    tracks: Vec<(u64, [f64; 4])>,
}

#[derive(Debug, Serialize)]
struct SimulationView {
    width: u32,
    height: u32,
    frames: Vec<FrameView>,
    metrics: MetricsReport,
}

fn arr(b: &BoundingBox) -> [f64; 4] {
    [b.x, b.y, b.w, b.h]
}

fn error_json(e: impl std::fmt::Display) -> String {
    serde_json::json!({ "error": e.to_string() }).to_string()
}

fn simulate_inner(req: &SimulationRequest) -> Result<SimulationView, String> {
    let oracle: OracleConfig = req.oracle.parse()?;
    let noise = NoiseModel {
        center_sigma: req.noise,
        scale_sigma: req.noise / 40.0,
        score_flip_prob: req.flip,
        miss_visibility: 0.3,
        rng_seed: req.seed,
    };
    noise.validate().map_err(|e| e.to_string())?;
    let mut events = Vec::new();
    if req.occlusions && req.tracks >= 2 && req.frames >= 40 {
        events.push(OcclusionEvent {
            front: 1,
            back: 2,
            start: req.frames / 2,
            length: 6.min(req.frames / 4),
        });
    }
    // retry seeds until the forced occlusion is reachable
    let scene = (0..40)
        .find_map(|k| {
            synth::generate(&SynthConfig {
                n_tracks: req.tracks,
                n_frames: req.frames,
                speed_range: (1.0, 5.0),
                occlusion_events: events.clone(),
                rng_seed: req.seed.wrapping_mul(101).wrapping_add(k),
                ..SynthConfig::default()
            })
            .ok()
        })
        .ok_or("no feasible scene for these settings")?;
    let seq = scene.to_sequence(Some(synth::derive_detections(&scene.entries, &noise)));
    let gt = seq.gt();
    let config = TrackerConfig {
        enable_reid: req.reid,
        ..TrackerConfig::default()
    };
    let mut backend = GtOracle::new(gt.clone(), noise);
    let mut embedder = GtIdentityEmbedder::new(Arc::new(gt.clone()));
    let emb: Option<&mut dyn tracker::EmbeddingProvider> = if req.reid && !oracle.reid {
        Some(&mut embedder)
    } else {
        None
    };
    let out = tracker::run_with_oracle(&seq, &config, &oracle, &mut backend, emb)
        .map_err(|e| e.to_string())?;
    let results = motio::result_entries(&out.tracks);
    let report =
        metrics::evaluate(&gt, &results, Some(scene.info.length)).map_err(|e| e.to_string())?;

    let mut frames: Vec<FrameView> = (0..scene.info.length)
        .map(|_| FrameView {
            gt: Vec::new(),
            tracks: Vec::new(),
        })
        .collect();
    for (t, boxes) in gt.iter() {
        frames[t.get() as usize - 1].gt = boxes.iter().map(|g| (g.id, arr(&g.bbox))).collect();
    }
    for r in &results {
        frames[r.frame.get() as usize - 1]
            .tracks
            .push((r.track_id, arr(&r.bbox)));
    }
    Ok(SimulationView {
        width: scene.info.width,
        height: scene.info.height,
        frames,
        metrics: report,
    })
}

/// Generates a scene, tracks it and returns per-frame boxes and metrics.
#[wasm_bindgen]
pub fn simulate(request_json: &str) -> String {
    let req: SimulationRequest = match serde_json::from_str(request_json) {
        Ok(r) => r,
        Err(e) => return error_json(e),
    };
    match simulate_inner(&req) {
        Ok(v) => serde_json::to_string(&v).expect("view serializes"),
        Err(e) => error_json(e),
    }
}

#[derive(Debug, Deserialize)]
struct NmsItem {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    score: f64,
}

/// Greedy NMS over `[{"box":[x,y,w,h],"score":s},...]`; returns kept
/// indices in keep order.
#[wasm_bindgen]
pub fn nms_explorer(items_json: &str, threshold: f64) -> String {
    let items: Vec<NmsItem> = match serde_json::from_str(items_json) {
        Ok(v) => v,
        Err(e) => return error_json(e),
    };
    let mut parsed = Vec::with_capacity(items.len());
    for it in &items {
        match BoundingBox::new(it.bbox[0], it.bbox[1], it.bbox[2], it.bbox[3]) {
            Ok(b) => parsed.push((b, it.score)),
            Err(e) => return error_json(e),
        }
    }
    serde_json::json!({ "kept": nms(&parsed, threshold) }).to_string()
}

fn texture(x: f64, y: f64) -> f64 {
    synth::background(x, y) + 0.2 * ((x * 0.05).sin() * (y * 0.07).cos())
}

/// Warps a textured frame by a known rotation about the center plus a
/// translation and recovers the warp with ECC.
#[wasm_bindgen]
pub fn ecc_demo(dx: f64, dy: f64, angle_deg: f64) -> String {
    let (w, h) = (240usize, 180usize);
    let truth = Transform2D::translation(dx, dy).compose(&Transform2D::rotation_about(
        angle_deg.to_radians(),
        w as f64 / 2.0,
        h as f64 / 2.0,
    ));
    let Some(inv) = truth.inverse() else {
        return error_json("warp is not invertible");
    };
    let prev = GrayImage::from_fn(w, h, texture);
    let cur = GrayImage::from_fn(w, h, |x, y| {
        let (u, v) = inv.apply(x, y);
        texture(u, v)
    });
    match ecc_align(&prev, &cur, &EccConfig::default()) {
        Ok(r) => {
            let corners = [
                (0.0, 0.0),
                (w as f64, 0.0),
                (0.0, h as f64),
                (w as f64, h as f64),
            ];
            let err = corners
                .iter()
                .map(|&(x, y)| {
                    let (a, b) = r.transform.apply(x, y);
                    let (c, d) = truth.apply(x, y);
                    (a - c).hypot(b - d)
                })
                .fold(0.0, f64::max);
            serde_json::json!({
                "truth": truth.matrix,
                "estimate": r.transform.matrix,
                "correlation": r.correlation,
                "converged": r.converged,
                "iterations": r.iterations,
                "max_corner_error": err,
            })
            .to_string()
        }
        Err(e) => error_json(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulate_returns_frames_and_metrics() {
        let v: serde_json::Value =
            serde_json::from_str(&simulate(r#"{"seed": 3, "frames": 50}"#)).unwrap();
        assert!(v.get("error").is_none(), "{v}");
        assert_eq!(v["frames"].as_array().unwrap().len(), 50);
        assert!(v["metrics"]["mota"].as_f64().unwrap() > 0.5);
    }

    #[test]
    fn clean_simulation_is_perfect() {
        let v: serde_json::Value =
            serde_json::from_str(&simulate(r#"{"noise": 0, "flip": 0, "occlusions": false}"#))
                .unwrap();
        assert_eq!(v["metrics"]["mota"], 1.0);
    }

    #[test]
    fn bad_requests_report_errors() {
        assert!(simulate("{").contains("error"));
        assert!(simulate(r#"{"oracle": "bogus"}"#).contains("unknown oracle"));
        assert!(nms_explorer(r#"[{"box":[0,0,-1,1],"score":1}]"#, 0.5).contains("error"));
    }

    #[test]
    fn nms_keeps_the_best_of_a_cluster() {
        let items = r#"[{"box":[0,0,10,10],"score":0.5},{"box":[1,0,10,10],"score":0.9},{"box":[50,50,10,10],"score":0.1}]"#;
        let v: serde_json::Value = serde_json::from_str(&nms_explorer(items, 0.5)).unwrap();
        assert_eq!(v["kept"], serde_json::json!([1, 2]));
    }

    #[test]
    fn ecc_demo_recovers_small_warps() {
        let v: serde_json::Value = serde_json::from_str(&ecc_demo(4.0, -3.0, 2.0)).unwrap();
        assert!(v["max_corner_error"].as_f64().unwrap() < 1.0, "{v}");
    }
}
