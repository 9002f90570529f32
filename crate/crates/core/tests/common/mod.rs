#![allow(dead_code)]

use std::sync::Arc;

use tracktor::backends::{GtOracle, NoiseModel};
use tracktor::metrics::{self, MetricsReport};
use tracktor::motio::{self, GtEntry};
use tracktor::oracles::OracleConfig;
use tracktor::synth::{self, OcclusionEvent, SynthConfig, SynthError, SynthSequence};
use tracktor::tracker::{self, GtIdentityEmbedder, TrackerConfig};

/// Well-separated movers with a static camera and no occlusion events.
pub fn clean_config(seed: u64) -> SynthConfig {
    SynthConfig {
        name: format!("clean-{seed}"),
        n_tracks: 6,
        n_frames: 60,
        size_range: (40.0, 80.0),
        aspect: 0.5,
        speed_range: (0.5, 3.0),
        max_pair_iou: Some(0.25),
        rng_seed: seed,
        ..SynthConfig::default()
    }
}

pub fn noisy_model(seed: u64) -> NoiseModel {
    NoiseModel {
        center_sigma: 2.0,
        scale_sigma: 0.05,
        score_flip_prob: 0.03,
        miss_visibility: 0.3,
        rng_seed: seed,
    }
}

/// Scene with `events` forced occlusions. Seeds that make an event
/// infeasible are skipped deterministically.
pub fn occlusion_sequence(seed: u64, n_tracks: u32, events: &[OcclusionEvent]) -> SynthSequence {
    for attempt in 0..50 {
        let cfg = SynthConfig {
            name: format!("occl-{seed}"),
            n_tracks,
            n_frames: 100,
            size_range: (50.0, 90.0),
            aspect: 0.45,
            speed_range: (1.0, 5.0),
            occlusion_events: events.to_vec(),
            rng_seed: seed * 1000 + attempt,
            ..SynthConfig::default()
        };
        match synth::generate(&cfg) {
            Ok(s) => return s,
            Err(SynthError::InfeasibleOcclusion { .. }) => continue,
            Err(e) => panic!("{e}"),
        }
    }
    panic!("no feasible layout for seed {seed}");
}

pub fn standard_events() -> Vec<OcclusionEvent> {
    vec![
        OcclusionEvent {
            front: 1,
            back: 2,
            start: 45,
            length: 6,
        },
        OcclusionEvent {
            front: 3,
            back: 4,
            start: 75,
            length: 8,
        },
    ]
}

/// Tracks `s` in public mode with detections sampled through `noise` and a
/// ground-truth backend using the same noise.
pub fn track_and_score(
    s: &SynthSequence,
    noise: &NoiseModel,
    config: &TrackerConfig,
    oracle: &OracleConfig,
    gt_embedder: bool,
) -> (MetricsReport, Vec<motio::ResultEntry>) {
    let seq = s.to_sequence(Some(synth::derive_detections(&s.entries, noise)));
    let gt = seq.gt();
    let mut backend = GtOracle::new(gt.clone(), *noise);
    let mut embedder = GtIdentityEmbedder::new(Arc::new(gt.clone()));
    let emb: Option<&mut dyn tracker::EmbeddingProvider> = if gt_embedder {
        Some(&mut embedder)
    } else {
        None
    };
    let out = tracker::run_with_oracle(&seq, config, oracle, &mut backend, emb)
        .expect("tracking succeeds");
    let results = motio::result_entries(&out.tracks);
    let report = metrics::evaluate(&gt, &results, Some(s.info.length)).expect("frames in range");
    (report, results)
}

pub fn gt_as_results(entries: &[GtEntry]) -> Vec<motio::ResultEntry> {
    entries
        .iter()
        .map(|e| motio::ResultEntry {
            frame: e.frame,
            track_id: e.track_id,
            bbox: e.bbox,
            conf: 1.0,
        })
        .collect()
}
