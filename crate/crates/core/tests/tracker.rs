mod common;

use std::collections::BTreeSet;

use tracktor::backends::{FileBackend, GtOracle, NoiseModel, RecordingBackend};
use tracktor::geometry::iou;
use tracktor::metrics;
use tracktor::motio;
use tracktor::oracles::OracleConfig;
use tracktor::synth::{self, SynthConfig};
use tracktor::tracker::{self, Mode, TrackerConfig};

use common::*;

#[test]
fn private_mode_is_perfect_without_noise() {
    let s = synth::generate(&clean_config(4)).unwrap();
    let config = TrackerConfig {
        mode: Mode::Private,
        ..TrackerConfig::default()
    };
    let (r, _) = track_and_score(
        &s,
        &NoiseModel::zero(),
        &config,
        &OracleConfig::default(),
        false,
    );
    assert_eq!((r.mota, r.idf1, r.idsw), (1.0, 1.0, 0));
}

#[test]
fn output_invariants_hold_under_noise() {
    let s = occlusion_sequence(2, 8, &standard_events());
    let config = TrackerConfig {
        mode: Mode::Public,
        ..TrackerConfig::default()
    };
    let (_, results) = track_and_score(
        &s,
        &noisy_model(2),
        &config,
        &OracleConfig::default(),
        false,
    );
    let mut frames = std::collections::BTreeMap::<_, Vec<&motio::ResultEntry>>::new();
    for r in &results {
        assert!(r.conf >= config.sigma_active, "{r:?}");
        frames.entry(r.frame).or_default().push(r);
    }
    for rows in frames.values() {
        let ids: BTreeSet<u64> = rows.iter().map(|r| r.track_id).collect();
        assert_eq!(ids.len(), rows.len(), "one box per id per frame");
        for (i, a) in rows.iter().enumerate() {
            for b in &rows[i + 1..] {
                assert!(iou(&a.bbox, &b.bbox) <= config.lambda_active);
            }
        }
    }
}

#[test]
fn recorded_backend_replays_identically() {
    let s = occlusion_sequence(6, 8, &standard_events());
    let noise = noisy_model(6);
    let seq = s.to_sequence(Some(synth::derive_detections(&s.entries, &noise)));
    let config = TrackerConfig::default();
    let mut rec = RecordingBackend::new(GtOracle::new(seq.gt(), noise));
    let first = tracker::run(&seq, &config, &mut rec, None).unwrap();
    let mut replay = FileBackend::from_reader(rec.log().as_bytes()).unwrap();
    let second = tracker::run(&seq, &config, &mut replay, None).unwrap();
    assert_eq!(
        motio::result_entries(&first.tracks),
        motio::result_entries(&second.tracks)
    );
}

#[test]
fn oracle_interpolation_fills_gaps() {
    let s = occlusion_sequence(8, 8, &standard_events());
    let noise = noisy_model(8);
    let config = TrackerConfig {
        enable_reid: true,
        ..TrackerConfig::default()
    };
    let reid: OracleConfig = "reid".parse().unwrap();
    let with_inter: OracleConfig = "reid,inter".parse().unwrap();
    let (a, _) = track_and_score(&s, &noise, &config, &reid, false);
    let (b, rows) = track_and_score(&s, &noise, &config, &with_inter, false);
    assert!(b.fn_ <= a.fn_);
    let mut by_id = std::collections::BTreeMap::<u64, Vec<u32>>::new();
    for r in &rows {
        by_id.entry(r.track_id).or_default().push(r.frame.get());
    }
    for frames in by_id.values() {
        assert!(
            frames.windows(2).all(|w| w[1] == w[0] + 1),
            "no holes after interpolation"
        );
    }
}

#[test]
fn camera_motion_compensation_keeps_tracks_alive() {
    // a steadily panning camera: 6 px per frame is most of a small box width
    let n = 25;
    let cfg = SynthConfig {
        n_tracks: 4,
        n_frames: n,
        frame_w: 320,
        frame_h: 240,
        size_range: (30.0, 40.0),
        aspect: 0.4,
        speed_range: (0.0, 0.5),
        camera_path: (0..n)
            .map(|t| tracktor::Transform2D::translation(-6.0 * f64::from(t), 0.0))
            .collect(),
        max_pair_iou: Some(0.1),
        render: true,
        rng_seed: 1,
        ..SynthConfig::default()
    };
    let s = synth::generate(&cfg).unwrap();
    let seq = s.to_sequence(Some(synth::derive_detections(
        &s.entries,
        &NoiseModel::zero(),
    )));
    let gt = seq.gt();
    let score = |enable_cmc: bool| {
        let config = TrackerConfig {
            enable_cmc,
            ..TrackerConfig::default()
        };
        let mut backend = GtOracle::new(gt.clone(), NoiseModel::zero());
        let out = tracker::run(&seq, &config, &mut backend, None).unwrap();
        assert!(
            out.warnings.iter().all(|w| !w.contains("disabled")),
            "{:?}",
            out.warnings
        );
        metrics::evaluate(&gt, &motio::result_entries(&out.tracks), Some(n)).unwrap()
    };
    let without = score(false);
    let with = score(true);
    assert!(without.idsw > 0, "the pan should break plain regression");
    assert_eq!(with.idsw, 0);
    assert!(with.mota > without.mota);
}

#[test]
fn cmc_without_images_warns() {
    let s = synth::generate(&clean_config(1)).unwrap();
    let seq = s.to_sequence(Some(synth::derive_detections(
        &s.entries,
        &NoiseModel::zero(),
    )));
    let config = TrackerConfig {
        enable_cmc: true,
        ..TrackerConfig::default()
    };
    let mut backend = GtOracle::new(seq.gt(), NoiseModel::zero());
    let out = tracker::run(&seq, &config, &mut backend, None).unwrap();
    assert_eq!(out.warnings.len(), 1);
}

#[test]
fn cva_runs_on_two_frames() {
    let cfg = SynthConfig {
        n_frames: 2,
        ..clean_config(3)
    };
    let s = synth::generate(&cfg).unwrap();
    let config = TrackerConfig {
        enable_cva: true,
        ..TrackerConfig::default()
    };
    let (r, _) = track_and_score(
        &s,
        &NoiseModel::zero(),
        &config,
        &OracleConfig::default(),
        false,
    );
    assert_eq!(r.mota, 1.0);
}

/// Result ids that cover gt track `id` at IoU >= 0.5.
fn ids_covering(
    s: &synth::SynthSequence,
    results: &[motio::ResultEntry],
    id: u64,
) -> BTreeSet<u64> {
    s.entries
        .iter()
        .filter(|g| g.track_id == id)
        .flat_map(|g| {
            results
                .iter()
                .filter(move |r| r.frame == g.frame && iou(&r.bbox, &g.bbox) >= 0.5)
        })
        .map(|r| r.track_id)
        .collect()
}

#[test]
fn reid_bridges_a_short_full_occlusion() {
    // two walkers far apart; walker 1 is fully hidden in frames 8..=10
    let mut entries = Vec::new();
    for t in 1..=20u32 {
        for id in [1u64, 2] {
            let x = if id == 1 { 100.0 } else { 400.0 } + f64::from(t);
            entries.push(motio::GtEntry {
                frame: tracktor::FrameIndex::new(t).unwrap(),
                track_id: id,
                bbox: tracktor::BoundingBox::new(x, 150.0, 40.0, 90.0).unwrap(),
                conf: 1,
                class_id: 1,
                visibility: if id == 1 && (8..=10).contains(&t) {
                    0.0
                } else {
                    1.0
                },
            });
        }
    }
    let s = synth::SynthSequence {
        info: motio::SequenceInfo {
            name: "gap".into(),
            frame_rate: 30.0,
            width: 640,
            height: 480,
            length: 20,
            image_dir: None,
        },
        entries,
        images: None,
    };
    let clean = NoiseModel {
        center_sigma: 0.0,
        scale_sigma: 0.0,
        score_flip_prob: 0.0,
        miss_visibility: 0.3,
        rng_seed: 0,
    };
    let plain = track_and_score(
        &s,
        &clean,
        &TrackerConfig::default(),
        &OracleConfig::default(),
        false,
    )
    .1;
    assert_eq!(
        ids_covering(&s, &plain, 1).len(),
        2,
        "without reID the gap splits the track"
    );
    let reid_cfg = TrackerConfig {
        enable_reid: true,
        ..TrackerConfig::default()
    };
    let with = track_and_score(&s, &clean, &reid_cfg, &OracleConfig::default(), true).1;
    assert_eq!(ids_covering(&s, &with, 1).len(), 1);
    assert_eq!(ids_covering(&s, &with, 2).len(), 1);
    // no box is emitted for the hidden walker while it is gone
    let id1 = *ids_covering(&s, &with, 1).first().unwrap();
    assert!(!with
        .iter()
        .any(|r| r.track_id == id1 && (8..=10).contains(&r.frame.get())));
}
