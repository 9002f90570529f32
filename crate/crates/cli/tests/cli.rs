use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tracktor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tracktor"))
        .args(args)
        .env_remove("SOURCE_DATE_EPOCH")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = tracktor(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a clean synthetic sequence and returns its directory.
fn clean_sequence(root: &Path, name: &str, seed: u64, extra: &[&str]) -> PathBuf {
    let dir = root.join(name);
    let seed = seed.to_string();
    let mut args = vec![
        "synth",
        "--out",
        s(&dir),
        "--seed",
        &seed,
        "--name",
        name,
        "--tracks",
        "5",
        "--frames",
        "30",
        "--max-pair-iou",
        "0.25",
    ];
    args.extend_from_slice(extra);
    ok(&args);
    dir
}

fn dets(dir: &Path) -> String {
    format!("{}/det/det.txt", s(dir))
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = clean_sequence(
        tmp.path(),
        "a",
        7,
        &[
            "--render",
            "--width",
            "160",
            "--height",
            "120",
            "--heights",
            "20,40",
        ],
    );
    let b = clean_sequence(
        tmp.path(),
        "b",
        7,
        &[
            "--render",
            "--width",
            "160",
            "--height",
            "120",
            "--heights",
            "20,40",
        ],
    );
    for rel in [
        "gt/gt.txt",
        "det/det.txt",
        "img1/000001.png",
        "img1/000030.png",
    ] {
        assert_eq!(
            fs::read(a.join(rel)).unwrap(),
            fs::read(b.join(rel)).unwrap(),
            "{rel}"
        );
    }
    let c = clean_sequence(tmp.path(), "c", 8, &[]);
    assert_ne!(
        fs::read(a.join("gt/gt.txt")).unwrap(),
        fs::read(c.join("gt/gt.txt")).unwrap()
    );
}

#[test]
fn closed_loop_track_then_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = clean_sequence(tmp.path(), "s", 1, &[]);
    let out = tmp.path().join("out");
    let d = dets(&seq);
    ok(&[
        "track",
        "--seq",
        s(&seq),
        "--backend",
        "gt",
        "--noise",
        "0",
        "--mode",
        "public",
        "--dets",
        &d,
        "--out",
        s(&out),
    ]);
    let stdout = ok(&[
        "evaluate",
        "--seq",
        s(&seq),
        "--results",
        s(&out.join("s.txt")),
    ]);
    assert!(stdout.contains("MOTA 1.000"), "{stdout}");
}

#[test]
fn evaluate_gt_against_itself() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = clean_sequence(tmp.path(), "s", 2, &[]);
    // a ground-truth file is a valid result file once the last three columns become -1
    let rows: String = fs::read_to_string(seq.join("gt/gt.txt"))
        .unwrap()
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            format!("{},1,-1,-1,-1\n", f[..6].join(","))
        })
        .collect();
    let res = tmp.path().join("self.txt");
    fs::write(&res, rows).unwrap();
    let stdout = ok(&["evaluate", "--seq", s(&seq), "--results", s(&res)]);
    assert!(stdout.contains("MOTA 1.000"), "{stdout}");
}

#[test]
fn usage_and_missing_file_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = clean_sequence(tmp.path(), "s", 3, &[]);
    let out = tracktor(&[
        "track",
        "--seq",
        s(&seq),
        "--mode",
        "public",
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--dets"));

    let out = tracktor(&[
        "evaluate",
        "--seq",
        s(&seq),
        "--results",
        s(&tmp.path().join("missing.txt")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = tracktor(&[
        "track",
        "--seq",
        s(&tmp.path().join("nowhere")),
        "--mode",
        "private",
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seqinfo.ini"));
}

#[test]
fn multi_sequence_all_row_sums_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let a = clean_sequence(
        tmp.path(),
        "a",
        4,
        &["--noise", "3", "--noise-flip", "0.05"],
    );
    let b = clean_sequence(
        tmp.path(),
        "b",
        5,
        &["--noise", "3", "--noise-flip", "0.05"],
    );
    let out = tmp.path().join("out");
    let dets = format!("{}/{{seq}}/det/det.txt", s(tmp.path()));
    ok(&[
        "track",
        "--seq",
        s(&a),
        "--seq",
        s(&b),
        "--dets",
        &dets,
        "--noise",
        "3",
        "--noise-flip",
        "0.05",
        "--jobs",
        "2",
        "--out",
        s(&out),
    ]);
    let csv = tmp.path().join("m.csv");
    ok(&[
        "evaluate",
        "--seq",
        s(&a),
        "--seq",
        s(&b),
        "--results",
        s(&out),
        "--csv",
        s(&csv),
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    let rows: Vec<Vec<String>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2][0], "ALL");
    for col in 3..8 {
        let sum: u64 = rows[..2]
            .iter()
            .map(|r| r[col].parse::<u64>().unwrap())
            .sum();
        assert_eq!(sum, rows[2][col].parse::<u64>().unwrap(), "column {col}");
    }

    // parallel and sequential runs agree
    let serial = tmp.path().join("serial");
    ok(&[
        "track",
        "--seq",
        s(&a),
        "--seq",
        s(&b),
        "--dets",
        &dets,
        "--noise",
        "3",
        "--noise-flip",
        "0.05",
        "--out",
        s(&serial),
    ]);
    for n in ["a.txt", "b.txt"] {
        assert_eq!(
            fs::read(out.join(n)).unwrap(),
            fs::read(serial.join(n)).unwrap()
        );
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = clean_sequence(
        tmp.path(),
        "s",
        6,
        &["--noise", "2", "--noise-flip", "0.05"],
    );
    let d = dets(&seq);
    let out = tmp.path().join("out");
    let args = [
        "track",
        "--seq",
        s(&seq),
        "--dets",
        &d,
        "--noise",
        "2",
        "--noise-flip",
        "0.05",
        "--seed",
        "9",
        "--reid",
        "--out",
        s(&out),
    ];
    ok(&args);
    let first = (
        fs::read(out.join("s.txt")).unwrap(),
        fs::read(out.join("s.manifest.json")).unwrap(),
    );
    ok(&args);
    assert_eq!(first.0, fs::read(out.join("s.txt")).unwrap());
    assert_eq!(first.1, fs::read(out.join("s.manifest.json")).unwrap());
    let manifest: serde_json::Value = serde_json::from_slice(&first.1).unwrap();
    assert_eq!(manifest["seeds"]["noise"], 9);
    assert_eq!(manifest["config"]["tracker"]["enable_reid"], true);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = clean_sequence(tmp.path(), "s", 7, &[]);
    let cfg = tmp.path().join("c.toml");
    fs::write(
        &cfg,
        "[tracker]\nsigma_active = 0.7\nlambda_new = 0.4\n\n[noise]\ncenter_sigma = 1.5\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let d = dets(&seq);
    ok(&[
        "track",
        "--seq",
        s(&seq),
        "--dets",
        &d,
        "--config",
        s(&cfg),
        "--lambda-new",
        "0.2",
        "--out",
        s(&out),
    ]);
    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("s.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["tracker"]["sigma_active"], 0.7);
    assert_eq!(m["config"]["tracker"]["lambda_new"], 0.2);
    assert_eq!(m["config"]["tracker"]["lambda_active"], 0.6);
    assert_eq!(m["config"]["noise"]["center_sigma"], 1.5);

    fs::write(&cfg, "[tracker]\nsigma = 0.7\n").unwrap();
    let bad = tracktor(&[
        "track",
        "--seq",
        s(&seq),
        "--dets",
        &d,
        "--config",
        s(&cfg),
        "--out",
        s(&out),
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn oracle_all_has_no_false_positives_or_switches() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("s");
    let feasible = (0..50).any(|seed: u32| {
        let seed = seed.to_string();
        tracktor(&[
            "synth",
            "--out",
            s(&seq),
            "--seed",
            &seed,
            "--name",
            "s",
            "--tracks",
            "5",
            "--frames",
            "40",
            "--max-speed",
            "6",
            "--occlusion",
            "1:2:25:4",
            "--noise",
            "2",
            "--noise-flip",
            "0.05",
        ])
        .status
        .success()
    });
    assert!(feasible);
    let d = dets(&seq);
    let stdout = ok(&[
        "oracle",
        "--seq",
        s(&seq),
        "--dets",
        &d,
        "--noise",
        "2",
        "--noise-flip",
        "0.05",
        "--oracle",
        "all",
    ]);
    let all = stdout.lines().find(|l| l.starts_with("ALL")).unwrap();
    let cols: Vec<&str> = all.split_whitespace().collect();
    assert_eq!((cols[5], cols[7]), ("0", "0"), "{stdout}");
}

#[test]
fn visibility_analysis_on_perfect_results_is_all_ones() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = clean_sequence(tmp.path(), "s", 9, &[]);
    let out = tmp.path().join("out");
    let d = dets(&seq);
    ok(&["track", "--seq", s(&seq), "--dets", &d, "--out", s(&out)]);
    let csv = ok(&[
        "analyze",
        "--kind",
        "visibility",
        "--seq",
        s(&seq),
        "--results",
        s(&out.join("s.txt")),
    ]);
    let ratios: Vec<&str> = csv
        .lines()
        .skip(2)
        .map(|l| l.split(',').nth(1).unwrap())
        .filter(|r| !r.is_empty())
        .collect();
    assert!(!ratios.is_empty());
    assert!(ratios.iter().all(|r| *r == "1.000000"), "{csv}");
}

#[test]
fn frame_rate_study_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = clean_sequence(tmp.path(), "s", 10, &[]);
    let d = dets(&seq);
    let csv = ok(&[
        "analyze",
        "--kind",
        "framerate",
        "--seq",
        s(&seq),
        "--dets",
        &d,
    ]);
    let ks: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(ks, ["1", "2", "3", "6", "10"]);
    assert!(
        csv.lines().nth(1).unwrap().starts_with("1,30,30,1.000000"),
        "{csv}"
    );
}

#[test]
fn external_backend_through_serve_matches_gt_backend() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = clean_sequence(tmp.path(), "s", 11, &["--noise", "2"]);
    let d = dets(&seq);
    let cmd = format!(
        "{} serve --seq {} --noise 2 --seed 5",
        env!("CARGO_BIN_EXE_tracktor"),
        s(&seq)
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&[
        "track",
        "--seq",
        s(&seq),
        "--dets",
        &d,
        "--noise",
        "2",
        "--seed",
        "5",
        "--out",
        s(&a),
    ]);
    ok(&[
        "track",
        "--seq",
        s(&seq),
        "--dets",
        &d,
        "--backend",
        "external",
        "--backend-cmd",
        &cmd,
        "--out",
        s(&b),
    ]);
    assert_eq!(
        fs::read(a.join("s.txt")).unwrap(),
        fs::read(b.join("s.txt")).unwrap()
    );
}

#[test]
fn recorded_log_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = clean_sequence(
        tmp.path(),
        "s",
        12,
        &["--noise", "2", "--noise-flip", "0.05"],
    );
    let d = dets(&seq);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&[
        "track",
        "--seq",
        s(&seq),
        "--dets",
        &d,
        "--noise",
        "2",
        "--noise-flip",
        "0.05",
        "--record",
        "--out",
        s(&a),
    ]);
    let log = format!("{}/{{seq}}.backend.log", s(&a));
    ok(&[
        "track",
        "--seq",
        s(&seq),
        "--dets",
        &d,
        "--backend",
        "file",
        "--backend-log",
        &log,
        "--out",
        s(&b),
    ]);
    assert_eq!(
        fs::read(a.join("s.txt")).unwrap(),
        fs::read(b.join("s.txt")).unwrap()
    );
}

#[test]
fn cva_on_two_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("s");
    ok(&[
        "synth",
        "--out",
        s(&dir),
        "--frames",
        "2",
        "--tracks",
        "3",
        "--name",
        "s",
    ]);
    let d = dets(&dir);
    ok(&[
        "track",
        "--seq",
        s(&dir),
        "--dets",
        &d,
        "--cva",
        "--out",
        s(&tmp.path().join("o")),
    ]);
}

#[test]
fn help_lists_defaults() {
    let help = ok(&["track", "--help"]);
    for needle in [
        "--sigma-active",
        "[default: 0.5]",
        "[default: 0.6]",
        "[default: 0.3]",
        "--oracle",
        "--jobs",
        "--decimate",
    ] {
        assert!(help.contains(needle), "{needle}");
    }
}
