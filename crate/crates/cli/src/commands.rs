use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde_json::json;

use tracktor::analysis::{self, default_height_edges, default_visibility_edges};
use tracktor::backends::{
    self, ExternalBackend, FileBackend, GtOracle, NoiseModel, ProcessSpec, RecordingBackend,
    RegressorClassifier,
};
use tracktor::manifest::RunManifest;
use tracktor::metrics::{self, MetricsReport};
use tracktor::motio::{self, ResultEntry};
use tracktor::oracles::OracleConfig;
use tracktor::sequence::Sequence;
use tracktor::synth::{self, OcclusionEvent, SynthConfig};
use tracktor::tracker::{self, GtIdentityEmbedder, Mode, TrackerConfig};

use crate::options::{per_sequence, per_sequence_path, BackendArgs, BackendKind, FileConfig};
use crate::{usage_error, AnalysisKind, RunArgs, SequenceArgs};

/// Error carrying a specific process exit status.
#[derive(Debug)]
pub struct Exit(pub u8, pub String);

impl fmt::Display for Exit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Exit {}

fn sequence_name(seq: &Sequence, dir: &Path) -> String {
    if seq.info.name.is_empty() {
        dir.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sequence".into())
    } else {
        seq.info.name.clone()
    }
}

fn load_sequence(dir: &Path, args: &SequenceArgs) -> Result<(String, Sequence)> {
    let mut seq = Sequence::load(dir)?;
    let name = sequence_name(&seq, dir);
    if let Some(gt) = &args.gt {
        seq.ground_truth = Sequence::load_ground_truth(&per_sequence_path(gt, &name))?;
    }
    if let Some(d) = &args.dets {
        let set = Sequence::load_detections(&per_sequence_path(d, &name))?;
        for c in &set.clamped {
            eprintln!(
                "warning: {name}: detection line {} score {} clamped to [0, 1]",
                c.line, c.raw
            );
        }
        seq.detections = Some(set);
    }
    if args.decimate != 1 {
        seq = analysis::decimate(&seq, args.decimate)?;
    }
    Ok((name, seq))
}

fn make_backend(
    args: &BackendArgs,
    seq: &Sequence,
    name: &str,
    noise: NoiseModel,
) -> Result<Box<dyn RegressorClassifier>> {
    Ok(match args.backend {
        BackendKind::Gt => {
            if seq.ground_truth.is_empty() {
                bail!("{name}: --backend gt needs ground truth");
            }
            Box::new(GtOracle::new(seq.gt(), noise))
        }
        BackendKind::File => {
            let path = per_sequence_path(args.backend_log.as_deref().expect("validated"), name);
            let file =
                fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
            Box::new(
                FileBackend::from_reader(std::io::BufReader::new(file))
                    .with_context(|| path.display().to_string())?,
            )
        }
        BackendKind::External => {
            let cmd = per_sequence(args.backend_cmd.as_deref().expect("validated"), name);
            let timeout = Duration::from_secs_f64(args.backend_timeout);
            Box::new(
                ExternalBackend::spawn(ProcessSpec::shell(&cmd), timeout)
                    .with_context(|| format!("starting `{cmd}`"))?,
            )
        }
    })
}

struct Plan {
    config: TrackerConfig,
    noise: NoiseModel,
    oracle: OracleConfig,
}

fn plan(run: &RunArgs, oracle: &str) -> Result<Plan> {
    let file = FileConfig::load(run.config.as_deref())?;
    let config = run.tracker.merge(&file)?;
    let noise = run.backend.noise(&file)?;
    run.backend.validate()?;
    let oracle: OracleConfig = oracle.parse().map_err(|e: String| anyhow!(e))?;
    if config.mode == Mode::Public && run.sequences.dets.is_none() {
        usage_error("--mode public needs --dets (use --mode private to detect with the backend)");
    }
    if run.sequences.decimate == 0 {
        usage_error("--decimate must be >= 1");
    }
    Ok(Plan {
        config,
        noise,
        oracle,
    })
}

/// Tracks one loaded sequence. Returns result rows and the backend description.
fn track_sequence(
    seq: &Sequence,
    name: &str,
    plan: &Plan,
    backend_args: &BackendArgs,
    record: Option<&Path>,
) -> Result<(Vec<ResultEntry>, String)> {
    let backend = make_backend(backend_args, seq, name, plan.noise)?;
    let describe = backend.describe();
    let mut recorder = RecordingBackend::new(backend);
    let needs_embedder = plan.config.enable_reid && !plan.oracle.reid;
    if needs_embedder && seq.ground_truth.is_empty() {
        bail!("{name}: --reid uses the ground-truth identity embedder and needs ground truth");
    }
    let mut embedder = GtIdentityEmbedder::new(Arc::new(seq.gt()));
    let emb: Option<&mut dyn tracker::EmbeddingProvider> = if needs_embedder {
        Some(&mut embedder)
    } else {
        None
    };
    let out = tracker::run_with_oracle(seq, &plan.config, &plan.oracle, &mut recorder, emb)
        .with_context(|| format!("tracking {name}"))?;
    for w in &out.warnings {
        eprintln!("warning: {name}: {w}");
    }
    if let Some(path) = record {
        fs::write(path, recorder.log()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok((motio::result_entries(&out.tracks), describe))
}

pub fn track(
    run: &RunArgs,
    oracle: &str,
    out: Option<&Path>,
    record: bool,
    report: bool,
) -> Result<()> {
    let plan = plan(run, oracle)?;
    if let Some(out) = out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(run.jobs.max(1))
        .build()?;
    let rows: Vec<Result<(String, Option<MetricsReport>)>> = pool.install(|| {
        run.sequences
            .seqs
            .par_iter()
            .map(|dir| -> Result<(String, Option<MetricsReport>)> {
                let (name, seq) = load_sequence(dir, &run.sequences)?;
                let record_path = out.filter(|_| record).map(|o| o.join(format!("{name}.backend.log")));
                let (results, describe) = track_sequence(&seq, &name, &plan, &run.backend, record_path.as_deref())?;
                if let Some(out) = out {
                    let path = out.join(format!("{name}.txt"));
                    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    motio::write_result_entries(&results, BufWriter::new(file))?;
                    let mut manifest = RunManifest::new(
                        std::env::args().collect(),
                        json!({
                            "sequence": dir,
                            "tracker": plan.config,
                            "noise": plan.noise,
                            "oracle": plan.oracle.to_string(),
                            "decimate": run.sequences.decimate,
                            "detections": run.sequences.dets.as_deref().map(|d| per_sequence(d, &name)),
                        }),
                        describe,
                    )
                    .with_seed("noise", plan.noise.rng_seed);
                    manifest.outputs.insert("results".into(), path.display().to_string());
                    fs::write(out.join(format!("{name}.manifest.json")), manifest.to_json())?;
                }
                let metrics = if seq.ground_truth.is_empty() {
                    None
                } else {
                    Some(metrics::evaluate(&seq.gt(), &results, Some(seq.info.length))?)
                };
                Ok((name, metrics))
            })
            .collect()
    });
    let rows: Vec<(String, Option<MetricsReport>)> = rows.into_iter().collect::<Result<_>>()?;
    let scored: Vec<(String, MetricsReport)> = rows
        .into_iter()
        .filter_map(|(n, m)| m.map(|m| (n, m)))
        .collect();
    if report && scored.is_empty() {
        bail!("no ground truth to score against");
    }
    if !scored.is_empty() {
        print!("{}", metrics::text_report(&scored));
    }
    Ok(())
}

fn read_results(path: &Path) -> Result<Vec<ResultEntry>> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) => return Err(Exit(2, format!("result file {}: {e}", path.display())).into()),
    };
    motio::parse_results(std::io::BufReader::new(file)).with_context(|| path.display().to_string())
}

fn results_path(results: &Path, name: &str, many: bool) -> Result<PathBuf> {
    if results.is_dir() {
        Ok(results.join(format!("{name}.txt")))
    } else if many {
        bail!("--results must be a directory when scoring several sequences")
    } else {
        Ok(results.to_path_buf())
    }
}

pub fn evaluate(
    seqs: &[PathBuf],
    gt: Option<&str>,
    results: &Path,
    csv: Option<&Path>,
) -> Result<()> {
    let mut rows = Vec::new();
    if seqs.is_empty() {
        let Some(gt) = gt else {
            usage_error("evaluate needs --seq or --gt");
        };
        let entries = Sequence::load_ground_truth(Path::new(gt))?;
        let truth = tracktor::motio::GroundTruth::from_entries(&entries, &Default::default());
        let name = results
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let res = read_results(&results_path(results, &name, false)?)?;
        rows.push((name, metrics::evaluate(&truth, &res, None)?));
    }
    for dir in seqs {
        let args = SequenceArgs {
            seqs: vec![dir.clone()],
            gt: gt.map(str::to_string),
            dets: None,
            decimate: 1,
        };
        let (name, seq) = load_sequence(dir, &args)?;
        let res = read_results(&results_path(results, &name, seqs.len() > 1)?)?;
        rows.push((
            name.clone(),
            metrics::evaluate(&seq.gt(), &res, Some(seq.info.length)).with_context(|| name)?,
        ));
    }
    print!("{}", metrics::text_report(&rows));
    let all = metrics::aggregate(rows.iter().map(|(_, r)| r));
    println!(
        "MOTA {:.3} IDF1 {:.3} FP {} FN {} IDSW {}",
        all.mota, all.idf1, all.fp, all.fn_, all.idsw
    );
    if let Some(csv) = csv {
        fs::write(csv, metrics::csv_report(&rows))
            .with_context(|| format!("writing {}", csv.display()))?;
    }
    Ok(())
}

pub fn analyze(
    kind: AnalysisKind,
    run: &RunArgs,
    results: Option<&Path>,
    edges: Option<Vec<f64>>,
    min_visibility: f64,
    factors: &[u32],
    out: Option<&Path>,
) -> Result<()> {
    if run.sequences.seqs.len() != 1 {
        usage_error("analyze takes exactly one --seq");
    }
    let dir = &run.sequences.seqs[0];
    let csv = if kind == AnalysisKind::Framerate {
        let plan = plan(run, "none")?;
        let (name, seq) = load_sequence(dir, &run.sequences)?;
        let rows =
            analysis::frame_rate_study(&seq, factors, |d: &Sequence| -> Result<MetricsReport> {
                let (res, _) = track_sequence(d, &name, &plan, &run.backend, None)?;
                Ok(metrics::evaluate(&d.gt(), &res, Some(d.info.length))?)
            })?;
        analysis::frame_rate_csv(&rows)
    } else {
        let (name, seq) = load_sequence(dir, &run.sequences)?;
        let Some(results) = results else {
            usage_error("this analysis needs --results");
        };
        let res = read_results(&results_path(results, &name, false)?)?;
        let gt = seq.gt();
        let eval = metrics::evaluate_detailed(&gt, &res, Some(seq.info.length))?;
        match kind {
            AnalysisKind::Visibility => {
                let e = edges.unwrap_or_else(default_visibility_edges);
                analysis::visibility_analysis(&gt, &eval, &e)?.to_csv()
            }
            AnalysisKind::Height => {
                let e = edges.unwrap_or_else(default_height_edges);
                analysis::height_analysis(&gt, &eval, &e, min_visibility)?.to_csv()
            }
            AnalysisKind::Gaps => {
                let dets = seq.detections.as_ref().ok_or_else(|| {
                    anyhow!("gap analysis needs detections (--dets or <seq>/det/det.txt)")
                })?;
                analysis::gap_analysis(&gt, dets, &eval).to_csv()
            }
            AnalysisKind::Framerate => unreachable!(),
        }
    };
    match out {
        Some(p) => fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn parse_event(s: &str) -> Result<OcclusionEvent, String> {
    let parts: Vec<u64> = s
        .split(':')
        .map(|p| p.trim().parse::<u64>().map_err(|e| format!("{p}: {e}")))
        .collect::<Result<_, _>>()?;
    let [front, back, start, length] = parts[..] else {
        return Err("expected FRONT:BACK:START:LENGTH".into());
    };
    let small = |v: u64| u32::try_from(v).map_err(|_| format!("{v} is too large"));
    Ok(OcclusionEvent {
        front,
        back,
        start: small(start)?,
        length: small(length)?,
    })
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    /// Output sequence directory
    #[arg(long)]
    out: PathBuf,
    /// Seed of the scene and of the detection noise
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// TOML file with [synth] and [noise] tables; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of objects [default: 5]
    #[arg(long)]
    tracks: Option<u32>,
    /// Number of frames [default: 50]
    #[arg(long)]
    frames: Option<u32>,
    /// Frame width [default: 640]
    #[arg(long)]
    width: Option<u32>,
    /// Frame height [default: 480]
    #[arg(long)]
    height: Option<u32>,
    /// Box heights MIN,MAX in pixels [default: 60,120]
    #[arg(long, value_delimiter = ',')]
    heights: Option<Vec<f64>>,
    /// Largest object speed, pixels per frame [default: 3]
    #[arg(long)]
    max_speed: Option<f64>,
    /// Frames per second [default: 30]
    #[arg(long)]
    fps: Option<f64>,
    /// Sequence name [default: synth]
    #[arg(long)]
    name: Option<String>,
    /// Forced occlusion FRONT:BACK:START:LENGTH (repeatable)
    #[arg(long = "occlusion", value_parser = parse_event)]
    occlusions: Vec<OcclusionEvent>,
    /// Random camera drift per frame, pixels [default: 0]
    #[arg(long)]
    camera_shake: Option<f64>,
    /// Reject layouts where two objects overlap more than this outside occlusions
    #[arg(long)]
    max_pair_iou: Option<f64>,
    /// Also render frames to img1/
    #[arg(long)]
    render: bool,
    /// Center noise of the sampled detections, pixels [default: 0]
    #[arg(long)]
    noise: Option<f64>,
    /// Relative size noise of the sampled detections [default: 0]
    #[arg(long)]
    noise_scale: Option<f64>,
    /// Probability of a detection scoring 0 [default: 0]
    #[arg(long)]
    noise_flip: Option<f64>,
    /// Objects less visible than this get no detection [default: 0]
    #[arg(long)]
    miss_visibility: Option<f64>,
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let mut cfg: SynthConfig = file.synth.unwrap_or_default();
    cfg.rng_seed = args.seed;
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => { $( if let Some(v) = args.$flag.clone() { cfg.$field = v; } )* };
    }
    set!(tracks => n_tracks, frames => n_frames, width => frame_w, height => frame_h, fps => frame_rate, name => name);
    if let Some(h) = &args.heights {
        let [lo, hi] = h[..] else {
            bail!("--heights takes MIN,MAX");
        };
        cfg.size_range = (lo, hi);
    }
    if let Some(v) = args.max_speed {
        cfg.speed_range = (cfg.speed_range.0.min(v), v);
    }
    if args.max_pair_iou.is_some() {
        cfg.max_pair_iou = args.max_pair_iou;
    }
    if !args.occlusions.is_empty() {
        cfg.occlusion_events = args.occlusions.clone();
    }
    if let Some(px) = args.camera_shake.filter(|&px| px > 0.0) {
        cfg.camera_path = synth::random_camera_path(cfg.n_frames, px, px * 1e-3, args.seed);
    }
    cfg.render |= args.render;

    let mut noise = file.noise.unwrap_or_default();
    noise.rng_seed = args.seed;
    macro_rules! set_noise {
        ($($flag:ident => $field:ident),*) => { $( if let Some(v) = args.$flag { noise.$field = v; } )* };
    }
    set_noise!(noise => center_sigma, noise_scale => scale_sigma, noise_flip => score_flip_prob, miss_visibility => miss_visibility);
    noise.validate()?;

    let s = synth::generate(&cfg)?;
    let dets = synth::derive_detections(&s.entries, &noise);
    synth::write_tree(&args.out, &s, Some(&dets))?;
    let mut settings = serde_json::to_string_pretty(&json!({ "synth": cfg, "noise": noise }))?;
    settings.push('\n');
    fs::write(args.out.join("synth.json"), settings)?;
    eprintln!(
        "wrote {} ({} frames, {} boxes, {} detections)",
        args.out.display(),
        cfg.n_frames,
        s.entries.len(),
        dets.len()
    );
    Ok(())
}

pub fn serve(seq: &Path, args: &BackendArgs, config: Option<&Path>) -> Result<()> {
    if args.backend == BackendKind::External {
        bail!("serve answers with the gt or file backend");
    }
    args.validate()?;
    let noise = args.noise(&FileConfig::load(config)?)?;
    let dir_args = SequenceArgs {
        seqs: vec![seq.to_path_buf()],
        gt: None,
        dets: None,
        decimate: 1,
    };
    let (name, s) = load_sequence(seq, &dir_args)?;
    let mut backend = make_backend(args, &s, &name, noise)?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    backends::serve(&mut backend, stdin.lock(), stdout.lock())?;
    Ok(())
}
