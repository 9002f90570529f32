//! Tracker, noise and backend flags shared by `track`, `oracle`, `analyze`
//! and `serve`, merged over an optional TOML file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use tracktor::backends::NoiseModel;
use tracktor::synth::SynthConfig;
use tracktor::tracker::{Mode, TrackerConfig};
use tracktor::TransformKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// Simulated detector answering from ground truth
    Gt,
    /// Replays a recorded regression log
    File,
    /// Child process speaking JSON lines on stdin/stdout
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CliMode {
    Private,
    Public,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Cmc {
    Off,
    Euclidean,
    Affine,
}

/// Sections of the `--config` file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub tracker: Option<TrackerConfig>,
    pub noise: Option<NoiseModel>,
    pub synth: Option<SynthConfig>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    /// Regressor/classifier backend
    #[arg(long, value_enum, default_value = "gt")]
    pub backend: BackendKind,
    /// Command for `--backend external`, run through `sh -c`; `{seq}` is replaced by the sequence name
    #[arg(long)]
    pub backend_cmd: Option<String>,
    /// Regression log for `--backend file`; `{seq}` is replaced by the sequence name
    #[arg(long)]
    pub backend_log: Option<String>,
    /// Seconds to wait for each external backend response
    #[arg(long, default_value_t = 30.0)]
    pub backend_timeout: f64,
    /// Center noise of the gt backend, pixels [default: 0]
    #[arg(long)]
    pub noise: Option<f64>,
    /// Relative size noise of the gt backend [default: 0]
    #[arg(long)]
    pub noise_scale: Option<f64>,
    /// Probability that the gt backend scores an object 0 [default: 0]
    #[arg(long)]
    pub noise_flip: Option<f64>,
    /// Objects less visible than this are missed by the gt backend [default: 0]
    #[arg(long)]
    pub miss_visibility: Option<f64>,
    /// Seed of the gt backend noise [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

impl BackendArgs {
    pub fn noise(&self, file: &FileConfig) -> Result<NoiseModel> {
        let mut n = file.noise.unwrap_or_default();
        if let Some(v) = self.noise {
            n.center_sigma = v;
        }
        if let Some(v) = self.noise_scale {
            n.scale_sigma = v;
        }
        if let Some(v) = self.noise_flip {
            n.score_flip_prob = v;
        }
        if let Some(v) = self.miss_visibility {
            n.miss_visibility = v;
        }
        if let Some(v) = self.seed {
            n.rng_seed = v;
        }
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        match self.backend {
            BackendKind::External if self.backend_cmd.is_none() => {
                bail!("--backend external needs --backend-cmd")
            }
            BackendKind::File if self.backend_log.is_none() => {
                bail!("--backend file needs --backend-log")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrackerArgs {
    /// Where new tracks come from [default: public]
    #[arg(long, value_enum)]
    pub mode: Option<CliMode>,
    /// Kill tracks scoring below this [default: 0.5]
    #[arg(long)]
    pub sigma_active: Option<f64>,
    /// NMS threshold between active tracks [default: 0.6]
    #[arg(long)]
    pub lambda_active: Option<f64>,
    /// NMS threshold for new detections [default: 0.3]
    #[arg(long)]
    pub lambda_new: Option<f64>,
    /// Camera motion compensation [default: off]
    #[arg(long, value_enum)]
    pub cmc: Option<Cmc>,
    /// Constant-velocity motion model
    #[arg(long)]
    pub cva: bool,
    /// Re-identify tracks from the gallery (needs ground truth for the identity embedder)
    #[arg(long)]
    pub reid: bool,
    /// Frames a lost track stays in the gallery [default: 10]
    #[arg(long)]
    pub f_reid: Option<u32>,
    /// Largest embedding distance accepted for reID [default: 2.0]
    #[arg(long)]
    pub reid_dist: Option<f64>,
    /// Smallest IoU between gallery and candidate boxes for reID [default: 0.3]
    #[arg(long)]
    pub reid_iou: Option<f64>,
}

impl TrackerArgs {
    pub fn merge(&self, file: &FileConfig) -> Result<TrackerConfig> {
        let mut c = file.tracker.clone().unwrap_or_default();
        if let Some(m) = self.mode {
            c.mode = match m {
                CliMode::Private => Mode::Private,
                CliMode::Public => Mode::Public,
            };
        }
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => { $( if let Some(v) = self.$flag { c.$field = v; } )* };
        }
        set!(sigma_active => sigma_active, lambda_active => lambda_active, lambda_new => lambda_new,
             f_reid => f_reid, reid_dist => reid_distance_threshold, reid_iou => reid_iou_gate);
        match self.cmc {
            Some(Cmc::Off) => c.enable_cmc = false,
            Some(Cmc::Euclidean) => {
                c.enable_cmc = true;
                c.ecc.mode = TransformKind::Euclidean;
            }
            Some(Cmc::Affine) => {
                c.enable_cmc = true;
                c.ecc.mode = TransformKind::Affine;
            }
            None => {}
        }
        c.enable_cva |= self.cva;
        c.enable_reid |= self.reid;
        c.validate()?;
        Ok(c)
    }
}

/// Replaces `{seq}` in a per-sequence path or command.
pub fn per_sequence(template: &str, name: &str) -> String {
    template.replace("{seq}", name)
}

pub fn per_sequence_path(template: &str, name: &str) -> PathBuf {
    PathBuf::from(per_sequence(template, name))
}
