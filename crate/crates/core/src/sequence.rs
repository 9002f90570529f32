//! A sequence on disk or in memory: metadata, annotations, detections, frames.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geometry::FrameIndex;
use crate::motio::{
    self, ConsiderRule, DetectionSet, GroundTruth, GtEntry, MotIoError, SequenceInfo,
};
use crate::motion::{GrayImage, ImageError};

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: MotIoError },
    #[error("frame {0}: {1}")]
    Image(FrameIndex, ImageError),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub enum ImageSource {
    #[default]
    None,
    /// One file per frame, frame `t` at index `t - 1`.
    Files(Vec<PathBuf>),
    /// One image per frame, frame `t` at index `t - 1`.
    Memory(Vec<GrayImage>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub info: SequenceInfo,
    pub ground_truth: Vec<GtEntry>,
    pub detections: Option<DetectionSet>,
    pub images: ImageSource,
    pub consider: ConsiderRule,
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn read(path: &Path) -> Result<fs::File, SequenceError> {
    fs::File::open(path).map_err(|source| SequenceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl Sequence {
    pub fn new(info: SequenceInfo) -> Self {
        Self {
            info,
            ground_truth: Vec::new(),
            detections: None,
            images: ImageSource::None,
            consider: ConsiderRule::default(),
        }
    }

    /// Loads a MOTChallenge directory: `seqinfo.ini`, `gt/gt.txt` and
    /// `det/det.txt` when present, and frames from the image directory.
    pub fn load(dir: &Path) -> Result<Self, SequenceError> {
        let ini_path = dir.join("seqinfo.ini");
        let text = fs::read_to_string(&ini_path).map_err(|source| SequenceError::Io {
            path: ini_path.clone(),
            source,
        })?;
        let info = SequenceInfo::parse_ini(&text).map_err(|source| SequenceError::Format {
            path: ini_path,
            source,
        })?;
        let mut seq = Sequence::new(info);

        let gt_path = dir.join("gt").join("gt.txt");
        if gt_path.is_file() {
            seq.ground_truth =
                motio::parse_ground_truth(BufReader::new(read(&gt_path)?)).map_err(|source| {
                    SequenceError::Format {
                        path: gt_path,
                        source,
                    }
                })?;
        }
        let det_path = dir.join("det").join("det.txt");
        if det_path.is_file() {
            seq.detections = Some(Self::load_detections(&det_path)?);
        }
        if let Some(img_dir) = seq.info.image_dir_path(dir) {
            seq.images = list_frames(&img_dir, seq.info.length);
        }
        Ok(seq)
    }

    pub fn load_detections(path: &Path) -> Result<DetectionSet, SequenceError> {
        motio::parse_detections(BufReader::new(read(path)?)).map_err(|source| {
            SequenceError::Format {
                path: path.to_path_buf(),
                source,
            }
        })
    }

    pub fn load_ground_truth(path: &Path) -> Result<Vec<GtEntry>, SequenceError> {
        motio::parse_ground_truth(BufReader::new(read(path)?)).map_err(|source| {
            SequenceError::Format {
                path: path.to_path_buf(),
                source,
            }
        })
    }

    pub fn gt(&self) -> GroundTruth {
        GroundTruth::from_entries(&self.ground_truth, &self.consider)
    }

    pub fn frame_size(&self) -> (f64, f64) {
        (f64::from(self.info.width), f64::from(self.info.height))
    }

    pub fn has_images(&self) -> bool {
        !matches!(self.images, ImageSource::None)
    }

    /// Grayscale frame `t`, or `None` when the sequence has no image for it.
    pub fn image(&self, t: FrameIndex) -> Result<Option<GrayImage>, SequenceError> {
        let i = t.get() as usize - 1;
        match &self.images {
            ImageSource::None => Ok(None),
            ImageSource::Memory(v) => Ok(v.get(i).cloned()),
            ImageSource::Files(paths) => match paths.get(i) {
                None => Ok(None),
                Some(p) => load_image(p).map_err(|e| SequenceError::Image(t, e)),
            },
        }
    }
}

#[cfg(feature = "image-io")]
fn load_image(path: &Path) -> Result<Option<GrayImage>, ImageError> {
    GrayImage::load(path).map(Some)
}

#[cfg(not(feature = "image-io"))]
fn load_image(_: &Path) -> Result<Option<GrayImage>, ImageError> {
    Ok(None)
}

/// Frame files named `000001.<ext>` onwards; stops at the first missing one.
fn list_frames(dir: &Path, length: u32) -> ImageSource {
    let mut paths = Vec::new();
    for t in 1..=length {
        let found = IMAGE_EXTENSIONS
            .iter()
            .map(|ext| dir.join(format!("{t:06}.{ext}")))
            .find(|p| p.is_file());
        match found {
            Some(p) => paths.push(p),
            None => break,
        }
    }
    if paths.is_empty() {
        ImageSource::None
    } else {
        ImageSource::Files(paths)
    }
}
