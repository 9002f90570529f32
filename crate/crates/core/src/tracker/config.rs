use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::motion::EccConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// New tracks come from the backend's own detections.
    Private,
    /// New tracks come from externally provided detections.
    #[default]
    Public,
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid tracker configuration: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Tracks whose classification score falls below this are killed.
    pub sigma_active: f64,
    /// NMS threshold between active tracks.
    pub lambda_active: f64,
    /// NMS threshold for new detections and the coverage test against
    /// active tracks.
    pub lambda_new: f64,
    /// Frames a deactivated track stays in the reID gallery.
    pub f_reid: u32,
    pub reid_distance_threshold: f64,
    pub reid_iou_gate: f64,
    pub embedding_history: usize,
    pub enable_cmc: bool,
    pub enable_cva: bool,
    pub enable_reid: bool,
    pub mode: Mode,
    pub ecc: EccConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            sigma_active: 0.5,
            lambda_active: 0.6,
            lambda_new: 0.3,
            f_reid: 10,
            reid_distance_threshold: 2.0,
            reid_iou_gate: 0.3,
            embedding_history: 10,
            enable_cmc: false,
            enable_cva: false,
            enable_reid: false,
            mode: Mode::Public,
            ecc: EccConfig::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit = [
            ("sigma_active", self.sigma_active),
            ("lambda_active", self.lambda_active),
            ("lambda_new", self.lambda_new),
            ("reid_iou_gate", self.reid_iou_gate),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if !(self.reid_distance_threshold >= 0.0) {
            return Err(ConfigError(format!(
                "reid_distance_threshold = {} must be >= 0",
                self.reid_distance_threshold
            )));
        }
        if self.embedding_history == 0 {
            return Err(ConfigError("embedding_history must be >= 1".into()));
        }
        if self.ecc.pyramid_levels == 0 || self.ecc.max_iterations == 0 || !(self.ecc.eps > 0.0) {
            return Err(ConfigError(
                "ecc needs pyramid_levels >= 1, max_iterations >= 1, eps > 0".into(),
            ));
        }
        Ok(())
    }
}
