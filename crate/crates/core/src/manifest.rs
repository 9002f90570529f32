//! JSON sidecar describing how a result file was produced.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub code_version: String,
    /// Effective configuration after merging flags, config file and defaults.
    pub config: serde_json::Value,
    pub backend: String,
    pub seeds: BTreeMap<String, u64>,
    /// Unix seconds. Taken from `SOURCE_DATE_EPOCH` so that repeated runs
    /// stay byte-identical; absent otherwise.
    pub created: Option<u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(
        command_line: Vec<String>,
        config: serde_json::Value,
        backend: impl Into<String>,
    ) -> Self {
        Self {
            command_line,
            code_version: CODE_VERSION.to_string(),
            config,
            backend: backend.into(),
            seeds: BTreeMap::new(),
            created: source_date_epoch(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn with_seed(mut self, name: &str, seed: u64) -> Self {
        self.seeds.insert(name.to_string(), seed);
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

pub fn source_date_epoch() -> Option<u64> {
    std::env::var("SOURCE_DATE_EPOCH").ok()?.trim().parse().ok()
}
