//! The declarative run configuration (TOML).
//!
//! Every field is optional and defaults to the reference setup: 512-entry
//! GHB, stride degree 2, Markov degree 4, 256/32 accept/deny windows, 32KB
//! L1D and 256KB L2 with the prefetcher on L2, 200-cycle memory.
//!
//! ```toml
//! [engine]
//! prefetcher = "markov-perceptron"
//! memory_latency_cycles = 200
//!
//! [engine.markov]
//! degree = 4
//!
//! [[engine.levels]]
//! name = "L1D"
//! size_bytes = 32768
//! line_bytes = 64
//! associativity = 8
//! hit_latency_cycles = 4
//!
//! [[engine.levels]]
//! name = "L2"
//! size_bytes = 262144
//! line_bytes = 64
//! associativity = 8
//! hit_latency_cycles = 6
//!
//! [trace]
//! pc_policy = "pc-per-stream"
//! [trace.generator]
//! kind = "strided"
//! start = 0x1000
//! stride_bytes = 256
//! count = 3
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{ConfigError, EngineConfig};
use crate::trace::TraceSpec;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Invalid(#[from] ConfigError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub engine: EngineConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceSpec>,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, LoadError> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| LoadError::Parse { path: origin.to_string(), message: e.to_string() })?;
        cfg.engine.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let origin = path.display().to_string();
        let text =
            std::fs::read_to_string(path).map_err(|source| LoadError::Io { path: origin.clone(), source })?;
        Self::from_toml(&text, &origin)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
