//! `manifest.json`: what produced an output directory.

use std::path::Path;
use std::time::Instant;

use rsmp::io::write_json;
use rsmp::ExperimentConfig;
use serde::Serialize;

use crate::CmdResult;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    pub config: Option<ExperimentConfig>,
    pub inputs: Vec<String>,
    /// Files written next to this manifest.
    pub outputs: Vec<String>,
    pub wall_clock_s: f64,
}

impl Manifest {
    pub fn new(
        command: &str,
        config: Option<&ExperimentConfig>,
        inputs: Vec<String>,
        outputs: Vec<String>,
        start: Instant,
    ) -> Self {
        Manifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.map(|c| c.rng_seed),
            config_hash: config.map(|c| c.hash()),
            config: config.cloned(),
            inputs,
            outputs,
            wall_clock_s: start.elapsed().as_secs_f64(),
        }
    }

    pub fn write(&self, dir: &Path) -> CmdResult<()> {
        Ok(write_json(&dir.join(MANIFEST_FILE), self)?)
    }
}
