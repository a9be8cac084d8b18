use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one run: enough to repeat it and check the outputs match.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub subcommand: String,
    pub params: Value,
    pub master_seed: Option<u64>,
    pub tool_version: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub wall_clock_seconds: f64,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
}

/// Collects output files for a run and writes its manifest last.
pub struct RunRecorder {
    dir: PathBuf,
    subcommand: String,
    params: Value,
    master_seed: Option<u64>,
    started_at: DateTime<Utc>,
    outputs: Vec<String>,
}

impl RunRecorder {
    pub fn start(dir: &Path, subcommand: &str, params: Value, master_seed: Option<u64>) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(RunRecorder {
            dir: dir.to_path_buf(),
            subcommand: subcommand.to_string(),
            params,
            master_seed,
            started_at: Utc::now(),
            outputs: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    pub fn finish(self) -> Result<RunManifest> {
        let finished_at = Utc::now();
        let manifest = RunManifest {
            subcommand: self.subcommand,
            params: self.params,
            master_seed: self.master_seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: self.started_at,
            finished_at,
            wall_clock_seconds: (finished_at - self.started_at).as_seconds_f64(),
            outputs: self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.dir.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| crate::CliError::Schema(crate::experiment::path_error(&e)).into())
}
