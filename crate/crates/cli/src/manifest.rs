//! Run manifest: config echo, tool version, stage timings and output checksums.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub workers: Option<usize>,
    pub config: BTreeMap<String, serde_json::Value>,
    pub warnings: Vec<String>,
    pub stages: Vec<StageTiming>,
    pub outputs: Vec<OutputRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects outputs and timings while a command runs.
pub struct Recorder {
    dir: PathBuf,
    pub manifest: RunManifest,
    verbose: bool,
}

impl Recorder {
    pub fn new(dir: &Path, command: &str, workers: Option<usize>, config: BTreeMap<String, serde_json::Value>, verbose: bool) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                schema_version: decoupling_lab::report::SCHEMA_VERSION,
                tool: env!("CARGO_PKG_NAME").to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                command: command.to_string(),
                workers,
                config,
                warnings: Vec::new(),
                stages: Vec::new(),
                outputs: Vec::new(),
            },
            verbose,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn warn(&mut self, msg: String) {
        eprintln!("warning: {msg}");
        self.manifest.warnings.push(msg);
    }

    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> CliResult<T>) -> CliResult<T> {
        if self.verbose {
            eprintln!("[{name}] start");
        }
        let t = Instant::now();
        let out = f();
        let wall_ms = t.elapsed().as_secs_f64() * 1e3;
        if self.verbose {
            eprintln!("[{name}] {wall_ms:.1} ms");
        }
        self.manifest.stages.push(StageTiming {
            stage: name.to_string(),
            wall_ms,
        });
        out
    }

    pub fn write(&mut self, file: &str, contents: &str) -> CliResult<()> {
        let path = self.dir.join(file);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.manifest.outputs.push(OutputRecord {
            file: file.to_string(),
            bytes: contents.len() as u64,
            sha256: sha256_hex(contents.as_bytes()),
        });
        if self.verbose {
            eprintln!("wrote {}", path.display());
        }
        Ok(())
    }

    pub fn finish(self) -> CliResult<RunManifest> {
        let path = self.dir.join("manifest.json");
        let mut s = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        s.push('\n');
        fs::write(&path, s).map_err(|e| CliError::io(&path, e))?;
        Ok(self.manifest)
    }
}
