//! Reproducibility manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Config;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn digest(path: &Path) -> std::io::Result<FileDigest> {
    Ok(FileDigest { path: path.display().to_string(), sha256: sha256_file(path)? })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageTime {
    pub name: String,
    pub seconds: f64,
}

/// Wall-clock bookkeeping per named stage.
#[derive(Clone, Debug, Default)]
pub struct Stages(Vec<StageTime>);

impl Stages {
    pub fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.0.push(StageTime { name: name.to_string(), seconds: start.elapsed().as_secs_f64() });
        out
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub core_version: String,
    pub resolved_config: Config,
    pub seed: u64,
    pub threads: usize,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub stages: Vec<StageTime>,
}

impl RunManifest {
    pub fn new(command: &str, config: &Config, threads: usize) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: fascicle_core::VERSION.to_string(),
            resolved_config: config.clone(),
            seed: config.seed,
            threads,
            inputs: Vec::new(),
            outputs: Vec::new(),
            stages: Vec::new(),
        }
    }

    pub fn add_inputs(&mut self, paths: &[PathBuf]) -> std::io::Result<()> {
        for p in paths {
            self.inputs.push(digest(p)?);
        }
        Ok(())
    }

    pub fn add_outputs(&mut self, paths: &[PathBuf]) -> std::io::Result<()> {
        for p in paths {
            self.outputs.push(digest(p)?);
        }
        Ok(())
    }

    pub fn finish(mut self, stages: Stages, path: &Path) -> std::io::Result<PathBuf> {
        self.stages = stages.0;
        let text = serde_json::to_string_pretty(&self).map_err(std::io::Error::other)?;
        fs::write(path, text + "\n")?;
        Ok(path.to_path_buf())
    }
}
