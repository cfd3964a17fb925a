use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub parameters: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub duration_seconds: f64,
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects the files a command reads and writes, then records them with
/// their digests next to the outputs.
pub struct Run {
    command: String,
    parameters: serde_json::Value,
    seed: Option<u64>,
    out_dir: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
    started: Instant,
}

impl Run {
    pub fn start<P: Serialize>(command: &str, parameters: &P, seed: Option<u64>, out_dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(out_dir)?;
        Ok(Self {
            command: command.to_string(),
            parameters: serde_json::to_value(parameters).map_err(io::Error::other)?,
            seed,
            out_dir: out_dir.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Path for an output file inside the run directory.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out_dir.join(name)
    }

    pub fn finish(self) -> io::Result<PathBuf> {
        let digest = |p: &Path, label: String| -> io::Result<FileDigest> { Ok(FileDigest { path: label, sha256: sha256_file(p)? }) };
        let inputs = self.inputs.iter().map(|p| digest(p, p.display().to_string())).collect::<io::Result<_>>()?;
        let outputs =
            self.outputs.iter().map(|name| digest(&self.out_dir.join(name), name.clone())).collect::<io::Result<_>>()?;
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            parameters: self.parameters,
            seed: self.seed,
            inputs,
            outputs,
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = self.out_dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?)?;
        Ok(path)
    }
}
