use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Serialize)]
struct OutputEntry {
    file: String,
    sha256: String,
    bytes: usize,
}

#[derive(Serialize)]
struct Timing {
    stage: String,
    seconds: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    code_version: &'a str,
    config_sha256: &'a str,
    threads: usize,
    timings: &'a [Timing],
    outputs: &'a [OutputEntry],
}

/// Single writer for a run: every file goes through here so the manifest
/// lists each output with its content hash.
pub struct RunWriter {
    dir: PathBuf,
    command: String,
    config_hash: String,
    outputs: Vec<OutputEntry>,
    timings: Vec<Timing>,
    clock: Instant,
}

impl RunWriter {
    pub fn new(dir: &Path, command: &str, config_json: &str) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.into(),
            config_hash: sha256_hex(config_json.as_bytes()),
            outputs: Vec::new(),
            timings: Vec::new(),
            clock: Instant::now(),
        })
    }

    pub fn lap(&mut self, stage: &str) {
        self.timings.push(Timing { stage: stage.into(), seconds: self.clock.elapsed().as_secs_f64() });
        self.clock = Instant::now();
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.outputs.push(OutputEntry { file: name.into(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn finish(self) -> std::io::Result<PathBuf> {
        let m = Manifest {
            command: &self.command,
            code_version: env!("CARGO_PKG_VERSION"),
            config_sha256: &self.config_hash,
            threads: rayon::current_num_threads(),
            timings: &self.timings,
            outputs: &self.outputs,
        };
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&m).map_err(std::io::Error::other)? + "\n")?;
        Ok(path)
    }
}
