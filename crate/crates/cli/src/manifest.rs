//! Run manifests: the command line, resolved configuration, input hashes and
//! outputs of a run, written before the heavy work starts and completed after.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliResult, WithPath};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
    /// Generation seed stored in a dataset header.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl InputFile {
    pub fn hash(path: &Path, seed: Option<u64>) -> CliResult<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
            seed,
        })
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: &'static str,
    pub workers: usize,
    pub config: serde_json::Value,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<PathBuf>,
    pub status: String,
    pub started_unix: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<serde_json::Value>,
    #[serde(skip)]
    path: PathBuf,
    #[serde(skip)]
    clock: Option<Instant>,
}

impl Manifest {
    /// Creates the output directory and writes the manifest with status `running`.
    pub fn start(
        dir: &Path,
        command: &str,
        workers: usize,
        config: impl Serialize,
        inputs: Vec<InputFile>,
    ) -> CliResult<Self> {
        fs::create_dir_all(dir).at(dir)?;
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0.0, |d| d.as_secs_f64());
        let m = Self {
            command: command.into(),
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION"),
            workers,
            config: serde_json::to_value(config).expect("configurations serialise"),
            inputs,
            outputs: Vec::new(),
            status: "running".into(),
            started_unix,
            wall_seconds: None,
            result: None,
            path: dir.join(MANIFEST_FILE),
            clock: Some(Instant::now()),
        };
        m.write()?;
        Ok(m)
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    /// Records the outcome and rewrites the manifest.
    pub fn finish(&mut self, status: &str, result: Option<serde_json::Value>) -> CliResult<()> {
        self.status = status.into();
        self.result = result;
        self.wall_seconds = self.clock.map(|c| c.elapsed().as_secs_f64());
        self.write()
    }

    fn write(&self) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        fs::write(&self.path, text + "\n").at(&self.path)
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut f = fs::File::open(path).at(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).at(path)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}
