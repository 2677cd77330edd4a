//! Artifact files of one run and the manifest that lists them.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// Failure of one pipeline stage.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub message: String,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.message)
    }
}

pub type StageResult<T> = Result<T, StageError>;

/// Tags errors of any displayable type with a stage name.
pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> StageResult<T>;
}

impl<T, E: fmt::Display> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> StageResult<T> {
        self.map_err(|e| StageError {
            stage,
            message: e.to_string(),
        })
    }
}

pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    pub fn create(dir: &Path) -> StageResult<Self> {
        fs::create_dir_all(dir).stage("output")?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    /// Writes a CSV with a header row; every row must match the header width.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> StageResult<()> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).stage("output")?;
        w.write_record(header).stage("output")?;
        for row in rows {
            w.write_record(row.iter().map(|v| format!("{v:e}"))).stage("output")?;
        }
        w.flush().stage("output")
    }

    pub fn text(&mut self, name: &str, content: &str) -> StageResult<()> {
        let path = self.path(name);
        fs::write(path, content).stage("output")
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub experiment: &'a str,
    pub config_hash: String,
    pub seed: u64,
    pub versions: Versions,
    pub files: Vec<String>,
    /// Resolved configuration, one `section.key = value` per line.
    pub config: String,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub nvmag: &'static str,
    pub nvcavity: &'static str,
}

impl Versions {
    pub fn current() -> Self {
        Self {
            nvmag: env!("CARGO_PKG_VERSION"),
            nvcavity: nvcavity::VERSION,
        }
    }
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> StageResult<()> {
    let text = serde_json::to_string_pretty(manifest).stage("output")?;
    fs::write(dir.join("manifest.json"), text + "\n").stage("output")
}
