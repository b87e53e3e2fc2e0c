//! Output directory bookkeeping: CSV and JSONL writers that checksum every
//! file, and the manifest written last.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileRecord {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbortRecord {
    pub trajectory: usize,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aborts {
    pub count: usize,
    /// Known per-trajectory blow-ups; may be shorter than `count` when an
    /// experiment only reports totals.
    pub trajectories: Vec<AbortRecord>,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub version: &'static str,
    pub command: String,
    pub status: &'static str,
    pub exit_code: i32,
    pub config_sha256: String,
    pub wall_clock_seconds: f64,
    pub aborts: Aborts,
    pub files: Vec<FileRecord>,
    /// The effective configuration, after command-line overrides.
    pub config: String,
}

pub struct OutputDir {
    dir: PathBuf,
    files: Vec<FileRecord>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        // a stale manifest would mark an interrupted run as complete
        match fs::remove_file(dir.join(MANIFEST)) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => return Err(e),
            _ => {}
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> io::Result<()> {
        fs::write(self.dir.join(name), contents)?;
        self.files.push(FileRecord {
            name: name.to_string(),
            sha256: sha256_hex(contents),
            bytes: contents.len(),
        });
        Ok(())
    }

    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, rows: &[T]) -> io::Result<()> {
        let mut s = String::new();
        for r in rows {
            s.push_str(&serde_json::to_string(r).map_err(io::Error::other)?);
            s.push('\n');
        }
        self.write(name, s.as_bytes())
    }

    /// Writes the manifest through a temporary file and rename.
    pub fn finish(self, mut manifest: RunManifest) -> io::Result<()> {
        manifest.files = self.files;
        let text = serde_json::to_string_pretty(&manifest).map_err(io::Error::other)? + "\n";
        let tmp = self.dir.join(".manifest.json.tmp");
        fs::write(&tmp, text)?;
        fs::rename(tmp, self.dir.join(MANIFEST))
    }
}

pub const MANIFEST: &str = "manifest.json";

/// CSV with a header row; floats use the shortest representation that
/// round-trips.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[String]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Self { text }
    }

    pub fn row(&mut self, t: f64, values: impl IntoIterator<Item = f64>) {
        let _ = write!(self.text, "{t:?}");
        for v in values {
            let _ = write!(self.text, ",{v:?}");
        }
        self.text.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }
}

pub fn column_names(prefix: &str, k: usize) -> impl Iterator<Item = String> + '_ {
    (1..=k).map(move |i| format!("{prefix}_{i}"))
}
