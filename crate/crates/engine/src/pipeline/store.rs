//! Run-directory layout and line-delimited file I/O.
//!
//! ```text
//! <run_root>/<run_id>/
//!   state.json  config.json
//!   iter<i>/questioner/batch<s>.jsonl
//!   iter<i>/curated.jsonl  iter<i>/curation.json
//!   iter<i>/solver/batch<s>.jsonl
//!   iter<i>/metrics.json
//! ```
//!
//! Every file is written to a temporary sibling and renamed into place, so
//! a crash leaves either the old file or the new one.

use std::io::Write;
use std::path::{Path, PathBuf};

use evoforge_core::{CuratedExample, VideoRef};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl StoreError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn state(&self) -> PathBuf {
        self.root.join("state.json")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn iteration(&self, iteration: u32) -> PathBuf {
        self.root.join(format!("iter{iteration}"))
    }

    pub fn questioner_batch(&self, iteration: u32, step: u32) -> PathBuf {
        self.iteration(iteration)
            .join("questioner")
            .join(format!("batch{step:03}.jsonl"))
    }

    pub fn solver_batch(&self, iteration: u32, step: u32) -> PathBuf {
        self.iteration(iteration)
            .join("solver")
            .join(format!("batch{step:03}.jsonl"))
    }

    pub fn curated(&self, iteration: u32) -> PathBuf {
        self.iteration(iteration).join("curated.jsonl")
    }

    pub fn curation_stats(&self, iteration: u32) -> PathBuf {
        self.iteration(iteration).join("curation.json")
    }

    pub fn metrics(&self, iteration: u32) -> PathBuf {
        self.iteration(iteration).join("metrics.json")
    }

    /// Path relative to the run root, as recorded in the state file.
    pub fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }
}

/// Writes `bytes` to `path` via a temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| StoreError::io(parent, e))?;
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let mut file = std::fs::File::create(&tmp).map_err(|e| StoreError::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| StoreError::io(&tmp, e))?;
    file.sync_all().map_err(|e| StoreError::io(&tmp, e))?;
    drop(file);
    std::fs::rename(&tmp, path).map_err(|e| StoreError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable value");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| StoreError::Malformed {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for record in records {
        serde_json::to_writer(&mut out, record).expect("serializable record");
        out.push(b'\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), StoreError> {
    write_atomic(path, &to_jsonl(records))
}

/// Parses one record per non-blank line; errors name the 1-based line.
pub fn parse_jsonl<T: DeserializeOwned>(path: &Path, text: &str) -> Result<Vec<T>, StoreError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| StoreError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
    parse_jsonl(path, &text)
}

pub fn write_dataset(path: &Path, examples: &[CuratedExample]) -> Result<(), StoreError> {
    write_jsonl(path, examples)
}

pub fn read_dataset(path: &Path) -> Result<Vec<CuratedExample>, StoreError> {
    read_jsonl(path)
}

/// Reads a video list and checks every video's invariants.
pub fn read_videos(path: &Path) -> Result<Vec<VideoRef>, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
    let mut videos = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| StoreError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let video: VideoRef = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        video.validate().map_err(|e| malformed(e.to_string()))?;
        videos.push(video);
    }
    Ok(videos)
}

pub fn write_videos(path: &Path, videos: &[VideoRef]) -> Result<(), StoreError> {
    write_jsonl(path, videos)
}
