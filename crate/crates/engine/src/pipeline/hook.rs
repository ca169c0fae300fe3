//! Optional handshake with an external trainer after each emitted batch.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use super::Phase;

#[derive(Debug, Error)]
pub enum HookError {
    #[error("trainer did not acknowledge {batch} within {timeout:?}")]
    Timeout { batch: String, timeout: Duration },
    #[error("trainer hook {url} failed: {reason}")]
    Http { url: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrainerHook {
    /// Emit files and move on.
    None,
    /// Wait for `<batch>.ack` to appear next to the batch file.
    File,
    /// POST a notice and wait for a 2xx reply.
    Http(String),
}

impl TrainerHook {
    pub fn parse(setting: &str) -> Result<Self, String> {
        match setting.trim() {
            "" | "none" => Ok(Self::None),
            "file" => Ok(Self::File),
            url if url.starts_with("http://") || url.starts_with("https://") => Ok(Self::Http(url.to_string())),
            other => Err(format!("trainer_hook must be empty, \"file\" or an http(s) URL, got {other:?}")),
        }
    }
}

/// Body of the HTTP notice.
#[derive(Debug, Clone, Serialize)]
pub struct BatchNotice {
    pub run_id: String,
    pub iteration: u32,
    pub phase: Phase,
    pub step: u32,
    pub batch: String,
    pub records: usize,
}

pub fn ack_path(batch: &Path) -> PathBuf {
    let mut name = batch.file_name().unwrap_or_default().to_os_string();
    name.push(".ack");
    batch.with_file_name(name)
}

const POLL_INTERVAL: Duration = Duration::from_millis(100);

impl TrainerHook {
    pub async fn wait(&self, batch: &Path, notice: &BatchNotice, timeout: Duration) -> Result<(), HookError> {
        match self {
            Self::None => Ok(()),
            Self::File => {
                let ack = ack_path(batch);
                let deadline = tokio::time::Instant::now() + timeout;
                while !tokio::fs::try_exists(&ack).await.unwrap_or(false) {
                    if tokio::time::Instant::now() >= deadline {
                        return Err(HookError::Timeout {
                            batch: batch.display().to_string(),
                            timeout,
                        });
                    }
                    tokio::time::sleep(POLL_INTERVAL).await;
                }
                Ok(())
            }
            Self::Http(url) => {
                let fail = |reason: String| HookError::Http {
                    url: url.clone(),
                    reason,
                };
                let client = reqwest::Client::builder()
                    .timeout(timeout)
                    .build()
                    .map_err(|e| fail(e.to_string()))?;
                let response = client.post(url).json(notice).send().await.map_err(|e| {
                    if e.is_timeout() {
                        HookError::Timeout {
                            batch: batch.display().to_string(),
                            timeout,
                        }
                    } else {
                        fail(e.to_string())
                    }
                })?;
                if response.status().is_success() {
                    Ok(())
                } else {
                    Err(fail(format!("HTTP {}", response.status())))
                }
            }
        }
    }
}
