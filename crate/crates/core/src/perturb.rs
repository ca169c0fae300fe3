//! Window sampling and frame-order perturbations.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{FrameWindow, VideoRef};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PerturbError {
    #[error("video `{video}` has {frames} frames, window needs {window}")]
    VideoTooShort {
        video: String,
        frames: usize,
        window: usize,
    },
    #[error("permutation of length {permutation} applied to {frames} frames")]
    LengthMismatch { permutation: usize, frames: usize },
}

/// How the shuffled view of a video is produced.
///
/// Config strings: `random`, `reverse`, `block:<size>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ShuffleStrategy {
    Random,
    Reverse,
    Block(usize),
}

impl Default for ShuffleStrategy {
    fn default() -> Self {
        ShuffleStrategy::Random
    }
}

impl fmt::Display for ShuffleStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShuffleStrategy::Random => f.write_str("random"),
            ShuffleStrategy::Reverse => f.write_str("reverse"),
            ShuffleStrategy::Block(size) => write!(f, "block:{size}"),
        }
    }
}

impl FromStr for ShuffleStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "random" => Ok(ShuffleStrategy::Random),
            "reverse" => Ok(ShuffleStrategy::Reverse),
            other => {
                let size = other
                    .strip_prefix("block:")
                    .ok_or_else(|| format!("unknown shuffle strategy `{other}`"))?;
                let size: usize = size
                    .trim()
                    .parse()
                    .map_err(|_| format!("bad block size in `{other}`"))?;
                if size == 0 {
                    return Err("block size must be at least 1".into());
                }
                Ok(ShuffleStrategy::Block(size))
            }
        }
    }
}

impl TryFrom<String> for ShuffleStrategy {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<ShuffleStrategy> for String {
    fn from(value: ShuffleStrategy) -> Self {
        value.to_string()
    }
}

/// A frame reordering. `mapping[new_position] = old_position`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    pub mapping: Vec<usize>,
    pub strategy: ShuffleStrategy,
    pub seed: u64,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self {
            mapping: (0..n).collect(),
            strategy: ShuffleStrategy::Block(n.max(1)),
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.mapping.iter().enumerate().all(|(i, &m)| i == m)
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.mapping.len()];
        for &m in &self.mapping {
            if m >= seen.len() || seen[m] {
                return false;
            }
            seen[m] = true;
        }
        true
    }

    /// `positions()[old] = new`: where each original frame ends up.
    pub fn positions(&self) -> Vec<usize> {
        let mut positions = vec![0; self.mapping.len()];
        for (new, &old) in self.mapping.iter().enumerate() {
            positions[old] = new;
        }
        positions
    }

    pub fn inverse(&self) -> Permutation {
        Permutation {
            mapping: self.positions(),
            strategy: self.strategy,
            seed: self.seed,
        }
    }
}

/// Picks a uniformly random run of `k` contiguous frames.
pub fn sample_window<R: Rng + ?Sized>(
    video: &VideoRef,
    k: usize,
    rng: &mut R,
) -> Result<FrameWindow, PerturbError> {
    let n = video.frame_count();
    if k == 0 || n < k {
        return Err(PerturbError::VideoTooShort {
            video: video.video_id.clone(),
            frames: n,
            window: k,
        });
    }
    let start_index = rng.gen_range(0..=n - k);
    let end_index = start_index + k - 1;
    Ok(FrameWindow {
        start_index,
        end_index,
        t_s: video.frames[start_index].timestamp_s,
        t_e: video.frames[end_index].timestamp_s,
    })
}

/// Draws a permutation of `n` frames.
///
/// `Random` never returns the identity for `n >= 2`: an unshuffled
/// "perturbation" would zero the temporal reward for every question. The
/// seed recorded on the permutation is a fresh draw from `rng`, kept for
/// provenance only.
pub fn make_permutation<R: Rng + ?Sized>(
    n: usize,
    strategy: ShuffleStrategy,
    rng: &mut R,
) -> Permutation {
    let seed = rng.gen();
    let mapping = match strategy {
        ShuffleStrategy::Reverse => (0..n).rev().collect(),
        ShuffleStrategy::Random => {
            let mut mapping: Vec<usize> = (0..n).collect();
            loop {
                mapping.shuffle(rng);
                if n < 2 || mapping.iter().enumerate().any(|(i, &m)| i != m) {
                    break mapping;
                }
            }
        }
        ShuffleStrategy::Block(size) => {
            let size = size.max(1);
            let mut blocks: Vec<Vec<usize>> = (0..n)
                .collect::<Vec<_>>()
                .chunks(size)
                .map(<[usize]>::to_vec)
                .collect();
            blocks.shuffle(rng);
            blocks.into_iter().flatten().collect()
        }
    };
    Permutation {
        mapping,
        strategy,
        seed,
    }
}

/// Reorders the frame list; every `FrameRef` keeps its own timestamp and
/// canonical index, so the shuffled view still records provenance.
pub fn apply_permutation(video: &VideoRef, perm: &Permutation) -> Result<VideoRef, PerturbError> {
    if perm.len() != video.frame_count() {
        return Err(PerturbError::LengthMismatch {
            permutation: perm.len(),
            frames: video.frame_count(),
        });
    }
    Ok(VideoRef {
        video_id: video.video_id.clone(),
        frames: perm
            .mapping
            .iter()
            .map(|&old| video.frames[old].clone())
            .collect(),
        duration_s: video.duration_s,
    })
}
