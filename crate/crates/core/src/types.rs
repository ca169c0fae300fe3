//! Domain types shared by every stage of the self-play loop.
//!
//! Frames are opaque references: only their order and timestamps matter to
//! the engine. All types are plain data, immutable once built, and `Send +
//! Sync`, so they can be handed to concurrent workers freely.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One frame of a video: where to fetch it and when it was captured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub uri: String,
    pub timestamp_s: f64,
    /// Position in the canonical (unpermuted) frame order.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VideoError {
    #[error("video `{0}` has fewer than 2 frames")]
    TooFewFrames(String),
    #[error("video `{video}`: frame {position} has index {index}")]
    IndexMismatch {
        video: String,
        position: usize,
        index: usize,
    },
    #[error("video `{video}`: timestamps not strictly increasing at frame {position}")]
    NonIncreasing { video: String, position: usize },
    #[error("video `{video}`: timestamp {timestamp} outside [0, {duration}]")]
    OutOfRange {
        video: String,
        timestamp: f64,
        duration: f64,
    },
}

/// An unlabeled video: the unit of self-play.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRef {
    pub video_id: String,
    pub frames: Vec<FrameRef>,
    pub duration_s: f64,
}

impl VideoRef {
    /// Builds a canonical-order video, checking every invariant.
    pub fn new(
        video_id: impl Into<String>,
        frames: Vec<FrameRef>,
        duration_s: f64,
    ) -> Result<Self, VideoError> {
        let video = Self {
            video_id: video_id.into(),
            frames,
            duration_s,
        };
        video.validate()?;
        Ok(video)
    }

    /// Evenly spaced frames at `fps`, with URIs of the form
    /// `frames/<video_id>/<index>.jpg`.
    pub fn synthetic(video_id: impl Into<String>, frame_count: usize, fps: f64) -> Self {
        let video_id = video_id.into();
        let frames = (0..frame_count)
            .map(|index| FrameRef {
                uri: format!("frames/{video_id}/{index:03}.jpg"),
                timestamp_s: index as f64 / fps,
                index,
            })
            .collect();
        Self {
            video_id,
            frames,
            duration_s: frame_count as f64 / fps,
        }
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Checks the canonical-order invariants. Permuted views produced by
    /// [`crate::perturb::apply_permutation`] intentionally fail this.
    pub fn validate(&self) -> Result<(), VideoError> {
        if self.frames.len() < 2 {
            return Err(VideoError::TooFewFrames(self.video_id.clone()));
        }
        let mut previous: Option<f64> = None;
        for (position, frame) in self.frames.iter().enumerate() {
            if frame.index != position {
                return Err(VideoError::IndexMismatch {
                    video: self.video_id.clone(),
                    position,
                    index: frame.index,
                });
            }
            if !(frame.timestamp_s >= 0.0 && frame.timestamp_s <= self.duration_s) {
                return Err(VideoError::OutOfRange {
                    video: self.video_id.clone(),
                    timestamp: frame.timestamp_s,
                    duration: self.duration_s,
                });
            }
            if previous.is_some_and(|p| frame.timestamp_s <= p) {
                return Err(VideoError::NonIncreasing {
                    video: self.video_id.clone(),
                    position,
                });
            }
            previous = Some(frame.timestamp_s);
        }
        Ok(())
    }

    /// The clip covered by `window`, still in canonical order.
    pub fn clip(&self, window: &FrameWindow) -> VideoRef {
        VideoRef {
            video_id: self.video_id.clone(),
            frames: self.frames[window.start_index..=window.end_index].to_vec(),
            duration_s: self.duration_s,
        }
    }
}

/// A closed time interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSegment")]
pub struct Segment {
    pub t_s: f64,
    pub t_e: f64,
}

#[derive(Deserialize)]
struct RawSegment {
    t_s: f64,
    t_e: f64,
}

impl TryFrom<RawSegment> for Segment {
    type Error = String;

    fn try_from(raw: RawSegment) -> Result<Self, Self::Error> {
        Segment::new(raw.t_s, raw.t_e)
            .ok_or_else(|| format!("invalid segment [{}, {}]", raw.t_s, raw.t_e))
    }
}

impl Segment {
    /// `None` unless both ends are finite, non-negative and ordered.
    pub fn new(t_s: f64, t_e: f64) -> Option<Self> {
        let valid = t_s.is_finite() && t_e.is_finite() && t_s >= 0.0 && t_s <= t_e;
        valid.then_some(Self { t_s, t_e })
    }

    pub fn length(&self) -> f64 {
        self.t_e - self.t_s
    }
}

/// A contiguous run of frames in canonical order, with its time span.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameWindow {
    pub start_index: usize,
    pub end_index: usize,
    pub t_s: f64,
    pub t_e: f64,
}

impl FrameWindow {
    pub fn len(&self) -> usize {
        self.end_index - self.start_index + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn segment(&self) -> Segment {
        Segment {
            t_s: self.t_s,
            t_e: self.t_e,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    MultipleChoice,
    Numerical,
    Regression,
}

impl QuestionType {
    pub const ALL: [QuestionType; 3] = [
        QuestionType::MultipleChoice,
        QuestionType::Numerical,
        QuestionType::Regression,
    ];

    /// The wording used in the Questioner prompt.
    pub fn prompt_name(self) -> &'static str {
        match self {
            QuestionType::MultipleChoice => "multiple choice",
            QuestionType::Numerical => "numerical",
            QuestionType::Regression => "regression",
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prompt_name())
    }
}

impl FromStr for QuestionType {
    type Err = String;

    /// Case-insensitive; spaces, underscores and hyphens are interchangeable.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let folded: String = s
            .trim()
            .to_lowercase()
            .split(|c: char| c.is_whitespace() || c == '_' || c == '-')
            .filter(|part| !part.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        match folded.as_str() {
            "multiple choice" => Ok(QuestionType::MultipleChoice),
            "numerical" => Ok(QuestionType::Numerical),
            "regression" => Ok(QuestionType::Regression),
            _ => Err(format!("unknown question type `{}`", s.trim())),
        }
    }
}

/// A format-valid Questioner output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_type: QuestionType,
    pub question_text: String,
    pub reference_answer: String,
    #[serde(default)]
    pub source_window: Option<FrameWindow>,
    pub raw_output: String,
}

/// A parsed Solver output. Absent fields encode format failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResponse {
    pub raw_output: String,
    pub answer: Option<String>,
    pub segment: Option<Segment>,
    pub format_valid_answer: bool,
    pub format_valid_segment: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Questioner,
    Solver,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Questioner => "questioner",
            Role::Solver => "solver",
        })
    }
}

/// Every term that went into one rollout's reward.
///
/// Terms that do not apply to a role are zero. The optional fields are
/// audit data (confidences and cluster size) that the total does not depend
/// on directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub role: Role,
    pub format_gate: u8,
    pub difficulty: f64,
    pub diversity_penalty: f64,
    pub temporal_aware: f64,
    pub accuracy: u8,
    pub format_term: u8,
    pub iou: f64,
    pub total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shuffled_confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_size: Option<usize>,
}

impl RewardBreakdown {
    /// A Questioner rollout rejected by the format gate.
    pub fn questioner_rejected() -> Self {
        Self {
            role: Role::Questioner,
            format_gate: 0,
            difficulty: 0.0,
            diversity_penalty: 0.0,
            temporal_aware: 0.0,
            accuracy: 0,
            format_term: 0,
            iou: 0.0,
            total: 0.0,
            confidence: None,
            shuffled_confidence: None,
            cluster_size: None,
        }
    }
}

/// A Solver training example that survived the confidence band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedExample {
    pub video_id: String,
    pub window: FrameWindow,
    pub question: QuestionRecord,
    pub pseudo_answer: String,
    pub confidence: f64,
    pub iteration: u32,
    /// Fields written by other tools; carried through a rewrite untouched.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}
