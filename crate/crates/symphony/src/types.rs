//! Shared vocabulary for the pipeline: timecodes, questions, actions,
//! observations, trajectories and run budgets.
//!
//! Everything here is plain data. Agents and the orchestrator build on these
//! types but never extend them with behaviour of their own.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::grounding::GroundingResult;
use crate::agents::subtitle::SubtitleAnalysis;
use crate::media::{FrameManifest, SubtitleTrack};

/// Appended to observation text that was clipped to the budget.
pub const TRUNCATION_MARKER: &str = "[truncated]";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TimeError {
    #[error("malformed timecode {input:?}: expected H+:MM:SS with minutes and seconds below 60")]
    MalformedTimecode { input: String },
    #[error("degenerate time range: start {start} must precede end {end}")]
    DegenerateRange { start: Timecode, end: Timecode },
}

/// A point on the video timeline, held internally as milliseconds.
///
/// Renders as zero-padded `HH:MM:SS`; sub-second precision survives in the
/// stored value but is truncated toward zero for display.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timecode(u64);

impl Timecode {
    pub const ZERO: Timecode = Timecode(0);

    pub fn from_ms(ms: u64) -> Self {
        Timecode(ms)
    }

    pub fn from_secs(secs: u64) -> Self {
        Timecode(secs * 1000)
    }

    pub fn as_ms(self) -> u64 {
        self.0
    }

    /// Whole seconds, truncating any sub-second remainder.
    pub fn as_secs(self) -> u64 {
        self.0 / 1000
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

impl fmt::Display for Timecode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let total_secs = self.0 / 1000;
        let (h, m, s) = (total_secs / 3600, total_secs / 60 % 60, total_secs % 60);
        write!(f, "{h:02}:{m:02}:{s:02}")
    }
}

impl FromStr for Timecode {
    type Err = TimeError;

    /// Accepts `H+:MM:SS` only. Hours may use any number of digits; minutes
    /// and seconds must be exactly two digits and below 60.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let malformed = || TimeError::MalformedTimecode { input: s.to_string() };
        let parts: Vec<&str> = s.split(':').collect();
        let [h, m, sec] = parts.as_slice() else {
            return Err(malformed());
        };
        if h.is_empty() || m.len() != 2 || sec.len() != 2 {
            return Err(malformed());
        }
        for part in [h, m, sec] {
            if !part.bytes().all(|b| b.is_ascii_digit()) {
                return Err(malformed());
            }
        }
        let hours: u64 = h.parse().map_err(|_| malformed())?;
        let minutes: u64 = m.parse().map_err(|_| malformed())?;
        let seconds: u64 = sec.parse().map_err(|_| malformed())?;
        if minutes >= 60 || seconds >= 60 {
            return Err(malformed());
        }
        Ok(Timecode::from_secs(hours * 3600 + minutes * 60 + seconds))
    }
}

/// Half-open interval `[start, end)` on the video timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: Timecode,
    pub end: Timecode,
}

impl TimeRange {
    pub fn new(start: Timecode, end: Timecode) -> Result<Self, TimeError> {
        if start >= end {
            return Err(TimeError::DegenerateRange { start, end });
        }
        Ok(TimeRange { start, end })
    }

    pub fn from_ms(start_ms: u64, end_ms: u64) -> Result<Self, TimeError> {
        TimeRange::new(Timecode::from_ms(start_ms), Timecode::from_ms(end_ms))
    }

    pub fn len_ms(&self) -> u64 {
        self.end.as_ms() - self.start.as_ms()
    }

    pub fn contains(&self, t: Timecode) -> bool {
        self.start <= t && t < self.end
    }
}

impl fmt::Display for TimeRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{} - {}]", self.start, self.end)
    }
}

/// One labelled choice of a multiple-choice question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionOption {
    pub label: String,
    pub text: String,
}

/// A question about one video. `options` is empty for open-ended questions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub options: Vec<QuestionOption>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl Question {
    pub fn open(id: impl Into<String>, text: impl Into<String>) -> Self {
        Question { id: id.into(), text: text.into(), options: Vec::new(), category: None }
    }

    pub fn multiple_choice(
        id: impl Into<String>,
        text: impl Into<String>,
        options: &[(&str, &str)],
    ) -> Self {
        Question {
            id: id.into(),
            text: text.into(),
            options: options
                .iter()
                .map(|(label, text)| QuestionOption {
                    label: (*label).to_string(),
                    text: (*text).to_string(),
                })
                .collect(),
            category: None,
        }
    }

    pub fn is_multiple_choice(&self) -> bool {
        !self.options.is_empty()
    }

    /// Question text with options appended, as shown to every model role.
    pub fn render(&self) -> String {
        if self.options.is_empty() {
            return self.text.clone();
        }
        let mut out = self.text.clone();
        out.push_str("\nOptions:");
        for opt in &self.options {
            out.push_str(&format!("\n{}. {}", opt.label, opt.text));
        }
        out
    }
}

/// The specialized agents the planner can dispatch to, plus the terminal
/// action that hands control to reflection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Grounding,
    VisualPerception,
    Subtitle,
    Terminate,
}

impl AgentKind {
    pub fn display_name(self) -> &'static str {
        match self {
            AgentKind::Grounding => "Grounding Agent",
            AgentKind::VisualPerception => "Visual Perception Agent",
            AgentKind::Subtitle => "Subtitle Agent",
            AgentKind::Terminate => "finish",
        }
    }
}

/// One planner decision: which agent to call and what to ask of it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentAction {
    pub kind: AgentKind,
    /// Sub-task text for the chosen agent. Empty only for `Terminate`.
    pub instruct: String,
    pub reason: String,
}

impl AgentAction {
    pub fn terminate(reason: impl Into<String>) -> Self {
        AgentAction { kind: AgentKind::Terminate, instruct: String::new(), reason: reason.into() }
    }
}

/// Structured payload an agent may return alongside its observation text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationArtifacts {
    Grounding(GroundingResult),
    Subtitle(SubtitleAnalysis),
}

/// What came back from dispatching one action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub source: AgentKind,
    pub text: String,
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifacts: Option<ObservationArtifacts>,
}

impl Observation {
    /// Builds an observation, clipping `text` to `budget` characters.
    pub fn new(source: AgentKind, text: String, budget: usize) -> Self {
        let (text, truncated) = clip_to_budget(&text, budget);
        Observation { source, text, truncated, artifacts: None }
    }

    pub fn with_artifacts(mut self, artifacts: ObservationArtifacts) -> Self {
        self.artifacts = Some(artifacts);
        self
    }
}

/// Clips `text` to at most `budget` characters, keeping the head and ending
/// with the truncation marker so readers can tell content was dropped.
pub fn clip_to_budget(text: &str, budget: usize) -> (String, bool) {
    let len = text.chars().count();
    if len <= budget {
        return (text.to_string(), false);
    }
    let keep = budget.saturating_sub(TRUNCATION_MARKER.chars().count());
    let mut out: String = text.chars().take(keep).collect();
    out.push_str(TRUNCATION_MARKER);
    (out, true)
}

/// Reflection feedback carried into later planning attempts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Critique {
    pub comment: String,
    /// 1-based index of the attempt that was judged.
    pub attempt_index: usize,
}

/// One executed step: the action taken and what it observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub action: AgentAction,
    pub observation: Observation,
}

/// Append-only record of everything the episode has done so far.
///
/// `critique_positions[i]` is the step count at the moment critique `i` was
/// appended, which lets history rendering interleave feedback where it
/// actually happened.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub critiques: Vec<Critique>,
    pub critique_positions: Vec<usize>,
}

impl Trajectory {
    pub fn push_step(&mut self, action: AgentAction, observation: Observation) {
        self.steps.push(TrajectoryStep { action, observation });
    }

    pub fn push_critique(&mut self, critique: Critique) {
        self.critique_positions.push(self.steps.len());
        self.critiques.push(critique);
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty() && self.critiques.is_empty()
    }
}

/// Live episode state handed to the planner on every call.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub question: Question,
    pub trajectory: Trajectory,
    pub video: Arc<FrameManifest>,
    pub subtitles: Arc<SubtitleTrack>,
}

impl EpisodeState {
    pub fn new(question: Question, video: Arc<FrameManifest>, subtitles: Arc<SubtitleTrack>) -> Self {
        EpisodeState { question, trajectory: Trajectory::default(), video, subtitles }
    }
}

/// Final product of an episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    /// Selected option label for multiple-choice questions, otherwise `None`.
    pub choice_label: Option<String>,
    pub free_text: String,
    /// Set when the answer shipped without a credible reflection verdict.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_note: Option<String>,
    /// Identifier of the episode log this answer came from.
    pub trajectory_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BudgetError {
    #[error("budget field {field} must be positive")]
    NonPositive { field: &'static str },
    #[error("frames_per_segment ({frames_per_segment}) must not exceed frame_cap ({frame_cap})")]
    FramesExceedCap { frames_per_segment: usize, frame_cap: usize },
    #[error("score_keep_min must be 2, 3 or 4 (got {0})")]
    ScoreKeepMinOutOfRange(u8),
}

/// Hard resource limits for one episode. Defaults match the operating points
/// the system was tuned at; `validate` rejects inconsistent overrides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    /// Planning steps allowed per attempt before reflection is forced.
    pub inner_rounds: usize,
    /// Model turns a specialized agent may spend on its tool loop.
    pub tool_calls_per_agent: usize,
    /// Reflection attempts before the episode answers regardless.
    pub reflection_rounds: usize,
    /// Most frames any single vision request may carry.
    pub frame_cap: usize,
    /// Segment length for grounding, in seconds.
    pub segment_duration_s: u64,
    /// Frames sampled from each segment when scoring it.
    pub frames_per_segment: usize,
    /// Segment scoring requests allowed in flight at once.
    pub scoring_concurrency: usize,
    /// Window length for embedding retrieval, in seconds.
    pub clip_window_s: u64,
    /// Windows kept by embedding retrieval.
    pub clip_top_k: usize,
    /// Lowest segment score the grounding report keeps.
    pub score_keep_min: u8,
    /// Character budget for a single observation shown to the planner.
    pub observation_budget: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            inner_rounds: 15,
            tool_calls_per_agent: 15,
            reflection_rounds: 3,
            frame_cap: 40,
            segment_duration_s: 60,
            frames_per_segment: 30,
            scoring_concurrency: 20,
            clip_window_s: 10,
            clip_top_k: 15,
            score_keep_min: 2,
            observation_budget: 8000,
        }
    }
}

impl Budgets {
    pub fn validate(&self) -> Result<(), BudgetError> {
        let positives: [(&'static str, usize); 9] = [
            ("inner_rounds", self.inner_rounds),
            ("tool_calls_per_agent", self.tool_calls_per_agent),
            ("reflection_rounds", self.reflection_rounds),
            ("frame_cap", self.frame_cap),
            ("frames_per_segment", self.frames_per_segment),
            ("scoring_concurrency", self.scoring_concurrency),
            ("clip_top_k", self.clip_top_k),
            ("observation_budget", self.observation_budget),
            ("segment_duration_s", self.segment_duration_s as usize),
        ];
        for (field, value) in positives {
            if value == 0 {
                return Err(BudgetError::NonPositive { field });
            }
        }
        if self.clip_window_s == 0 {
            return Err(BudgetError::NonPositive { field: "clip_window_s" });
        }
        if self.frames_per_segment > self.frame_cap {
            return Err(BudgetError::FramesExceedCap {
                frames_per_segment: self.frames_per_segment,
                frame_cap: self.frame_cap,
            });
        }
        if !(2..=4).contains(&self.score_keep_min) {
            return Err(BudgetError::ScoreKeepMinOutOfRange(self.score_keep_min));
        }
        Ok(())
    }

    /// Frame rate used when sampling a segment for scoring.
    pub fn scoring_fps(&self) -> f64 {
        self.frames_per_segment as f64 / self.segment_duration_s as f64
    }
}
