//! Subtitle analysis agent.
//!
//! This is the only place raw subtitles meet a model. The planner never
//! sees them; it gets the condensed analysis produced here. Transcripts too
//! long for one context are split in half by cue count, analysed
//! recursively, and the partial analyses merged by a follow-up model call.

use futures::future::BoxFuture;
use serde_json::Value;
use tracing::warn;

use crate::gateway::{extract_json, BackendRole, ChatMessage, GatewayError, GatewaySession};
use crate::media::{render_cues, SubtitleCue, SubtitleTrack};
use crate::prompts;
use crate::types::{clip_to_budget, Budgets, Question, TimeRange, Timecode};

/// Rendered transcripts longer than this are split before analysis.
pub const SPLIT_THRESHOLD_CHARS: usize = 60_000;

#[derive(Debug, thiserror::Error)]
pub enum SubtitleError {
    /// The model would not produce the expected JSON even after a
    /// corrective reprompt.
    #[error("subtitle analysis output unparseable: {0}")]
    ParseFailure(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Condensed subtitle findings, the only subtitle-derived content other
/// agents ever see.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SubtitleAnalysis {
    /// Question-relevant excerpts, one `[HH:MM:SS - HH:MM:SS]: text` entry
    /// per line.
    pub relevant_subtitle_info: String,
    pub key_entities_and_sentiment: String,
    pub overall_topic: String,
}

impl SubtitleAnalysis {
    /// Stand-in analysis for videos that ship no subtitles.
    pub fn no_subtitles() -> Self {
        SubtitleAnalysis {
            relevant_subtitle_info: String::new(),
            key_entities_and_sentiment: String::new(),
            overall_topic: "No subtitles are available for this video.".to_string(),
        }
    }

    /// Planner-facing observation text.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if self.relevant_subtitle_info.is_empty() {
            out.push_str("Relevant subtitles: none found.\n");
        } else {
            out.push_str("Relevant subtitles:\n");
            out.push_str(&self.relevant_subtitle_info);
            out.push('\n');
        }
        if !self.key_entities_and_sentiment.is_empty() {
            out.push_str(&format!(
                "Key entities and sentiment: {}\n",
                self.key_entities_and_sentiment
            ));
        }
        out.push_str(&format!("Overall topic: {}", self.overall_topic));
        out
    }
}

/// Analyses a full track against the question.
///
/// An empty track short-circuits without a model call. When the video
/// duration is known, timestamps the model cites are checked against it and
/// out-of-range citations logged, not rejected; the excerpt block is capped
/// at the observation budget either way.
pub async fn analyze_subtitles(
    session: &GatewaySession,
    budgets: &Budgets,
    question: &Question,
    track: &SubtitleTrack,
    duration: Option<Timecode>,
) -> Result<SubtitleAnalysis, SubtitleError> {
    analyze_with_threshold(session, budgets, question, track, duration, SPLIT_THRESHOLD_CHARS)
        .await
}

/// Same as [`analyze_subtitles`] with the split threshold exposed, which
/// keeps the split path testable without a 60k character fixture.
pub async fn analyze_with_threshold(
    session: &GatewaySession,
    budgets: &Budgets,
    question: &Question,
    track: &SubtitleTrack,
    duration: Option<Timecode>,
    threshold: usize,
) -> Result<SubtitleAnalysis, SubtitleError> {
    if track.is_empty() {
        return Ok(SubtitleAnalysis::no_subtitles());
    }
    let mut analysis = analyze_cues(session, question, track.cues(), threshold).await?;
    check_cited_timestamps(&analysis.relevant_subtitle_info, duration);
    let (capped, truncated) =
        clip_to_budget(&analysis.relevant_subtitle_info, budgets.observation_budget);
    if truncated {
        warn!("relevant subtitle excerpts exceeded the observation budget and were clipped");
    }
    analysis.relevant_subtitle_info = capped;
    Ok(analysis)
}

fn analyze_cues<'a>(
    session: &'a GatewaySession,
    question: &'a Question,
    cues: &'a [SubtitleCue],
    threshold: usize,
) -> BoxFuture<'a, Result<SubtitleAnalysis, SubtitleError>> {
    Box::pin(async move {
        let rendered = render_cues(cues);
        if rendered.len() > threshold && cues.len() > 1 {
            let mid = cues.len() / 2;
            let first = analyze_cues(session, question, &cues[..mid], threshold).await?;
            let second = analyze_cues(session, question, &cues[mid..], threshold).await?;
            return merge_analyses(session, &first, &second).await;
        }
        let prompt = prompts::fill(
            prompts::SUBTITLE,
            &[
                ("question", question.render().as_str()),
                ("subtitles", rendered.as_str()),
            ],
        );
        chat_for_analysis(session, prompt).await
    })
}

const MERGE_PROMPT: &str = "Two partial subtitle analyses follow, covering the earlier and \
later parts of the same video. Merge them into one analysis of the whole video, keeping the \
most question-relevant excerpts from both.

Earlier part:
{first}

Later part:
{second}

Respond strictly in the same JSON format as the partial analyses, with the keys \
\"relevant_subtitle_info\", \"key_entities_and_sentiment\" and \"overall_topic\". \
Please return only the JSON object.";

async fn merge_analyses(
    session: &GatewaySession,
    first: &SubtitleAnalysis,
    second: &SubtitleAnalysis,
) -> Result<SubtitleAnalysis, SubtitleError> {
    let first_json = serde_json::to_string_pretty(first).expect("analysis serializes");
    let second_json = serde_json::to_string_pretty(second).expect("analysis serializes");
    let prompt = prompts::fill(
        MERGE_PROMPT,
        &[("first", first_json.as_str()), ("second", second_json.as_str())],
    );
    chat_for_analysis(session, prompt).await
}

/// One model call with a single corrective retry on unusable output.
async fn chat_for_analysis(
    session: &GatewaySession,
    prompt: String,
) -> Result<SubtitleAnalysis, SubtitleError> {
    let mut messages = vec![ChatMessage::user(prompt)];
    let reply = session.chat(BackendRole::SubtitleLlm, &messages).await?;
    match parse_analysis(&reply) {
        Ok(a) => Ok(a),
        Err(reason) => {
            messages.push(ChatMessage::assistant(reply));
            messages.push(ChatMessage::user(format!(
                "That reply could not be used: {reason}. Respond with only a JSON object \
                 holding the string fields \"relevant_subtitle_info\", \
                 \"key_entities_and_sentiment\" and \"overall_topic\"."
            )));
            let retry = session.chat(BackendRole::SubtitleLlm, &messages).await?;
            parse_analysis(&retry).map_err(|_| SubtitleError::ParseFailure(retry))
        }
    }
}

fn parse_analysis(reply: &str) -> Result<SubtitleAnalysis, String> {
    let value = extract_json(reply).map_err(|e| e.to_string())?;
    let field = |name: &str| -> Result<String, String> {
        value
            .get(name)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or(format!("missing {name:?} string"))
    };
    Ok(SubtitleAnalysis {
        relevant_subtitle_info: field("relevant_subtitle_info")?,
        key_entities_and_sentiment: field("key_entities_and_sentiment")?,
        overall_topic: field("overall_topic")?,
    })
}

/// Sanity-checks the `[HH:MM:SS - HH:MM:SS]` stamps the model put in its
/// excerpts. A model can cite times that never existed; that only earns a
/// log line because the excerpt text itself may still be right.
fn check_cited_timestamps(info: &str, duration: Option<Timecode>) {
    for line in info.lines() {
        let line = line.trim_start();
        let Some(rest) = line.strip_prefix('[') else { continue };
        let Some(close) = rest.find(']') else {
            warn!(%line, "cited timestamp bracket never closes");
            continue;
        };
        let Some((start, end)) = rest[..close].split_once(" - ") else {
            warn!(%line, "cited timestamp is not a range");
            continue;
        };
        let parsed: Result<(Timecode, Timecode), _> = start
            .trim()
            .parse()
            .and_then(|s| end.trim().parse().map(|e| (s, e)));
        match parsed {
            Err(_) => warn!(%line, "cited timestamp does not parse"),
            Ok((s, e)) => {
                if TimeRange::new(s, e).is_err() {
                    warn!(%line, "cited timestamp range is inverted or empty");
                } else if let Some(d) = duration {
                    if e.as_ms() > d.as_ms() {
                        warn!(%line, video_ends = %d, "cited timestamp lies beyond the video");
                    }
                }
            }
        }
    }
}
