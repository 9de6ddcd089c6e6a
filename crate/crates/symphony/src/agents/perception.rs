//! Visual perception agent.
//!
//! Answers a planner instruct by looking at frames. The model drives a tool
//! loop with three inspection tools at different zoom levels: a close look
//! at one short range, a whole-video overview, and a side-by-side pass over
//! a handful of ranges. The loop ends when the model opens a reply with the
//! `[answer]` marker, or when the tool budget runs out, in which case the
//! last tool output stands in for an answer and the report is marked
//! exhausted.
//!
//! Malformed tool calls are not errors. They cost a turn and come back to
//! the model as corrective text, so a model that misreads the tool schema
//! gets a chance to recover. Only transport failures abort the run.

use std::collections::BTreeMap;
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde_json::Value;

use crate::gateway::{
    extract_json, BackendRole, ChatMessage, GatewayError, GatewaySession, VisionFrame,
};
use crate::media::{sample_uniform, thin_uniform, Frame, FrameManifest};
use crate::prompts;
use crate::types::{Budgets, TimeRange, Timecode};

/// Marker a reply must carry to end the loop with an answer.
pub const ANSWER_MARKER: &str = "[answer]";

/// Inspection ranges must be longer than this.
const MIN_INSPECT_MS: u64 = 10_000;
/// And no longer than this.
const MAX_INSPECT_MS: u64 = 60_000;
/// Ranges longer than this get extra cue-guided frames when a cue is given.
const CUE_GUIDED_THRESHOLD_MS: u64 = 30_000;
/// How many cue-guided frames to add.
const CUE_GUIDED_COUNT: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum PerceptionError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// What the perception loop produced.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionReport {
    pub text: String,
    /// Set when the tool budget ran out before a declared answer; the text
    /// is then the last tool output rather than an answer.
    pub exhausted: bool,
}

/// Runs the perception tool loop for one instruct.
pub async fn run_perception(
    session: &GatewaySession,
    budgets: &Budgets,
    instruct: &str,
    video: &Arc<FrameManifest>,
) -> Result<PerceptionReport, PerceptionError> {
    let prompt = prompts::fill(prompts::PERCEPTION, &[("instruct", instruct)]);
    let mut messages = vec![ChatMessage::user(prompt)];
    let mut last_output: Option<String> = None;

    for turn in 0.. {
        let reply = session.chat(BackendRole::Vlm, &messages).await?;
        match classify(&reply) {
            Classified::Answer(text) => {
                return Ok(PerceptionReport { text, exhausted: false });
            }
            Classified::Tool(call) => {
                messages.push(ChatMessage::assistant(reply));
                if turn == budgets.tool_calls_per_agent {
                    break;
                }
                match execute(&call, session, budgets, instruct, video).await? {
                    ToolOutcome::Output(text) => {
                        last_output = Some(text.clone());
                        messages.push(ChatMessage::user(text));
                    }
                    ToolOutcome::Corrective(text) => {
                        messages.push(ChatMessage::user(text));
                    }
                }
            }
            Classified::Invalid(corrective) => {
                messages.push(ChatMessage::assistant(reply));
                if turn == budgets.tool_calls_per_agent {
                    break;
                }
                messages.push(ChatMessage::user(corrective));
            }
        }
    }

    let text = last_output.unwrap_or_else(|| {
        "the perception tool budget ran out before any tool produced output".to_string()
    });
    Ok(PerceptionReport { text, exhausted: true })
}

enum Classified {
    Answer(String),
    Tool(ToolCall),
    Invalid(String),
}

enum ToolCall {
    Inspect { start: String, end: String, cue: Option<String> },
    GlobalSummary,
    MultiSegment { ranges: Vec<(String, String)> },
}

fn classify(reply: &str) -> Classified {
    if let Some(rest) = reply.trim_start().strip_prefix(ANSWER_MARKER) {
        return Classified::Answer(rest.trim().to_string());
    }
    match parse_tool_call(reply) {
        Ok(call) => Classified::Tool(call),
        Err(corrective) => {
            // A model that buries the marker mid-reply still gets through,
            // as long as the reply is not a tool call.
            if let Some(idx) = reply.find(ANSWER_MARKER) {
                Classified::Answer(reply[idx + ANSWER_MARKER.len()..].trim().to_string())
            } else {
                Classified::Invalid(corrective)
            }
        }
    }
}

fn parse_tool_call(reply: &str) -> Result<ToolCall, String> {
    let value = extract_json(reply).map_err(|_| {
        format!(
            "that reply held neither a JSON tool call nor an {ANSWER_MARKER} marker; \
             call one tool, or open your reply with {ANSWER_MARKER} followed by the answer"
        )
    })?;
    let tool = value
        .get("tool")
        .and_then(Value::as_str)
        .ok_or("the JSON object has no \"tool\" field")?;
    let args = value.get("args").cloned().unwrap_or(Value::Null);
    match tool {
        "frame_inspector" => {
            let (start, end) = parse_pair(args.get("time_range")).ok_or(
                "frame_inspector needs \"time_range\": [\"HH:MM:SS\", \"HH:MM:SS\"]",
            )?;
            let cue = args
                .get("cue")
                .and_then(Value::as_str)
                .filter(|s| !s.trim().is_empty())
                .map(str::to_string);
            Ok(ToolCall::Inspect { start, end, cue })
        }
        "global_summary_tool" | "global_summary" => Ok(ToolCall::GlobalSummary),
        "multi_segment_analysis_tool" | "multi_segment_analysis" => {
            let ranges = args
                .get("time_ranges")
                .and_then(Value::as_array)
                .map(|items| items.iter().map(|i| parse_pair(Some(i))).collect::<Option<Vec<_>>>())
                .flatten()
                .ok_or(
                    "multi_segment_analysis_tool needs \"time_ranges\": \
                     [[\"HH:MM:SS\", \"HH:MM:SS\"], ...]",
                )?;
            Ok(ToolCall::MultiSegment { ranges })
        }
        other => Err(format!(
            "unknown tool {other:?}; available tools are frame_inspector, \
             global_summary_tool and multi_segment_analysis_tool"
        )),
    }
}

fn parse_pair(value: Option<&Value>) -> Option<(String, String)> {
    let items = value?.as_array()?;
    if items.len() != 2 {
        return None;
    }
    Some((items[0].as_str()?.to_string(), items[1].as_str()?.to_string()))
}

enum ToolOutcome {
    Output(String),
    Corrective(String),
}

async fn execute(
    call: &ToolCall,
    session: &GatewaySession,
    budgets: &Budgets,
    instruct: &str,
    video: &FrameManifest,
) -> Result<ToolOutcome, GatewayError> {
    match call {
        ToolCall::Inspect { start, end, cue } => {
            inspect(session, budgets, instruct, start, end, cue.as_deref(), video).await
        }
        ToolCall::GlobalSummary => global_summary(session, budgets, instruct, video).await,
        ToolCall::MultiSegment { ranges } => {
            multi_segment(session, budgets, instruct, ranges, video).await
        }
    }
}

/// Resolves a raw timecode pair against the video, or explains what is
/// wrong with it.
fn resolve_range(start: &str, end: &str, video: &FrameManifest) -> Result<TimeRange, String> {
    let parse = |s: &str| {
        s.parse::<Timecode>()
            .map_err(|_| format!("{s:?} is not a valid HH:MM:SS timecode"))
    };
    let (start, end) = (parse(start)?, parse(end)?);
    if end.as_ms() > video.duration.as_ms() {
        return Err(format!(
            "the range ends at {end} but the video ends at {}; pick an end time inside the video",
            video.duration
        ));
    }
    TimeRange::new(start, end)
        .map_err(|_| format!("the range start {start} must come before its end {end}"))
}

async fn inspect(
    session: &GatewaySession,
    budgets: &Budgets,
    instruct: &str,
    start: &str,
    end: &str,
    cue: Option<&str>,
    video: &FrameManifest,
) -> Result<ToolOutcome, GatewayError> {
    let range = match resolve_range(start, end, video) {
        Ok(r) => r,
        Err(w) => return Ok(ToolOutcome::Corrective(w)),
    };
    if range.len_ms() <= MIN_INSPECT_MS {
        return Ok(ToolOutcome::Corrective(format!(
            "the range {range} spans only {} seconds; frame_inspector needs more than 10 \
             seconds, widen the range",
            range.len_ms() / 1000
        )));
    }
    if range.len_ms() > MAX_INSPECT_MS {
        return Ok(ToolOutcome::Corrective(format!(
            "the range {range} spans {} seconds; frame_inspector takes at most 60 seconds \
             per call, split longer spans into consecutive calls",
            range.len_ms() / 1000
        )));
    }

    let mut picks = sample_uniform(range, budgets.frame_cap, video);
    if range.len_ms() > CUE_GUIDED_THRESHOLD_MS {
        if let Some(cue) = cue {
            let guided = cue_guided(session, budgets, cue, range, video).await?;
            picks = merge_thinned(picks, guided, budgets.frame_cap);
        }
    }
    if picks.is_empty() {
        return Ok(ToolOutcome::Corrective(format!(
            "no frames are indexed inside {range}; pick a different range"
        )));
    }

    let frames: Vec<VisionFrame> =
        picks.into_iter().map(|f| VisionFrame::new(f.at, f.path)).collect();
    let prompt = format!(
        "Inspect the frames sampled from {range} and answer: {instruct}\n\
         Base your reply only on what these frames show."
    );
    let reply = session.vision_chat(&prompt, &frames).await?;
    Ok(ToolOutcome::Output(format!("frame_inspector {range}:\n{reply}")))
}

/// Top in-range frames by embedding similarity to the cue, best first.
async fn cue_guided(
    session: &GatewaySession,
    budgets: &Budgets,
    cue: &str,
    range: TimeRange,
    video: &FrameManifest,
) -> Result<Vec<Frame>, GatewayError> {
    let query = session.embed_text(cue).await?;
    let in_range = video.frames_in(range);
    let mut scored: Vec<(usize, f32)> = Vec::with_capacity(in_range.len());

    let tasks: Vec<_> = in_range
        .iter()
        .enumerate()
        .map(|(idx, frame)| async move {
            Ok::<_, GatewayError>((idx, session.embed_image(&frame.path).await?))
        })
        .collect();
    let mut embeds = stream::iter(tasks).buffer_unordered(budgets.scoring_concurrency);
    while let Some(result) = embeds.next().await {
        let (idx, vector) = result?;
        scored.push((idx, cosine(&query, &vector)));
    }
    drop(embeds);

    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0))
    });
    Ok(scored
        .into_iter()
        .take(CUE_GUIDED_COUNT)
        .map(|(idx, _)| in_range[idx].clone())
        .collect())
}

fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f32 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
    let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Union of the uniform picks and the cue picks, deduplicated, in time
/// order, thinned back down to the cap.
fn merge_thinned(uniform: Vec<Frame>, guided: Vec<Frame>, cap: usize) -> Vec<Frame> {
    let mut by_time: BTreeMap<u64, Frame> = BTreeMap::new();
    for frame in uniform.into_iter().chain(guided) {
        by_time.entry(frame.at.as_ms()).or_insert(frame);
    }
    thin_uniform(by_time.into_values().collect(), cap)
}

async fn global_summary(
    session: &GatewaySession,
    budgets: &Budgets,
    instruct: &str,
    video: &FrameManifest,
) -> Result<ToolOutcome, GatewayError> {
    let whole = match TimeRange::from_ms(0, video.duration.as_ms()) {
        Ok(r) => r,
        Err(_) => return Ok(ToolOutcome::Corrective("the video has no duration".into())),
    };
    let frames: Vec<VisionFrame> = sample_uniform(whole, budgets.frame_cap, video)
        .into_iter()
        .map(|f| VisionFrame::new(f.at, f.path))
        .collect();
    if frames.is_empty() {
        return Ok(ToolOutcome::Corrective("no frames are indexed for this video".into()));
    }
    let prompt = format!(
        "These frames are sampled uniformly across the whole video. Give a rough overview: \
         the setting, the main subjects, and how the content progresses over time. \
         Keep in mind the question being investigated: {instruct}"
    );
    let reply = session.vision_chat(&prompt, &frames).await?;
    Ok(ToolOutcome::Output(format!("global_summary_tool:\n{reply}")))
}

async fn multi_segment(
    session: &GatewaySession,
    budgets: &Budgets,
    instruct: &str,
    ranges: &[(String, String)],
    video: &FrameManifest,
) -> Result<ToolOutcome, GatewayError> {
    if !(2..=6).contains(&ranges.len()) {
        return Ok(ToolOutcome::Corrective(format!(
            "multi_segment_analysis_tool takes between 2 and 6 time ranges, got {}",
            ranges.len()
        )));
    }
    let mut resolved = Vec::with_capacity(ranges.len());
    for (start, end) in ranges {
        match resolve_range(start, end, video) {
            Ok(r) => resolved.push(r),
            Err(w) => return Ok(ToolOutcome::Corrective(w)),
        }
    }

    let per_segment = budgets.frame_cap / resolved.len();
    let mut frames = Vec::new();
    for (i, range) in resolved.iter().enumerate() {
        let label = format!("Segment {}", i + 1);
        frames.extend(
            sample_uniform(*range, per_segment, video)
                .into_iter()
                .map(|f| VisionFrame::labeled(f.at, f.path, label.clone())),
        );
    }
    if frames.is_empty() {
        return Ok(ToolOutcome::Corrective(
            "no frames are indexed inside any of those ranges; pick different ranges".into(),
        ));
    }
    let prompt = format!(
        "Frames from {} segments follow; each caption names its segment and timestamp. \
         Compare the segments and answer: {instruct}",
        resolved.len()
    );
    let reply = session.vision_chat(&prompt, &frames).await?;
    Ok(ToolOutcome::Output(format!(
        "multi_segment_analysis_tool over {} segments:\n{reply}",
        resolved.len()
    )))
}
