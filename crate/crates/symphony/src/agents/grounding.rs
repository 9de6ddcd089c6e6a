//! Temporal grounding agent.
//!
//! Given a question (or a planner instruct refining it), this agent locates
//! the parts of the video worth looking at. It first asks the VLM to analyse
//! the query, then drives a short tool loop in which the model may call one
//! of two localisation tools per turn:
//!
//! * `vlm_scoring_tool` scores every coarse segment of the video for
//!   relevance on a 1..4 scale and keeps the promising ones, or
//! * `retrieve_tool` ranks short clip windows by embedding similarity
//!   against a textual cue,
//!
//! before calling `finish` with a textual report. The structured segment
//! lists ride along with the report so downstream agents can reuse them.

use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::warn;

use crate::gateway::{
    extract_json, BackendRole, ChatMessage, GatewayError, GatewaySession, VisionFrame,
};
use crate::media::{clip_windows, partition_segments, sample_fps, FrameManifest};
use crate::prompts;
use crate::types::{Budgets, Question, TimeRange};

/// Frames embedded per retrieval window: 10 s at 0.2 fps.
const RETRIEVE_FPS: f64 = 0.2;
const RETRIEVE_FRAME_CAP: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum GroundingError {
    /// The model would not produce a usable reply even after a corrective
    /// reprompt.
    #[error("grounding model output unparseable: {0}")]
    ParseFailure(String),
    /// The tool loop ran out of turns without a `finish` call.
    #[error("grounding tool loop exceeded {limit} turns without finishing")]
    ToolLoopExceeded { limit: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// How involved the question is, per the query analysis step.
///
/// `Simple` questions go straight to segment scoring; `Compound` ones carry
/// concrete visual cues that retrieval can search for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Complexity {
    Simple,
    Compound,
}

/// The model's structured reading of the query, produced before any tool
/// call and reused as the scoring instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancedQuery {
    /// The question text the analysis was made for.
    pub original: String,
    pub analysis: String,
    pub concrete_cues: Vec<String>,
    pub complexity: Complexity,
}

impl EnhancedQuery {
    /// Plain query with no analysis behind it, used when scoring is invoked
    /// before (or without) a successful analysis turn.
    pub fn bare(question: &str) -> Self {
        EnhancedQuery {
            original: question.to_string(),
            analysis: question.to_string(),
            concrete_cues: Vec::new(),
            complexity: Complexity::Simple,
        }
    }

    /// Instruction text handed to the scoring prompt: the analysis plus any
    /// concrete cues.
    pub fn scoring_instruction(&self) -> String {
        if self.concrete_cues.is_empty() {
            self.analysis.clone()
        } else {
            format!(
                "{} Concrete cues to look for: {}.",
                self.analysis,
                self.concrete_cues.join(", ")
            )
        }
    }
}

/// Relevance verdict for one scored segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentScore {
    pub range: TimeRange,
    /// 1 (unrelated) to 4 (contains the answer).
    pub score: u8,
    pub clip_caption: String,
    /// Only kept for segments scored 2 and above.
    pub reasoning: Option<String>,
}

/// One clip window ranked by embedding similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedClip {
    pub range: TimeRange,
    pub similarity: f32,
}

/// Structured output of whichever localisation tool ran last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GroundingSegments {
    /// The agent finished without running a localisation tool.
    None,
    Scored(Vec<SegmentScore>),
    Retrieved(Vec<RetrievedClip>),
}

/// What the grounding agent hands back: a textual report for the planner
/// plus the structured segments behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingResult {
    pub segments: GroundingSegments,
    pub report: String,
}

/// Runs the query analysis step on its own, outside the tool loop.
pub async fn enhance_query(
    session: &GatewaySession,
    question: &Question,
    duration: &str,
) -> Result<EnhancedQuery, GroundingError> {
    let rendered = question.render();
    let prompt = prompts::fill(
        prompts::GROUNDING,
        &[("question", rendered.as_str()), ("duration", duration)],
    );
    let mut messages = vec![ChatMessage::user(prompt)];
    let reply = session.chat(BackendRole::Vlm, &messages).await?;
    match parse_enhanced(&reply, &rendered) {
        Ok(q) => Ok(q),
        Err(reason) => {
            messages.push(ChatMessage::assistant(reply));
            messages.push(ChatMessage::user(format!(
                "That reply could not be used: {reason}. Respond with one JSON object \
                 containing \"analysis\" (string), \"concrete_cues\" (array of strings) \
                 and \"complexity\" (\"Simple\" or \"Compound\")."
            )));
            let retry = session.chat(BackendRole::Vlm, &messages).await?;
            parse_enhanced(&retry, &rendered).map_err(GroundingError::ParseFailure)
        }
    }
}

fn parse_enhanced(reply: &str, original: &str) -> Result<EnhancedQuery, String> {
    let value = extract_json(reply).map_err(|e| e.to_string())?;
    let analysis = value
        .get("analysis")
        .and_then(Value::as_str)
        .ok_or("missing \"analysis\" string")?
        .to_string();
    let cues: Vec<String> = match value.get("concrete_cues") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect::<Option<_>>()
            .ok_or("\"concrete_cues\" must be an array of strings")?,
        Some(_) => return Err("\"concrete_cues\" must be an array of strings".into()),
    };
    let complexity = match value.get("complexity").and_then(Value::as_str) {
        Some(s) if s.eq_ignore_ascii_case("simple") => Complexity::Simple,
        Some(s) if s.eq_ignore_ascii_case("compound") => Complexity::Compound,
        Some(other) => return Err(format!("unknown complexity {other:?}")),
        None => return Err("missing \"complexity\" string".into()),
    };
    if complexity == Complexity::Compound && cues.is_empty() {
        return Err("compound questions must list at least one concrete cue".into());
    }
    Ok(EnhancedQuery {
        original: original.to_string(),
        analysis,
        concrete_cues: cues,
        complexity,
    })
}

/// Scores one segment of the video against the query.
///
/// Frames are sampled at the configured scoring rate. A reply the model
/// garbles is not fatal: the segment degrades to score 1 with a warning, so
/// one bad reply cannot sink a whole scoring pass. Transport errors do
/// propagate; retries have already happened inside the gateway by then.
pub async fn score_segment(
    session: &GatewaySession,
    budgets: &Budgets,
    query: &EnhancedQuery,
    segment: TimeRange,
    video: &FrameManifest,
) -> Result<SegmentScore, GatewayError> {
    let degraded = |caption: &str| SegmentScore {
        range: segment,
        score: 1,
        clip_caption: caption.to_string(),
        reasoning: None,
    };
    let frames: Vec<VisionFrame> = sample_fps(segment, budgets.scoring_fps(), budgets.frame_cap, video)
        .into_iter()
        .map(|f| VisionFrame::new(f.at, f.path.clone()))
        .collect();
    if frames.is_empty() {
        warn!(segment = %segment, "no indexed frames in segment, scoring it 1");
        return Ok(degraded("no indexed frames in this segment"));
    }
    let instruction = query.scoring_instruction();
    let prompt = prompts::fill(
        prompts::SCORING,
        &[
            ("question", query.original.as_str()),
            ("scoring_instruction", instruction.as_str()),
        ],
    );
    let reply = session.vision_chat(&prompt, &frames).await?;
    let parsed = extract_json(&reply).ok().and_then(|v| {
        let score = v.get("relevance_score").and_then(Value::as_u64)?;
        if !(1..=4).contains(&score) {
            return None;
        }
        let caption = v
            .get("clip_caption")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        let reasoning = v
            .get("reasoning")
            .and_then(Value::as_str)
            .filter(|s| !s.is_empty() && !s.eq_ignore_ascii_case("null"))
            .map(str::to_string);
        Some(SegmentScore {
            range: segment,
            score: score as u8,
            clip_caption: caption,
            reasoning: if score >= 2 { reasoning } else { None },
        })
    });
    Ok(parsed.unwrap_or_else(|| {
        warn!(segment = %segment, reply, "unusable scoring reply, degrading segment to score 1");
        degraded("")
    }))
}

/// Scores every segment of the video and keeps the relevant ones.
///
/// Segments are scored concurrently up to `scoring_concurrency` in flight.
/// Kept segments (score at or above `score_keep_min`) come back sorted by
/// score descending, earlier segment first among equals. Individual segment
/// failures degrade to score 1; only every segment failing aborts the pass.
pub async fn vlm_ground(
    session: &GatewaySession,
    budgets: &Budgets,
    query: &EnhancedQuery,
    video: &FrameManifest,
) -> Result<Vec<SegmentScore>, GroundingError> {
    let segments = partition_segments(video.duration, budgets.segment_duration_s);
    let mut results: Vec<Option<SegmentScore>> = vec![None; segments.len()];
    let mut first_error: Option<GatewayError> = None;
    let mut failures = 0usize;

    let tasks: Vec<_> = segments
        .iter()
        .enumerate()
        .map(|(idx, segment)| {
            let segment = *segment;
            async move {
                (
                    idx,
                    score_segment(session, budgets, query, segment, video).await,
                )
            }
        })
        .collect();
    let mut scored = stream::iter(tasks).buffer_unordered(budgets.scoring_concurrency);

    while let Some((idx, result)) = scored.next().await {
        match result {
            Ok(score) => results[idx] = Some(score),
            Err(e) => {
                warn!(segment = %segments[idx], error = %e, "segment scoring failed, degrading to score 1");
                failures += 1;
                first_error.get_or_insert(e);
                results[idx] = Some(SegmentScore {
                    range: segments[idx],
                    score: 1,
                    clip_caption: String::new(),
                    reasoning: None,
                });
            }
        }
    }
    drop(scored);

    if failures == segments.len() {
        if let Some(e) = first_error {
            return Err(GroundingError::Gateway(e));
        }
    }

    let mut kept: Vec<SegmentScore> = results
        .into_iter()
        .flatten()
        .filter(|s| s.score >= budgets.score_keep_min)
        .collect();
    kept.sort_by(|a, b| {
        b.score
            .cmp(&a.score)
            .then(a.range.start.as_ms().cmp(&b.range.start.as_ms()))
    });
    Ok(kept)
}

/// Ranks short clip windows by embedding similarity against a textual cue.
///
/// Each window is represented by the normalised mean of its frame
/// embeddings; windows with no indexed frames are skipped. The top windows
/// by cosine similarity are returned, earlier window first among ties.
pub async fn clip_retrieve(
    session: &GatewaySession,
    budgets: &Budgets,
    cue: &str,
    video: &FrameManifest,
) -> Result<Vec<RetrievedClip>, GroundingError> {
    let windows = clip_windows(video.duration, budgets.clip_window_s);
    let query_vec = normalize(session.embed_text(cue).await?);

    let mut ranked: Vec<RetrievedClip> = Vec::new();
    let tasks: Vec<_> = windows
        .iter()
        .map(|window| {
            let window = *window;
            async move {
                let mut vectors = Vec::new();
                for frame in sample_fps(window, RETRIEVE_FPS, RETRIEVE_FRAME_CAP, video) {
                    vectors.push(session.embed_image(&frame.path).await?);
                }
                Ok::<_, GatewayError>((window, vectors))
            }
        })
        .collect();
    let mut window_vecs = stream::iter(tasks).buffer_unordered(budgets.scoring_concurrency);

    while let Some(result) = window_vecs.next().await {
        let (window, vectors) = result?;
        if vectors.is_empty() {
            continue;
        }
        let mean = normalize(mean_vector(&vectors));
        ranked.push(RetrievedClip {
            range: window,
            similarity: dot(&query_vec, &mean),
        });
    }
    drop(window_vecs);

    ranked.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.range.start.as_ms().cmp(&b.range.start.as_ms()))
    });
    ranked.truncate(budgets.clip_top_k);
    Ok(ranked)
}

fn mean_vector(vectors: &[Vec<f32>]) -> Vec<f32> {
    let dim = vectors.iter().map(Vec::len).max().unwrap_or(0);
    let mut mean = vec![0.0f32; dim];
    for v in vectors {
        for (slot, x) in mean.iter_mut().zip(v.iter()) {
            *slot += x;
        }
    }
    let n = vectors.len() as f32;
    for slot in &mut mean {
        *slot /= n;
    }
    mean
}

fn normalize(mut v: Vec<f32>) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Drives the full grounding tool loop and returns the agent's report.
///
/// The model replies one JSON object per turn: either the query analysis or
/// a tool call. `finish` is honoured on any turn, including the first, in
/// which case no structured segments accompany the report. Two garbled
/// replies in a row end the loop as a parse failure; running out of turns
/// without `finish` ends it as [`GroundingError::ToolLoopExceeded`].
pub async fn run_grounding(
    session: &GatewaySession,
    budgets: &Budgets,
    instruct: &str,
    question: &Question,
    video: &Arc<FrameManifest>,
) -> Result<GroundingResult, GroundingError> {
    let effective_query = if instruct.trim().is_empty() {
        question.render()
    } else {
        instruct.to_string()
    };
    let duration = video.duration.to_string();
    let prompt = prompts::fill(
        prompts::GROUNDING,
        &[
            ("question", effective_query.as_str()),
            ("duration", duration.as_str()),
        ],
    );

    let mut messages = vec![ChatMessage::user(prompt)];
    let mut enhanced: Option<EnhancedQuery> = None;
    let mut segments = GroundingSegments::None;
    let mut strikes = 0u8;

    for _ in 0..budgets.tool_calls_per_agent {
        let reply = session.chat(BackendRole::Vlm, &messages).await?;
        messages.push(ChatMessage::assistant(reply.clone()));

        let turn = parse_turn(&reply);
        if matches!(turn, Turn::Unusable(_)) {
            strikes += 1;
            if strikes >= 2 {
                return Err(GroundingError::ParseFailure(reply));
            }
        } else {
            strikes = 0;
        }

        match turn {
            Turn::Analysis(value) => match parse_enhanced(&reply, &effective_query) {
                Ok(q) => {
                    enhanced = Some(q);
                    messages.push(ChatMessage::user(
                        "Analysis noted. Now call exactly one tool as a JSON object.".to_string(),
                    ));
                }
                Err(reason) => {
                    let _ = value;
                    messages.push(ChatMessage::user(format!(
                        "That analysis could not be used: {reason}. \
                         Send it again as one valid JSON object."
                    )));
                }
            },
            Turn::Finish { answer } => {
                return Ok(GroundingResult {
                    segments,
                    report: answer,
                });
            }
            Turn::Retrieve { cue } => {
                let cue = cue.unwrap_or_else(|| effective_query.clone());
                let clips = clip_retrieve(session, budgets, &cue, video).await?;
                let summary = format_retrieved(&cue, &clips);
                segments = GroundingSegments::Retrieved(clips);
                messages.push(ChatMessage::user(summary));
            }
            Turn::Score { query } => {
                let query = enhanced
                    .clone()
                    .or(query)
                    .unwrap_or_else(|| EnhancedQuery::bare(&effective_query));
                let scores = vlm_ground(session, budgets, &query, video).await?;
                let summary = format_scored(&scores);
                segments = GroundingSegments::Scored(scores);
                messages.push(ChatMessage::user(summary));
            }
            Turn::UnknownTool(name) => {
                messages.push(ChatMessage::user(format!(
                    "Unknown tool {name:?}. Available tools: retrieve_tool, \
                     vlm_scoring_tool, finish."
                )));
            }
            Turn::Unusable(reason) => {
                messages.push(ChatMessage::user(format!(
                    "That reply could not be used: {reason}. Send exactly one JSON \
                     object, either the query analysis or a tool call."
                )));
            }
        }
    }

    Err(GroundingError::ToolLoopExceeded {
        limit: budgets.tool_calls_per_agent,
    })
}

enum Turn {
    Analysis(Value),
    Finish { answer: String },
    Retrieve { cue: Option<String> },
    Score { query: Option<EnhancedQuery> },
    UnknownTool(String),
    Unusable(String),
}

fn parse_turn(reply: &str) -> Turn {
    let value = match extract_json(reply) {
        Ok(v) => v,
        Err(e) => return Turn::Unusable(e.to_string()),
    };
    if let Some(tool) = value.get("tool").and_then(Value::as_str) {
        let args = value.get("args").cloned().unwrap_or(Value::Null);
        let arg_str =
            |key: &str| -> Option<String> { args.get(key)?.as_str().map(str::to_string) };
        return match tool {
            "finish" => Turn::Finish {
                answer: arg_str("answer").unwrap_or_default(),
            },
            "retrieve_tool" | "retrieve" => Turn::Retrieve {
                cue: arg_str("cue").or_else(|| arg_str("query")),
            },
            "vlm_scoring_tool" | "vlm_scoring" => Turn::Score {
                query: match (arg_str("question"), arg_str("scoring_instruction")) {
                    (Some(q), Some(instruction)) => Some(EnhancedQuery {
                        original: q.clone(),
                        analysis: instruction,
                        concrete_cues: Vec::new(),
                        complexity: Complexity::Simple,
                    }),
                    _ => None,
                },
            },
            other => Turn::UnknownTool(other.to_string()),
        };
    }
    if value.get("analysis").is_some() {
        return Turn::Analysis(value);
    }
    Turn::Unusable("the JSON object holds neither an analysis nor a tool call".to_string())
}

fn format_scored(scores: &[SegmentScore]) -> String {
    if scores.is_empty() {
        return "Segment scoring kept no segments; every scored segment was unrelated to the query."
            .to_string();
    }
    let mut out = format!("Segment scoring kept {} segment(s):\n", scores.len());
    for s in scores {
        out.push_str(&format!("{} score {}: {}", s.range, s.score, s.clip_caption));
        if let Some(reasoning) = &s.reasoning {
            out.push_str(&format!(" ({reasoning})"));
        }
        out.push('\n');
    }
    out.pop();
    out
}

fn format_retrieved(cue: &str, clips: &[RetrievedClip]) -> String {
    if clips.is_empty() {
        return format!("Clip retrieval found no windows with indexed frames for cue {cue:?}.");
    }
    let mut out = format!("Top {} clip window(s) for cue {cue:?}:\n", clips.len());
    for c in clips {
        out.push_str(&format!("{} similarity {:.3}\n", c.range, c.similarity));
    }
    out.pop();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{BackendScript, ModelGateway};
    use crate::media::Frame;
    use crate::types::Timecode;
    use std::path::PathBuf;

    fn manifest(duration_s: u64, frame_every_s: u64) -> Arc<FrameManifest> {
        let frames: Vec<Frame> = (0..duration_s)
            .step_by(frame_every_s as usize)
            .map(|s| Frame {
                at: Timecode::from_secs(s),
                path: PathBuf::from(format!("frames/{s:06}.jpg")),
            })
            .collect();
        Arc::new(
            FrameManifest::new("vid", Timecode::from_secs(duration_s), frames).unwrap(),
        )
    }

    fn session_for(script: BackendScript) -> GatewaySession {
        ModelGateway::scripted(script).session()
    }

    fn question() -> Question {
        Question::open("q1", "What colour is the kite?")
    }

    const ANALYSIS_REPLY: &str = r#"{"analysis": "Find the kite and read its colour.",
        "concrete_cues": ["a kite in the sky"], "complexity": "Compound"}"#;

    #[tokio::test]
    async fn enhance_query_parses_analysis() {
        let script = BackendScript::new().respond(BackendRole::Vlm, ANALYSIS_REPLY);
        let session = session_for(script);
        let q = enhance_query(&session, &question(), "00:10:00").await.unwrap();
        assert_eq!(q.analysis, "Find the kite and read its colour.");
        assert_eq!(q.concrete_cues, vec!["a kite in the sky"]);
        assert_eq!(q.complexity, Complexity::Compound);
        assert_eq!(
            q.scoring_instruction(),
            "Find the kite and read its colour. Concrete cues to look for: a kite in the sky."
        );
    }

    #[tokio::test]
    async fn enhance_query_reprompts_once_then_succeeds() {
        let script = BackendScript::new()
            .respond(BackendRole::Vlm, "no json at all")
            .respond(BackendRole::Vlm, ANALYSIS_REPLY);
        let session = session_for(script);
        let q = enhance_query(&session, &question(), "00:10:00").await.unwrap();
        assert_eq!(q.complexity, Complexity::Compound);
        assert_eq!(session.exchanges().await.len(), 2);
    }

    #[tokio::test]
    async fn enhance_query_fails_after_second_bad_reply() {
        let script = BackendScript::new()
            .respond(BackendRole::Vlm, r#"{"analysis": "x", "complexity": "Compound"}"#)
            .respond(BackendRole::Vlm, "still not json");
        let session = session_for(script);
        let err = enhance_query(&session, &question(), "00:10:00")
            .await
            .unwrap_err();
        assert!(matches!(err, GroundingError::ParseFailure(_)));
    }

    #[tokio::test]
    async fn compound_without_cues_is_invalid() {
        let bad = r#"{"analysis": "x", "concrete_cues": [], "complexity": "Compound"}"#;
        assert!(parse_enhanced(bad, "q").is_err());
        let ok = r#"{"analysis": "x", "concrete_cues": [], "complexity": "Simple"}"#;
        assert!(parse_enhanced(ok, "q").is_ok());
    }

    #[tokio::test]
    async fn score_segment_parses_reply() {
        let script = BackendScript::new().respond(
            BackendRole::Vlm,
            r#"{"relevance_score": 3, "clip_caption": "a red kite", "reasoning": "kite visible"}"#,
        );
        let session = session_for(script);
        let video = manifest(120, 2);
        let segment = TimeRange::from_ms(0, 60_000).unwrap();
        let score = score_segment(
            &session,
            &Budgets::default(),
            &EnhancedQuery::bare("kite?"),
            segment,
            &video,
        )
        .await
        .unwrap();
        assert_eq!(score.score, 3);
        assert_eq!(score.clip_caption, "a red kite");
        assert_eq!(score.reasoning.as_deref(), Some("kite visible"));
    }

    #[tokio::test]
    async fn score_segment_degrades_on_garbled_reply() {
        let script = BackendScript::new().respond(BackendRole::Vlm, "I cannot rate this.");
        let session = session_for(script);
        let video = manifest(120, 2);
        let segment = TimeRange::from_ms(0, 60_000).unwrap();
        let score = score_segment(
            &session,
            &Budgets::default(),
            &EnhancedQuery::bare("kite?"),
            segment,
            &video,
        )
        .await
        .unwrap();
        assert_eq!(score.score, 1);
        assert!(score.reasoning.is_none());
    }

    #[tokio::test]
    async fn score_segment_drops_reasoning_for_score_one() {
        let script = BackendScript::new().respond(
            BackendRole::Vlm,
            r#"{"relevance_score": 1, "clip_caption": "street", "reasoning": "nothing here"}"#,
        );
        let session = session_for(script);
        let video = manifest(120, 2);
        let segment = TimeRange::from_ms(0, 60_000).unwrap();
        let score = score_segment(
            &session,
            &Budgets::default(),
            &EnhancedQuery::bare("kite?"),
            segment,
            &video,
        )
        .await
        .unwrap();
        assert_eq!(score.score, 1);
        assert!(score.reasoning.is_none());
        assert_eq!(score.clip_caption, "street");
    }

    /// Ten-minute video, ten segments; keyed replies plant high scores on
    /// three of them and the rest fall through to the catch-all score 1.
    #[tokio::test]
    async fn vlm_ground_filters_and_sorts() {
        let script = BackendScript::new()
            .respond_when(
                BackendRole::Vlm,
                "00:03:0",
                r#"{"relevance_score": 4, "clip_caption": "seg3", "reasoning": "direct answer"}"#,
            )
            .respond_when(
                BackendRole::Vlm,
                "00:07:0",
                r#"{"relevance_score": 3, "clip_caption": "seg7", "reasoning": "close"}"#,
            )
            .respond_when(
                BackendRole::Vlm,
                "00:09:0",
                r#"{"relevance_score": 2, "clip_caption": "seg9", "reasoning": "maybe"}"#,
            )
            .respond_when(
                BackendRole::Vlm,
                "",
                r#"{"relevance_score": 1, "clip_caption": "dull", "reasoning": null}"#,
            );
        let session = session_for(script);
        let video = manifest(600, 2);
        let kept = vlm_ground(
            &session,
            &Budgets::default(),
            &EnhancedQuery::bare("kite?"),
            &video,
        )
        .await
        .unwrap();
        assert_eq!(kept.len(), 3);
        assert_eq!(kept[0].score, 4);
        assert_eq!(kept[0].range.start.as_secs(), 180);
        assert_eq!(kept[1].score, 3);
        assert_eq!(kept[1].range.start.as_secs(), 420);
        assert_eq!(kept[2].score, 2);
        assert_eq!(kept[2].range.start.as_secs(), 540);
    }

    #[tokio::test]
    async fn vlm_ground_breaks_score_ties_by_earlier_start() {
        let script = BackendScript::new()
            .respond_when(
                BackendRole::Vlm,
                "00:02:0",
                r#"{"relevance_score": 3, "clip_caption": "later", "reasoning": "r"}"#,
            )
            .respond_when(
                BackendRole::Vlm,
                "00:00:0",
                r#"{"relevance_score": 3, "clip_caption": "earlier", "reasoning": "r"}"#,
            )
            .respond_when(BackendRole::Vlm, "", r#"{"relevance_score": 1, "clip_caption": ""}"#);
        let session = session_for(script);
        let video = manifest(180, 2);
        let kept = vlm_ground(
            &session,
            &Budgets::default(),
            &EnhancedQuery::bare("kite?"),
            &video,
        )
        .await
        .unwrap();
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].clip_caption, "earlier");
        assert_eq!(kept[1].clip_caption, "later");
    }

    #[tokio::test]
    async fn clip_retrieve_ranks_by_similarity() {
        // One window's frames carry a planted embedding aligned with the
        // query; every other frame gets the hash fallback.
        let script = BackendScript::new()
            .with_embedding_dim(4)
            .embed_needle("kite in the sky", vec![1.0, 0.0, 0.0, 0.0])
            .embed_needle("000040.jpg", vec![1.0, 0.0, 0.0, 0.0])
            .embed_needle("000045.jpg", vec![1.0, 0.0, 0.0, 0.0]);
        let session = session_for(script);
        let video = manifest(120, 5);
        let mut budgets = Budgets::default();
        budgets.clip_top_k = 3;
        let clips = clip_retrieve(&session, &budgets, "kite in the sky", &video)
            .await
            .unwrap();
        assert_eq!(clips.len(), 3);
        assert_eq!(clips[0].range.start.as_secs(), 40);
        assert!((clips[0].similarity - 1.0).abs() < 1e-5);
        assert!(clips[0].similarity > clips[1].similarity);
    }

    #[tokio::test]
    async fn clip_retrieve_breaks_ties_by_earlier_window() {
        // Every frame embeds to the same planted vector, so every window
        // ties at similarity 1 and ordering falls back to start time.
        let script = BackendScript::new()
            .with_embedding_dim(4)
            .embed_needle("", vec![0.0, 1.0, 0.0, 0.0]);
        let session = session_for(script);
        let video = manifest(60, 5);
        let mut budgets = Budgets::default();
        budgets.clip_top_k = 4;
        let clips = clip_retrieve(&session, &budgets, "anything", &video)
            .await
            .unwrap();
        assert_eq!(clips.len(), 4);
        let starts: Vec<_> = clips.iter().map(|c| c.range.start.as_secs()).collect();
        assert_eq!(starts, vec![0, 10, 20, 30]);
    }

    #[tokio::test]
    async fn run_grounding_finish_on_first_turn() {
        let script = BackendScript::new().respond(
            BackendRole::Vlm,
            r#"{"tool": "finish", "args": {"answer": "The kite is red."}}"#,
        );
        let session = session_for(script);
        let video = manifest(120, 2);
        let result = run_grounding(&session, &Budgets::default(), "", &question(), &video)
            .await
            .unwrap();
        assert_eq!(result.segments, GroundingSegments::None);
        assert_eq!(result.report, "The kite is red.");
    }

    #[tokio::test]
    async fn run_grounding_analysis_then_scoring_then_finish() {
        let script = BackendScript::new()
            .respond(BackendRole::Vlm, ANALYSIS_REPLY)
            .respond(
                BackendRole::Vlm,
                r#"{"tool": "vlm_scoring_tool", "args": {}}"#,
            )
            .respond_when(
                BackendRole::Vlm,
                "00:01:02",
                r#"{"relevance_score": 4, "clip_caption": "the kite", "reasoning": "seen"}"#,
            )
            .respond_when(
                BackendRole::Vlm,
                "Relevance score",
                r#"{"relevance_score": 1, "clip_caption": "nothing"}"#,
            )
            .respond_when(
                BackendRole::Vlm,
                "Segment scoring kept",
                r#"{"tool": "finish", "args": {"answer": "Kite shown around 00:01:00."}}"#,
            );
        let session = session_for(script);
        let video = manifest(180, 2);
        let result = run_grounding(&session, &Budgets::default(), "", &question(), &video)
            .await
            .unwrap();
        match &result.segments {
            GroundingSegments::Scored(scores) => {
                assert_eq!(scores.len(), 1);
                assert_eq!(scores[0].score, 4);
                assert_eq!(scores[0].range.start.as_secs(), 60);
            }
            other => panic!("expected scored segments, got {other:?}"),
        }
        assert_eq!(result.report, "Kite shown around 00:01:00.");
    }

    #[tokio::test]
    async fn run_grounding_tool_loop_exceeded() {
        // The model only ever re-sends its analysis and never calls a tool.
        let script = BackendScript::new().respond_when(BackendRole::Vlm, "", ANALYSIS_REPLY);
        let session = session_for(script);
        let video = manifest(120, 2);
        let mut budgets = Budgets::default();
        budgets.tool_calls_per_agent = 3;
        let err = run_grounding(&session, &budgets, "", &question(), &video)
            .await
            .unwrap_err();
        assert!(matches!(err, GroundingError::ToolLoopExceeded { limit: 3 }));
        assert_eq!(session.exchanges().await.len(), 3);
    }

    #[tokio::test]
    async fn run_grounding_two_garbled_replies_fail() {
        let script = BackendScript::new().respond_when(BackendRole::Vlm, "", "word salad");
        let session = session_for(script);
        let video = manifest(120, 2);
        let err = run_grounding(&session, &Budgets::default(), "", &question(), &video)
            .await
            .unwrap_err();
        assert!(matches!(err, GroundingError::ParseFailure(_)));
        assert_eq!(session.exchanges().await.len(), 2);
    }

    #[tokio::test]
    async fn run_grounding_unknown_tool_gets_corrective_reply() {
        let script = BackendScript::new()
            .respond(BackendRole::Vlm, r#"{"tool": "teleport", "args": {}}"#)
            .respond_when(
                BackendRole::Vlm,
                "Unknown tool",
                r#"{"tool": "finish", "args": {"answer": "done"}}"#,
            );
        let session = session_for(script);
        let video = manifest(120, 2);
        let result = run_grounding(&session, &Budgets::default(), "", &question(), &video)
            .await
            .unwrap();
        assert_eq!(result.report, "done");
    }

    #[test]
    fn scored_report_formatting() {
        let scores = vec![SegmentScore {
            range: TimeRange::from_ms(60_000, 120_000).unwrap(),
            score: 4,
            clip_caption: "the kite".into(),
            reasoning: Some("clearly visible".into()),
        }];
        let text = format_scored(&scores);
        assert!(text.contains("[00:01:00 - 00:02:00] score 4: the kite (clearly visible)"));
        assert!(format_scored(&[]).contains("kept no segments"));
    }
}
