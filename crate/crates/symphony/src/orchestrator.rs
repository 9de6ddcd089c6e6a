//! The planning and reflection loop that runs one episode.
//!
//! An episode is a bounded search: up to `reflection_rounds` attempts, each
//! made of at most `inner_rounds` planning steps followed by a proposed
//! answer and a reflection verdict on it. A credible verdict ends the
//! episode; a non-credible one becomes a critique the next attempt can read
//! in its history. When every attempt is spent the last proposal ships
//! anyway, marked low confidence.
//!
//! Agent failures are contained: a grounding or perception run that errors
//! out becomes a `tool error:` observation and planning continues. Only the
//! planner or reflector backends failing outright aborts the episode, and
//! even then the partial log rides along in the error.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::warn;

use crate::agents::{grounding, perception, subtitle};
use crate::episode_log::{EpisodeLog, EPISODE_LOG_SCHEMA_VERSION};
use crate::gateway::{extract_json, BackendRole, ChatMessage, GatewayError, GatewaySession};
use crate::media::{FrameManifest, SubtitleTrack};
use crate::prompts;
use crate::types::{
    AgentAction, AgentKind, Answer, Budgets, Critique, EpisodeState, Observation,
    ObservationArtifacts, Question, Trajectory,
};

/// Confidence note attached when every reflection attempt rejected the
/// answer and the last proposal shipped regardless.
pub const LOW_CONFIDENCE_NOTE: &str =
    "low confidence: the reflection budget ran out without a credible verdict";

#[derive(Debug, thiserror::Error)]
pub enum EpisodeError {
    /// The planner produced no usable JSON, even after a corrective
    /// reprompt.
    #[error("planner output held no usable JSON after a reprompt: {0:?}")]
    PlanningParseFailure(String),
    /// No option label could be pulled out of the final reply.
    #[error("no option label found in the final reply: {0:?}")]
    AnswerExtractionFailure(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// A failed episode still carries everything it did up to the failure.
#[derive(Debug, thiserror::Error)]
#[error("episode aborted: {reason}")]
pub struct EpisodeAborted {
    pub reason: String,
    pub log: EpisodeLog,
}

/// What the reflector thought of one proposed answer. `comment` is `None`
/// exactly when the verdict is credible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionVerdict {
    pub credible: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
}

/// A finished episode: the answer plus the full record behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub answer: Answer,
    pub attempts_used: usize,
    pub verdicts: Vec<ReflectionVerdict>,
    pub log: EpisodeLog,
}

/// Runs one full episode over the given question and video.
pub async fn run_episode(
    session: &GatewaySession,
    budgets: &Budgets,
    episode_id: impl Into<String>,
    question: Question,
    video: Arc<FrameManifest>,
    subtitles: Arc<SubtitleTrack>,
) -> Result<EpisodeOutcome, EpisodeAborted> {
    let episode_id = episode_id.into();
    let mut state = EpisodeState::new(question, video, subtitles);
    if let Err(e) = budgets.validate() {
        return Err(abort(session, &episode_id, &state, &[], format!("invalid budgets: {e}")).await);
    }

    let mut verdicts: Vec<ReflectionVerdict> = Vec::new();
    let mut last_proposal: Option<Answer> = None;

    for attempt in 1..=budgets.reflection_rounds {
        for _ in 0..budgets.inner_rounds {
            let action = match plan_step(session, &state).await {
                Ok(a) => a,
                Err(e) => {
                    let reason = format!("planning failed on attempt {attempt}: {e}");
                    return Err(abort(session, &episode_id, &state, &verdicts, reason).await);
                }
            };
            if action.kind == AgentKind::Terminate {
                break;
            }
            let observation = dispatch_action(session, budgets, &state, &action).await;
            state.trajectory.push_step(action, observation);
        }

        let proposed = match finalize_answer(session, &state, &episode_id).await {
            Ok(a) => a,
            Err(e) => {
                let reason = format!("final answer extraction failed on attempt {attempt}: {e}");
                return Err(abort(session, &episode_id, &state, &verdicts, reason).await);
            }
        };
        let verdict = match reflect(session, &state, &proposed).await {
            Ok(v) => v,
            Err(e) => {
                let reason = format!("reflection failed on attempt {attempt}: {e}");
                return Err(abort(session, &episode_id, &state, &verdicts, reason).await);
            }
        };

        last_proposal = Some(proposed);
        let credible = verdict.credible;
        verdicts.push(verdict.clone());
        if credible {
            break;
        }
        state.trajectory.push_critique(Critique {
            comment: verdict
                .comment
                .unwrap_or_else(|| "the proposed answer was not credible".to_string()),
            attempt_index: attempt,
        });
    }

    let mut answer = last_proposal.expect("at least one attempt always runs");
    if !verdicts.last().map_or(false, |v| v.credible) {
        answer.confidence_note = Some(LOW_CONFIDENCE_NOTE.to_string());
    }
    let attempts_used = verdicts.len();
    let log = EpisodeLog {
        schema_version: EPISODE_LOG_SCHEMA_VERSION,
        episode_id,
        question: state.question.clone(),
        steps: state.trajectory.steps.clone(),
        critiques: state.trajectory.critiques.clone(),
        critique_positions: state.trajectory.critique_positions.clone(),
        verdicts: verdicts.clone(),
        attempts_used,
        answer: Some(answer.clone()),
        token_totals: session.token_totals().await,
    };
    Ok(EpisodeOutcome { answer, attempts_used, verdicts, log })
}

async fn abort(
    session: &GatewaySession,
    episode_id: &str,
    state: &EpisodeState,
    verdicts: &[ReflectionVerdict],
    reason: String,
) -> EpisodeAborted {
    warn!(episode_id, %reason, "aborting episode");
    EpisodeAborted {
        reason,
        log: EpisodeLog {
            schema_version: EPISODE_LOG_SCHEMA_VERSION,
            episode_id: episode_id.to_string(),
            question: state.question.clone(),
            steps: state.trajectory.steps.clone(),
            critiques: state.trajectory.critiques.clone(),
            critique_positions: state.trajectory.critique_positions.clone(),
            verdicts: verdicts.to_vec(),
            attempts_used: verdicts.len(),
            answer: None,
            token_totals: session.token_totals().await,
        },
    }
}

/// Renders the trajectory the way the planner and reflector see it, with
/// reflection feedback interleaved where it actually happened.
pub fn render_history(trajectory: &Trajectory) -> String {
    if trajectory.is_empty() {
        return String::new();
    }
    let mut sections: Vec<String> = Vec::new();
    let mut next_critique = 0;
    for idx in 0..=trajectory.steps.len() {
        while next_critique < trajectory.critiques.len()
            && trajectory.critique_positions[next_critique] == idx
        {
            let c = &trajectory.critiques[next_critique];
            sections.push(format!(
                "Reflection feedback (attempt {}): {}",
                c.attempt_index, c.comment
            ));
            next_critique += 1;
        }
        if let Some(step) = trajectory.steps.get(idx) {
            sections.push(format!(
                "Step {}: called {}\nInstruct: {}\nObservation: {}",
                idx + 1,
                step.action.kind.display_name(),
                step.action.instruct,
                step.observation.text
            ));
        }
    }
    format!("\n{}\n", sections.join("\n\n"))
}

fn planner_prompt(state: &EpisodeState) -> String {
    let question = state.question.render();
    let duration = state.video.duration.to_string();
    let history = render_history(&state.trajectory);
    prompts::fill(
        prompts::PLANNER,
        &[
            ("question", question.as_str()),
            ("duration", duration.as_str()),
            ("history_str", history.as_str()),
        ],
    )
}

/// Asks the planner for the next action.
///
/// A reply whose JSON names an unknown agent (or a real agent with no
/// instruct) gets one corrective reprompt; if the retry is no better the
/// attempt is forced to terminate rather than killed, since the evidence
/// gathered so far may still support an answer. A reply with no JSON at all
/// also gets one reprompt, but a second such reply is a hard failure.
pub async fn plan_step(
    session: &GatewaySession,
    state: &EpisodeState,
) -> Result<AgentAction, EpisodeError> {
    let mut messages = vec![ChatMessage::user(planner_prompt(state))];
    let reply = session.chat(BackendRole::Planner, &messages).await?;
    let (detail, no_json) = match parse_action(&reply) {
        ParsedAction::Action(action) => return Ok(action),
        ParsedAction::NoJson(d) => (d, true),
        ParsedAction::BadAgent(d) => (d, false),
    };
    messages.push(ChatMessage::assistant(reply));
    messages.push(ChatMessage::user(format!(
        "{detail} Reply with one JSON object holding \"reason\", \"agent\" and \"instruct\". \
         Valid agents are \"Grounding Agent\", \"Visual Perception Agent\", \"Subtitle Agent\" \
         and \"finish\"; any agent other than finish needs a non-empty instruct."
    )));
    let retry = session.chat(BackendRole::Planner, &messages).await?;
    match parse_action(&retry) {
        ParsedAction::Action(action) => Ok(action),
        _ if no_json => Err(EpisodeError::PlanningParseFailure(retry)),
        _ => {
            warn!("planner named no valid agent twice; forcing this attempt to terminate");
            Ok(AgentAction::terminate(
                "forced terminate: the planner could not name a valid agent",
            ))
        }
    }
}

enum ParsedAction {
    Action(AgentAction),
    /// JSON was there but named no usable agent.
    BadAgent(String),
    NoJson(String),
}

fn parse_action(reply: &str) -> ParsedAction {
    let value = match extract_json(reply) {
        Ok(v) => v,
        Err(e) => return ParsedAction::NoJson(e.to_string()),
    };
    let Some(agent) = value.get("agent").and_then(Value::as_str) else {
        return ParsedAction::BadAgent("The JSON object names no \"agent\".".to_string());
    };
    let instruct =
        value.get("instruct").and_then(Value::as_str).unwrap_or_default().trim().to_string();
    let reason =
        value.get("reason").and_then(Value::as_str).unwrap_or_default().trim().to_string();

    let lowered = agent.to_lowercase();
    let kind = if lowered.contains("ground") {
        AgentKind::Grounding
    } else if lowered.contains("visual") || lowered.contains("percep") {
        AgentKind::VisualPerception
    } else if lowered.contains("subtitle") {
        AgentKind::Subtitle
    } else if lowered.contains("finish") || lowered.contains("terminat") {
        AgentKind::Terminate
    } else {
        return ParsedAction::BadAgent(format!("Unknown agent {agent:?}."));
    };
    if kind != AgentKind::Terminate && instruct.is_empty() {
        return ParsedAction::BadAgent(format!("Agent {agent:?} was given no instruct."));
    }
    ParsedAction::Action(AgentAction { kind, instruct, reason })
}

/// Hands one action to its agent and folds whatever happens into an
/// observation. Agent errors do not escape; they become `tool error:` text
/// the planner can read and route around.
pub async fn dispatch_action(
    session: &GatewaySession,
    budgets: &Budgets,
    state: &EpisodeState,
    action: &AgentAction,
) -> Observation {
    let budget = budgets.observation_budget;
    match action.kind {
        AgentKind::Grounding => {
            match grounding::run_grounding(
                session,
                budgets,
                &action.instruct,
                &state.question,
                &state.video,
            )
            .await
            {
                Ok(result) => {
                    Observation::new(AgentKind::Grounding, result.report.clone(), budget)
                        .with_artifacts(ObservationArtifacts::Grounding(result))
                }
                Err(e) => tool_error(AgentKind::Grounding, &e, budget),
            }
        }
        AgentKind::VisualPerception => {
            match perception::run_perception(session, budgets, &action.instruct, &state.video)
                .await
            {
                Ok(report) => {
                    let mut obs =
                        Observation::new(AgentKind::VisualPerception, report.text, budget);
                    obs.truncated |= report.exhausted;
                    obs
                }
                Err(e) => tool_error(AgentKind::VisualPerception, &e, budget),
            }
        }
        AgentKind::Subtitle => {
            match subtitle::analyze_subtitles(
                session,
                budgets,
                &state.question,
                &state.subtitles,
                Some(state.video.duration),
            )
            .await
            {
                Ok(analysis) => Observation::new(AgentKind::Subtitle, analysis.render(), budget)
                    .with_artifacts(ObservationArtifacts::Subtitle(analysis)),
                Err(e) => tool_error(AgentKind::Subtitle, &e, budget),
            }
        }
        AgentKind::Terminate => {
            Observation::new(AgentKind::Terminate, "terminate".to_string(), budget)
        }
    }
}

fn tool_error(source: AgentKind, error: &dyn std::fmt::Display, budget: usize) -> Observation {
    warn!(agent = source.display_name(), %error, "agent run failed; continuing the episode");
    Observation::new(source, format!("tool error: {error}"), budget)
}

/// Asks the planner for its final answer over the full history.
///
/// Multiple-choice questions need a label. The first reply is scanned for a
/// standalone label token (last occurrence wins); failing that, one
/// reprompt listing the labels is made, whose reply may also match by
/// case-insensitive prefix. Open questions take the reply as is.
pub async fn finalize_answer(
    session: &GatewaySession,
    state: &EpisodeState,
    episode_id: &str,
) -> Result<Answer, EpisodeError> {
    let question = state.question.render();
    let duration = state.video.duration.to_string();
    let history = render_history(&state.trajectory);
    let prompt = prompts::fill(
        prompts::FINAL_ANSWER,
        &[
            ("question", question.as_str()),
            ("duration", duration.as_str()),
            ("history_str", history.as_str()),
        ],
    );
    let mut messages = vec![ChatMessage::user(prompt)];
    let reply = session.chat(BackendRole::Planner, &messages).await?.trim().to_string();

    let answer = |label: Option<String>, text: String| Answer {
        choice_label: label,
        free_text: text,
        confidence_note: None,
        trajectory_ref: episode_id.to_string(),
    };

    if !state.question.is_multiple_choice() {
        return Ok(answer(None, reply));
    }
    let labels: Vec<&str> = state.question.options.iter().map(|o| o.label.as_str()).collect();
    if let Some(label) = scan_label(&reply, &labels) {
        return Ok(answer(Some(label), reply));
    }

    messages.push(ChatMessage::assistant(reply));
    messages.push(ChatMessage::user(format!(
        "Your reply named no option label. Reply with exactly one of: {}.",
        labels.join(", ")
    )));
    let retry = session.chat(BackendRole::Planner, &messages).await?.trim().to_string();
    if let Some(label) = scan_label(&retry, &labels).or_else(|| prefix_label(&retry, &labels)) {
        return Ok(answer(Some(label), retry));
    }
    Err(EpisodeError::AnswerExtractionFailure(retry))
}

/// Finds the last standalone token equal to one of the labels,
/// case-sensitively. `"A or B? On balance B"` resolves to `B`.
fn scan_label(reply: &str, labels: &[&str]) -> Option<String> {
    let mut found = None;
    for token in reply.split(|c: char| !c.is_alphanumeric()) {
        if labels.contains(&token) {
            found = Some(token.to_string());
        }
    }
    found
}

/// Case-insensitive prefix match with a word boundary: `"c) the kitchen"`
/// resolves to `C`, but `"Because..."` does not resolve to `B`.
fn prefix_label(reply: &str, labels: &[&str]) -> Option<String> {
    let lowered = reply.trim().to_lowercase();
    let mut candidates: Vec<&&str> = labels.iter().collect();
    candidates.sort_by_key(|l| std::cmp::Reverse(l.len()));
    for label in candidates {
        if let Some(rest) = lowered.strip_prefix(&label.to_lowercase()) {
            if rest.chars().next().map_or(true, |c| !c.is_alphanumeric()) {
                return Some((*label).to_string());
            }
        }
    }
    None
}

/// Asks the reflector whether the proposed answer is credible.
///
/// An unparseable reflection reply is treated as a non-credible verdict,
/// not an error: the episode can still improve on the next attempt.
pub async fn reflect(
    session: &GatewaySession,
    state: &EpisodeState,
    proposed: &Answer,
) -> Result<ReflectionVerdict, GatewayError> {
    let question = state.question.render();
    let history = render_history(&state.trajectory).trim().to_string();
    let proposed_text = match &proposed.choice_label {
        Some(label) if proposed.free_text.trim() == label => label.clone(),
        Some(label) => format!("{label} ({})", proposed.free_text.trim()),
        None => proposed.free_text.trim().to_string(),
    };
    let prompt = prompts::fill(
        prompts::REFLECTOR,
        &[
            ("history", history.as_str()),
            ("question", question.as_str()),
            ("proposed_answer", proposed_text.as_str()),
        ],
    );
    let reply = session.chat(BackendRole::Reflector, &[ChatMessage::user(prompt)]).await?;
    Ok(parse_verdict(&reply))
}

fn parse_verdict(reply: &str) -> ReflectionVerdict {
    match extract_json(reply) {
        Ok(v) => match v.get("credible").and_then(Value::as_bool) {
            Some(true) => ReflectionVerdict { credible: true, comment: None },
            Some(false) => {
                let comment = v
                    .get("comment")
                    .and_then(Value::as_str)
                    .map(str::trim)
                    .filter(|s| !s.is_empty() && !s.eq_ignore_ascii_case("null"))
                    .unwrap_or("reflection gave no explanation")
                    .to_string();
                ReflectionVerdict { credible: false, comment: Some(comment) }
            }
            None => unparseable_verdict(reply),
        },
        Err(_) => unparseable_verdict(reply),
    }
}

fn unparseable_verdict(reply: &str) -> ReflectionVerdict {
    warn!(reply, "reflection output unparseable; treating the verdict as not credible");
    ReflectionVerdict {
        credible: false,
        comment: Some("reflection output unparseable".to_string()),
    }
}
