//! End-to-end checks over the crate's load-bearing guarantees, one test per
//! guarantee. Every test prints a `pass` or `fail` line through a drop guard,
//! so a run with `--nocapture` reads as a checklist and a panicking test
//! still reports its line.
//!
//! All model traffic is scripted; no test talks to a network. Checks that
//! compare against a reference result recompute that result independently
//! inside the test rather than trusting the crate's own arithmetic.

use std::cmp::Reverse;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use async_trait::async_trait;
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};

use symphony::agents::grounding::{clip_retrieve, vlm_ground, EnhancedQuery};
use symphony::bench::vote_ask_with;
use symphony::gateway::{
    build_chat_body, BackendRole, BackendScript, ChatMessage, DecodeParams, EmbedInput,
    GatewayConfig, GatewayError, GatewaySession, ModelGateway, ScriptedTransport, Transport,
    TransportReply, VisionFrame,
};
use symphony::media::{
    clip_windows, partition_segments, sample_fps, sample_uniform, thin_uniform, Frame,
    FrameManifest, SubtitleTrack,
};
use symphony::orchestrator::{run_episode, LOW_CONFIDENCE_NOTE};
use symphony::prompts;
use symphony::types::{AgentKind, Budgets, Question, Timecode, TimeRange};

/// Prints the checklist line for one test: `pass` if the test reached
/// `pass()`, `fail` if it unwound first.
struct Verdict {
    name: &'static str,
    passed: bool,
}

impl Verdict {
    fn start(name: &'static str) -> Self {
        Verdict { name, passed: false }
    }

    fn pass(mut self) {
        self.passed = true;
    }
}

impl Drop for Verdict {
    fn drop(&mut self) {
        println!("acceptance: {}: {}", self.name, if self.passed { "pass" } else { "fail" });
    }
}

const TERMINATE: &str =
    r#"{"reason": "the evidence is sufficient", "agent": "finish", "instruct": ""}"#;
const CREDIBLE: &str = r#"{"credible": true, "comment": null}"#;
const NOT_CREDIBLE: &str = r#"{"credible": false, "comment": "the timeline is still unclear"}"#;
const FINISH_GROUNDING: &str =
    r#"{"tool": "finish", "args": {"answer": "the red car passes at 00:00:40"}}"#;

fn manifest(duration_s: u64, step_ms: u64) -> Arc<FrameManifest> {
    let frames = (0..duration_s * 1000)
        .step_by(step_ms as usize)
        .map(|ms| Frame { at: Timecode::from_ms(ms), path: format!("{ms}.jpg").into() })
        .collect();
    Arc::new(FrameManifest::new("vid", Timecode::from_secs(duration_s), frames).unwrap())
}

fn no_subtitles() -> Arc<SubtitleTrack> {
    Arc::new(SubtitleTrack::empty())
}

#[tokio::test]
async fn episode_runs_planned_agents_in_order_and_replays_identically() {
    let verdict = Verdict::start("planner dispatches agents in order and a rerun is byte-identical");
    let started = Instant::now();

    let question = Question::multiple_choice(
        "q-pipeline",
        "What passes the camera?",
        &[("A", "a truck"), ("B", "a red car"), ("C", "a bicycle")],
    );
    let script = BackendScript::new()
        .respond(
            BackendRole::Planner,
            r#"{"reason": "locate the moment first", "agent": "Grounding Agent", "instruct": "find when the red car passes"}"#,
        )
        .respond(
            BackendRole::Planner,
            r#"{"reason": "inspect it closely", "agent": "Visual Perception Agent", "instruct": "describe what the red car does"}"#,
        )
        .respond(BackendRole::Planner, TERMINATE)
        .respond(BackendRole::Planner, "B")
        .respond(BackendRole::Vlm, FINISH_GROUNDING)
        .respond(BackendRole::Vlm, "[answer] a red car passes close to the camera")
        .respond(BackendRole::Reflector, CREDIBLE);

    let budgets = Budgets::default();
    let video = manifest(60, 1000);
    let mut runs = Vec::new();
    for _ in 0..2 {
        let session = ModelGateway::scripted(script.clone()).session();
        let outcome = run_episode(
            &session,
            &budgets,
            "pipeline-demo",
            question.clone(),
            video.clone(),
            no_subtitles(),
        )
        .await
        .expect("scripted episode completes");
        runs.push(outcome);
    }

    let first = &runs[0];
    assert_eq!(first.answer.choice_label.as_deref(), Some("B"));
    assert!(first.answer.confidence_note.is_none());
    assert_eq!(first.attempts_used, 1);
    assert_eq!(first.log.steps.len(), 2);
    assert_eq!(first.log.steps[0].action.kind, AgentKind::Grounding);
    assert_eq!(first.log.steps[1].action.kind, AgentKind::VisualPerception);
    assert_eq!(first.log.steps[0].observation.text, "the red car passes at 00:00:40");
    assert_eq!(first.log.steps[1].observation.text, "a red car passes close to the camera");
    assert_eq!(first.verdicts.len(), 1);
    assert!(first.verdicts[0].credible);
    assert_eq!(runs[0].log.to_json_pretty(), runs[1].log.to_json_pretty());
    assert!(started.elapsed().as_secs() < 5, "scripted episodes must finish in seconds");

    verdict.pass();
}

#[tokio::test]
async fn reflection_feedback_reaches_the_next_planning_attempt() {
    let verdict = Verdict::start("a rejected answer feeds its critique into the next attempt");

    let script = BackendScript::new()
        .respond(BackendRole::Planner, TERMINATE)
        .respond(BackendRole::Planner, "A")
        .respond(BackendRole::Planner, TERMINATE)
        .respond(BackendRole::Planner, "A")
        .respond(BackendRole::Reflector, r#"{"credible": false, "comment": "consider the ending"}"#)
        .respond(BackendRole::Reflector, CREDIBLE);
    let transport = Arc::new(ScriptedTransport::new(script));
    let gateway = ModelGateway::new(transport.clone(), GatewayConfig::default());
    let session = gateway.session();

    let question =
        Question::multiple_choice("q-reflect", "Does the dog come back?", &[("A", "yes"), ("B", "no")]);
    let outcome = run_episode(
        &session,
        &Budgets::default(),
        "reflect-demo",
        question,
        manifest(30, 1000),
        no_subtitles(),
    )
    .await
    .expect("scripted episode completes");

    assert_eq!(outcome.attempts_used, 2);
    let credibility: Vec<bool> = outcome.verdicts.iter().map(|v| v.credible).collect();
    assert_eq!(credibility, [false, true]);
    assert_eq!(outcome.log.critiques.len(), 1);
    assert_eq!(outcome.log.critiques[0].comment, "consider the ending");
    assert_eq!(outcome.log.critique_positions, [0]);
    assert!(outcome.answer.confidence_note.is_none());

    let planner_requests = transport.requests(BackendRole::Planner);
    assert_eq!(planner_requests.len(), 4);
    assert!(!planner_requests[0].contains("Reflection feedback"));
    assert!(!planner_requests[1].contains("Reflection feedback"));
    assert!(planner_requests[2].contains("Reflection feedback (attempt 1): consider the ending"));

    verdict.pass();
}

#[tokio::test]
async fn loop_budgets_bound_planner_calls_and_mark_low_confidence() {
    let verdict = Verdict::start("budgets cap the loop and an unvalidated answer ships marked");

    let script = BackendScript::new()
        .respond_when(
            BackendRole::Planner,
            "Call Agents in json format",
            r#"{"reason": "keep looking", "agent": "Grounding Agent", "instruct": "search the whole video again"}"#,
        )
        .respond_when(BackendRole::Planner, "", "C")
        .respond_when(BackendRole::Vlm, "", FINISH_GROUNDING)
        .respond_when(BackendRole::Reflector, "", NOT_CREDIBLE);
    let transport = Arc::new(ScriptedTransport::new(script));
    let gateway = ModelGateway::new(transport.clone(), GatewayConfig::default());
    let session = gateway.session();

    let budgets = Budgets::default();
    let question = Question::multiple_choice(
        "q-bounds",
        "Where does the chase end?",
        &[("A", "the docks"), ("B", "the market"), ("C", "the bridge"), ("D", "the station")],
    );
    let outcome = run_episode(
        &session,
        &budgets,
        "bounds-demo",
        question,
        manifest(30, 1000),
        no_subtitles(),
    )
    .await
    .expect("scripted episode completes");

    let per_attempt = budgets.inner_rounds + 1;
    assert_eq!(transport.calls(BackendRole::Planner), budgets.reflection_rounds * per_attempt);
    assert!(transport.calls(BackendRole::Planner) <= budgets.reflection_rounds * per_attempt + 1);
    assert_eq!(transport.calls(BackendRole::Reflector), budgets.reflection_rounds);
    assert_eq!(outcome.attempts_used, budgets.reflection_rounds);
    assert!(outcome.verdicts.iter().all(|v| !v.credible));
    assert_eq!(outcome.log.steps.len(), budgets.reflection_rounds * budgets.inner_rounds);
    assert_eq!(outcome.log.critique_positions, [15, 30, 45]);
    assert_eq!(outcome.answer.choice_label.as_deref(), Some("C"));
    assert_eq!(outcome.answer.confidence_note.as_deref(), Some(LOW_CONFIDENCE_NOTE));

    verdict.pass();
}

#[tokio::test]
async fn segment_scoring_keeps_and_orders_segments_like_the_reference_rule() {
    let verdict = Verdict::start("segment scoring filters and orders exactly as a direct recount does");

    let script = BackendScript::new()
        .respond_when(
            BackendRole::Vlm,
            "00:03:00",
            r#"{"relevance_score": 4, "clip_caption": "the red car passes", "reasoning": "matches the cue directly"}"#,
        )
        .respond_when(
            BackendRole::Vlm,
            "00:06:00",
            r#"{"relevance_score": 3, "clip_caption": "a car in the distance", "reasoning": "possibly related"}"#,
        )
        .respond_when(
            BackendRole::Vlm,
            "00:08:00",
            r#"{"relevance_score": 2, "clip_caption": "a street scene", "reasoning": "weak match"}"#,
        )
        .respond_when(
            BackendRole::Vlm,
            "",
            r#"{"relevance_score": 1, "clip_caption": "unrelated footage", "reasoning": null}"#,
        );
    let transport = Arc::new(ScriptedTransport::new(script));
    let gateway = ModelGateway::new(transport.clone(), GatewayConfig::default());
    let session = gateway.session();

    let budgets = Budgets::default();
    let video = manifest(600, 2000);
    let query = EnhancedQuery::bare("when does the red car pass?");
    let got = vlm_ground(&session, &budgets, &query, &video).await.expect("scoring completes");

    let segments = partition_segments(video.duration, budgets.segment_duration_s);
    assert_eq!(segments.len(), 10);
    let score_for = |segment: &TimeRange| match segment.start.as_secs() {
        180 => 4u8,
        360 => 3,
        480 => 2,
        _ => 1,
    };
    let mut expected: Vec<(TimeRange, u8)> = segments
        .iter()
        .map(|segment| (*segment, score_for(segment)))
        .filter(|(_, score)| *score >= budgets.score_keep_min)
        .collect();
    expected.sort_by_key(|(range, score)| (Reverse(*score), range.start.as_ms()));

    let got_pairs: Vec<(TimeRange, u8)> = got.iter().map(|s| (s.range, s.score)).collect();
    assert_eq!(got_pairs, expected);
    assert_eq!(got[0].clip_caption, "the red car passes");
    assert_eq!(got[0].reasoning.as_deref(), Some("matches the cue directly"));
    assert_eq!(transport.calls(BackendRole::Vlm), segments.len());

    verdict.pass();
}

#[tokio::test]
async fn segment_scoring_saturates_but_never_exceeds_the_concurrency_limit() {
    let verdict = Verdict::start("scoring fan-out reaches the concurrency limit and never passes it");

    let script = BackendScript::new().with_latency_ms(50).respond_when(
        BackendRole::Vlm,
        "",
        r#"{"relevance_score": 1, "clip_caption": "nothing here", "reasoning": null}"#,
    );
    let transport = Arc::new(ScriptedTransport::new(script));
    let gateway = ModelGateway::new(transport.clone(), GatewayConfig::default());
    let session = gateway.session();

    let budgets = Budgets::default();
    assert_eq!(budgets.scoring_concurrency, 20);
    let video = manifest(5400, 30_000);
    let kept = vlm_ground(&session, &budgets, &EnhancedQuery::bare("anything notable?"), &video)
        .await
        .expect("scoring completes");

    assert!(kept.is_empty(), "score-1 segments must all be dropped");
    assert_eq!(transport.calls(BackendRole::Vlm), 90);
    assert_eq!(transport.peak_in_flight(BackendRole::Vlm), budgets.scoring_concurrency);

    verdict.pass();
}

#[test]
fn sampling_partitions_cover_the_timeline_and_respect_caps() {
    let verdict = Verdict::start("timeline partitions tile exactly and samplers respect the frame cap");
    let started = Instant::now();

    let budgets = Budgets::default();
    assert!((budgets.scoring_fps() - 0.5).abs() < 1e-12);
    let two_minutes = manifest(120, 1000);
    let first_segment = TimeRange::from_ms(0, 60_000).unwrap();
    assert_eq!(
        sample_fps(first_segment, budgets.scoring_fps(), budgets.frame_cap, &two_minutes).len(),
        budgets.frames_per_segment,
    );

    let mut runner = TestRunner::new(ProptestConfig {
        cases: 1000,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    runner
        .run(
            &(1u64..1200, 1u64..180, proptest::sample::select(vec![0.2f64, 0.5, 1.0, 2.5])),
            |(duration_s, segment_s, fps)| {
                let frames: Vec<Frame> = (0..duration_s)
                    .map(|s| Frame { at: Timecode::from_secs(s), path: format!("{s}.jpg").into() })
                    .collect();
                let video =
                    FrameManifest::new("vid", Timecode::from_secs(duration_s), frames).unwrap();
                let duration = video.duration;

                let segments = partition_segments(duration, segment_s);
                prop_assert!(!segments.is_empty());
                prop_assert_eq!(segments[0].start, Timecode::ZERO);
                prop_assert_eq!(segments.last().unwrap().end, duration);
                for pair in segments.windows(2) {
                    prop_assert_eq!(pair[0].end, pair[1].start);
                    prop_assert_eq!(pair[0].len_ms(), segment_s * 1000);
                }
                // The last segment absorbs a trailing remainder below 5 s, so
                // it may run up to that much past the nominal length but never
                // degenerate into a sliver of its own.
                let nominal = segment_s * 1000;
                let last = segments.last().unwrap();
                prop_assert!(last.len_ms() < nominal + 5000);
                if segments.len() > 1 {
                    prop_assert!(last.len_ms() >= nominal.min(5000));
                }

                let whole = TimeRange::new(Timecode::ZERO, duration).unwrap();
                let cap = Budgets::default().frame_cap;
                prop_assert!(sample_fps(whole, fps, cap, &video).len() <= cap);
                prop_assert!(sample_uniform(whole, cap, &video).len() <= cap);
                prop_assert!(thin_uniform(video.frames().to_vec(), cap).len() <= cap);
                Ok(())
            },
        )
        .unwrap();

    assert!(started.elapsed().as_secs() < 10, "sampling checks must stay fast");
    verdict.pass();
}

#[tokio::test]
async fn retrieval_ranks_clip_windows_by_embedding_similarity() {
    let verdict = Verdict::start("clip retrieval ranks windows exactly as a direct recomputation does");

    let planted = vec![1.0f32, 0.0, 0.0, 0.0];
    let script = BackendScript::new()
        .embed_needle("find the red car", planted.clone())
        .embed_needle("120000.jpg", planted.clone())
        .embed_needle("125000.jpg", planted);
    let transport = Arc::new(ScriptedTransport::new(script));
    let gateway = ModelGateway::new(transport, GatewayConfig::default());
    let session = gateway.session();

    let budgets = Budgets::default();
    let video = manifest(300, 5000);
    let got = clip_retrieve(&session, &budgets, "find the red car", &video)
        .await
        .expect("retrieval completes");

    assert_eq!(got.len(), budgets.clip_top_k);
    assert_eq!(got[0].range, TimeRange::from_ms(120_000, 130_000).unwrap());
    assert!(got[0].similarity > 0.99, "the planted window must rank first with near-unit cosine");

    let expected = reference_ranking(&session, &budgets, "find the red car", &video).await;
    let got_order: Vec<TimeRange> = got.iter().map(|clip| clip.range).collect();
    assert_eq!(got_order.as_slice(), &expected[..budgets.clip_top_k]);

    verdict.pass();
}

/// Recomputes the retrieval ranking directly: per window, the normalised
/// mean of its frame embeddings, scored by dot product against the
/// normalised cue embedding, sorted best first with earlier windows winning
/// ties.
async fn reference_ranking(
    session: &GatewaySession,
    budgets: &Budgets,
    cue: &str,
    video: &FrameManifest,
) -> Vec<TimeRange> {
    let query = unit(session.embed_text(cue).await.unwrap());
    let mut ranked: Vec<(TimeRange, f32)> = Vec::new();
    for window in clip_windows(video.duration, budgets.clip_window_s) {
        let frames = video.frames_in(window);
        if frames.is_empty() {
            continue;
        }
        let mut vectors = Vec::new();
        for frame in frames {
            vectors.push(session.embed_image(&frame.path).await.unwrap());
        }
        let dim = vectors.iter().map(Vec::len).max().unwrap();
        let mut mean = vec![0.0f32; dim];
        for vector in &vectors {
            for (slot, x) in mean.iter_mut().zip(vector) {
                *slot += x;
            }
        }
        for slot in &mut mean {
            *slot /= vectors.len() as f32;
        }
        let mean = unit(mean);
        let similarity: f32 = query.iter().zip(&mean).map(|(a, b)| a * b).sum();
        ranked.push((window, similarity));
    }
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1).unwrap().then(a.0.start.as_ms().cmp(&b.0.start.as_ms()))
    });
    ranked.into_iter().map(|(window, _)| window).collect()
}

fn unit(mut v: Vec<f32>) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

#[tokio::test]
async fn vote_winner_matches_the_reference_count_for_every_triple() {
    let verdict = Verdict::start("three-instance voting picks the majority label or flags the tie");

    let labels = ["A", "B", "C"];
    let question = Question::multiple_choice(
        "q-vote",
        "Where does the chase end?",
        &[("A", "the docks"), ("B", "the market"), ("C", "the bridge")],
    );
    let video = manifest(30, 1000);
    let subtitles = no_subtitles();
    let budgets = Budgets::default();

    for a in labels {
        for b in labels {
            for c in labels {
                let votes = [a, b, c];
                let outcome = vote_ask_with(
                    |i| answering_gateway(votes[i]).session(),
                    &budgets,
                    3,
                    "triple",
                    &question,
                    &video,
                    &subtitles,
                )
                .await
                .expect("vote completes");

                let (expected_winner, expected_flag) = reference_majority(&votes);
                assert_eq!(outcome.votes, votes, "vote record for {votes:?}");
                assert_eq!(
                    outcome.answer.choice_label.as_deref(),
                    Some(expected_winner),
                    "winner for {votes:?}",
                );
                assert_eq!(outcome.no_majority, expected_flag, "majority flag for {votes:?}");
                assert_eq!(outcome.logs.len(), 3);
            }
        }
    }

    verdict.pass();
}

fn answering_gateway(label: &str) -> ModelGateway {
    let script = BackendScript::new()
        .respond_when(BackendRole::Planner, "Call Agents in json format", TERMINATE)
        .respond_when(BackendRole::Planner, "", label)
        .respond_when(BackendRole::Reflector, "", CREDIBLE);
    ModelGateway::scripted(script)
}

/// A label held by more than half the instances wins outright; otherwise the
/// first instance's label stands and the result is flagged.
fn reference_majority<'a>(votes: &[&'a str]) -> (&'a str, bool) {
    for candidate in votes {
        if votes.iter().filter(|v| *v == candidate).count() * 2 > votes.len() {
            return (candidate, false);
        }
    }
    (votes[0], true)
}

struct CapturingTransport {
    model: &'static str,
    bodies: Mutex<Vec<Vec<u8>>>,
}

#[async_trait]
impl Transport for CapturingTransport {
    async fn chat(
        &self,
        _role: BackendRole,
        messages: &[ChatMessage],
        params: &DecodeParams,
    ) -> Result<TransportReply, GatewayError> {
        let body = build_chat_body(self.model, messages, params)?;
        self.bodies.lock().unwrap().push(body);
        Ok(TransportReply { text: "ok".into(), prompt_tokens: None, completion_tokens: None })
    }

    async fn embed(&self, _input: &EmbedInput) -> Result<Vec<f32>, GatewayError> {
        Ok(vec![0.0; 4])
    }
}

#[tokio::test]
async fn request_bodies_match_the_checked_in_golden_files() {
    let verdict = Verdict::start("chat and vision request bodies match their golden files byte for byte");

    let chat_body = build_chat_body(
        "chat-model",
        &[
            ChatMessage::system("You answer questions about films."),
            ChatMessage::user("What happens right after the opening titles?"),
        ],
        &DecodeParams { temperature: 0.2, max_tokens: Some(512) },
    )
    .unwrap();
    golden_check("chat_request.json", &chat_body);

    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/frames");
    let frames = [
        VisionFrame::new(Timecode::from_secs(10), fixtures.join("000010000.png")),
        VisionFrame::new(Timecode::from_secs(0), fixtures.join("000000000.png")),
        VisionFrame::new(Timecode::from_secs(5), fixtures.join("000005000.png")),
    ];
    let transport =
        Arc::new(CapturingTransport { model: "vision-model", bodies: Mutex::new(Vec::new()) });
    let gateway = ModelGateway::new(transport.clone(), GatewayConfig::default());
    gateway
        .session()
        .vision_chat("Describe what changes across these frames.", &frames)
        .await
        .unwrap();

    let bodies = transport.bodies.lock().unwrap();
    assert_eq!(bodies.len(), 1);
    let vision_body = &bodies[0];

    let parsed: serde_json::Value = serde_json::from_slice(vision_body).unwrap();
    let parts = parsed["messages"][0]["content"].as_array().unwrap();
    let texts: Vec<&str> = parts.iter().filter_map(|p| p["text"].as_str()).collect();
    assert_eq!(
        texts,
        ["Describe what changes across these frames.", "00:00:00", "00:00:05", "00:00:10"],
        "frames must be announced in timestamp order regardless of input order",
    );
    let urls: Vec<&str> = parts.iter().filter_map(|p| p["image_url"]["url"].as_str()).collect();
    assert_eq!(urls.len(), 3);
    assert!(urls.iter().all(|u| u.starts_with("data:image/png;base64,")));
    golden_check("vision_request.json", vision_body);

    verdict.pass();
}

/// Compares `actual` to the named golden file. Set `GOLDEN_WRITE=1` to
/// rewrite the file instead of failing on drift.
fn golden_check(name: &str, actual: &[u8]) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("GOLDEN_WRITE").is_some() {
        std::fs::write(&path, actual).expect("write golden file");
    }
    let expected = std::fs::read(&path).unwrap_or_else(|e| {
        panic!("missing golden file {}: {e}; set GOLDEN_WRITE=1 to create it", path.display())
    });
    if expected != actual {
        panic!(
            "request body for {name} drifted from its golden file\nexpected: {}\nactual:   {}",
            String::from_utf8_lossy(&expected),
            String::from_utf8_lossy(actual),
        );
    }
}

#[test]
fn prompt_templates_render_with_their_anchor_lines_intact() {
    let verdict = Verdict::start("prompt templates substitute their slots and keep their anchor lines");

    let cases: [(&str, &[(&str, &str)], &str); 7] = [
        (
            prompts::PLANNER,
            &[("question", "What happens?"), ("duration", "00:10:00"), ("history_str", "none yet")],
            "Call Agents in json format",
        ),
        (
            prompts::REFLECTOR,
            &[("question", "What happens?"), ("history", "none yet"), ("proposed_answer", "B")],
            "respond strictly in the following JSON",
        ),
        (
            prompts::GROUNDING,
            &[("question", "What happens?"), ("duration", "00:10:00")],
            "Tool Selection based on Question Type",
        ),
        (
            prompts::PERCEPTION,
            &[("instruct", "inspect the chase scene")],
            "Call only one tool at a time",
        ),
        (
            prompts::SUBTITLE,
            &[("question", "What happens?"), ("subtitles", "1. start 00:00:01,000 hello")],
            "relevant_subtitle_info",
        ),
        (
            prompts::SCORING,
            &[("question", "What happens?"), ("scoring_instruction", "look for the car")],
            "Relevance score from 1 to 4",
        ),
        (
            prompts::FINAL_ANSWER,
            &[("question", "What happens?"), ("duration", "00:10:00"), ("history_str", "none yet")],
            "produce the final answer",
        ),
    ];
    for (template, values, anchor) in cases {
        let rendered = prompts::fill(template, values);
        assert!(rendered.contains(anchor), "anchor {anchor:?} missing after rendering");
        for (key, value) in values {
            assert!(rendered.contains(value), "slot value {value:?} missing");
            assert!(!rendered.contains(&format!("{{{key}}}")), "slot {{{key}}} left unfilled");
        }
    }

    verdict.pass();
}
