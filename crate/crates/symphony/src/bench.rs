//! Benchmark evaluation and majority voting over independent episodes.
//!
//! A dataset is JSON-Lines of [`BenchItem`]. Runs are resumable: every
//! finished item is appended to `ledger.jsonl` under the log directory, and a
//! rerun skips items already recorded there, so accuracy does not depend on
//! where a run was interrupted.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tracing::warn;

use crate::episode_log::EpisodeLog;
use crate::gateway::{BackendRole, GatewaySession, ModelGateway, RoleTokens};
use crate::media::{load_manifest, parse_subtitles, FrameManifest, SubtitleTrack};
use crate::orchestrator::run_episode;
use crate::types::{Answer, Budgets, Question, QuestionOption};

pub const BENCH_REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("reading dataset {path}: {source}")]
    DatasetIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset line {line}: {detail}")]
    MalformedItem { line: usize, detail: String },
    #[error("ledger line {line}: {detail}")]
    MalformedLedger { line: usize, detail: String },
    #[error("vote count must be odd, got {0}")]
    EvenVoteCount(usize),
    #[error("vote count must be at least 1")]
    ZeroVoteCount,
    #[error("every voting instance aborted")]
    AllInstancesAborted,
    #[error("log dir {path}: {source}")]
    LogDirIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One benchmark question: which video it is about, the question itself, and
/// the gold option label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchItem {
    pub video_id: String,
    pub question: Question,
    pub answer_label: String,
    /// Subtitle file for the video, resolved against the videos root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtitle_path: Option<PathBuf>,
}

/// How one item went. Also the ledger line format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemOutcome {
    pub question_id: String,
    pub video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<String>,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// True when this outcome was replayed from the ledger instead of run.
    #[serde(default)]
    pub from_ledger: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub total: usize,
    pub correct: usize,
    pub overall_accuracy: f64,
    pub per_category: BTreeMap<String, CategoryStats>,
    /// Per-item outcomes, sorted by question id.
    pub items: Vec<ItemOutcome>,
    /// Token usage of episodes run by this invocation; ledger replays add
    /// nothing here.
    pub token_totals: BTreeMap<BackendRole, RoleTokens>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    /// Directory holding one subdirectory per video id.
    pub videos_root: PathBuf,
    /// Where the ledger, episode logs and report land.
    pub log_dir: PathBuf,
    /// Episodes allowed to run at once.
    pub jobs: usize,
}

/// Reads a JSON-Lines dataset of [`BenchItem`] records.
pub fn read_items(path: &Path) -> Result<Vec<BenchItem>, BenchError> {
    let raw = read_dataset(path)?;
    let mut items = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: BenchItem = serde_json::from_str(line)
            .map_err(|e| BenchError::MalformedItem { line: idx + 1, detail: e.to_string() })?;
        check_item(&item, &mut seen).map_err(|detail| BenchError::MalformedItem {
            line: idx + 1,
            detail,
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Reads a JSON-Lines file in the LVBench layout: one record per video with a
/// `key`, and a `qa` list whose questions carry their options inline as
/// `(A) ...` lines.
pub fn read_lvbench(path: &Path) -> Result<Vec<BenchItem>, BenchError> {
    #[derive(Deserialize)]
    struct Record {
        key: String,
        qa: Vec<Qa>,
    }
    #[derive(Deserialize)]
    struct Qa {
        uid: serde_json::Value,
        question: String,
        answer: String,
        #[serde(default)]
        question_type: Vec<String>,
    }

    let raw = read_dataset(path)?;
    let mut items = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line)
            .map_err(|e| BenchError::MalformedItem { line: idx + 1, detail: e.to_string() })?;
        for qa in record.qa {
            let (text, options) = split_inline_options(&qa.question);
            let id = match qa.uid {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            let item = BenchItem {
                video_id: record.key.clone(),
                question: Question {
                    id,
                    text,
                    options,
                    category: qa.question_type.first().cloned(),
                },
                answer_label: qa.answer.trim().to_string(),
                subtitle_path: None,
            };
            check_item(&item, &mut seen).map_err(|detail| BenchError::MalformedItem {
                line: idx + 1,
                detail,
            })?;
            items.push(item);
        }
    }
    Ok(items)
}

fn read_dataset(path: &Path) -> Result<String, BenchError> {
    std::fs::read_to_string(path)
        .map_err(|e| BenchError::DatasetIo { path: path.to_path_buf(), source: e })
}

fn check_item(item: &BenchItem, seen: &mut BTreeSet<String>) -> Result<(), String> {
    if item.question.options.is_empty() {
        return Err(format!("question {:?} has no options", item.question.id));
    }
    if !item.question.options.iter().any(|o| o.label == item.answer_label) {
        return Err(format!(
            "answer label {:?} is not among the option labels of question {:?}",
            item.answer_label, item.question.id
        ));
    }
    if !seen.insert(item.question.id.clone()) {
        return Err(format!("duplicate question id {:?}", item.question.id));
    }
    Ok(())
}

/// Splits a question whose option lines are embedded in the text. Lines after
/// the first option line that are not options themselves continue the previous
/// option.
fn split_inline_options(question: &str) -> (String, Vec<QuestionOption>) {
    let mut text_lines: Vec<&str> = Vec::new();
    let mut options: Vec<QuestionOption> = Vec::new();
    for line in question.lines() {
        if let Some(option) = parse_option_line(line) {
            options.push(option);
        } else if let Some(last) = options.last_mut() {
            last.text.push(' ');
            last.text.push_str(line.trim());
        } else {
            text_lines.push(line);
        }
    }
    (text_lines.join("\n").trim().to_string(), options)
}

fn parse_option_line(line: &str) -> Option<QuestionOption> {
    let rest = line.trim().strip_prefix('(')?;
    let mut chars = rest.chars();
    let label = chars.next().filter(char::is_ascii_uppercase)?;
    let text = chars.as_str().strip_prefix(')')?;
    Some(QuestionOption { label: label.to_string(), text: text.trim().to_string() })
}

/// The result of a majority vote across independent episodes.
#[derive(Debug, Clone)]
pub struct VoteOutcome {
    /// Answer of the winning instance.
    pub answer: Answer,
    /// Vote cast by each completed instance, in launch order.
    pub votes: Vec<String>,
    /// True when no vote reached a strict majority and the winner is simply
    /// the earliest instance with a maximal count.
    pub no_majority: bool,
    /// Logs of every launched instance, aborted ones included.
    pub logs: Vec<EpisodeLog>,
}

/// Index of the winning vote, plus whether the win fell short of a strict
/// majority. The winner is the earliest vote among those with maximal count.
/// `votes` must be non-empty.
pub fn majority_pick(votes: &[String]) -> (usize, bool) {
    assert!(!votes.is_empty(), "majority_pick needs at least one vote");
    let count_of = |needle: &str| votes.iter().filter(|v| v.as_str() == needle).count();
    let mut winner = 0;
    let mut winner_count = count_of(&votes[0]);
    for (idx, vote) in votes.iter().enumerate().skip(1) {
        let count = count_of(vote);
        if count > winner_count {
            winner = idx;
            winner_count = count;
        }
    }
    (winner, winner_count * 2 <= votes.len())
}

/// Which vote an answer casts: its option label when one was chosen,
/// otherwise the free text normalized for comparison.
fn vote_key(answer: &Answer) -> String {
    match &answer.choice_label {
        Some(label) => label.clone(),
        None => answer.free_text.trim().to_lowercase(),
    }
}

/// Runs `k` independent episodes of the same question concurrently and picks
/// the majority answer. Aborted instances are excluded from the vote; the run
/// fails only if every instance aborts. `k` must be odd so a clean sweep is
/// always possible.
pub async fn vote_ask(
    gateway: &ModelGateway,
    budgets: &Budgets,
    k: usize,
    episode_prefix: &str,
    question: &Question,
    video: &Arc<FrameManifest>,
    subtitles: &Arc<SubtitleTrack>,
) -> Result<VoteOutcome, BenchError> {
    vote_ask_with(|_| gateway.session(), budgets, k, episode_prefix, question, video, subtitles)
        .await
}

/// [`vote_ask`] with one session per instance supplied by the caller, which
/// keeps scripted instances independent of each other.
pub async fn vote_ask_with<F>(
    make_session: F,
    budgets: &Budgets,
    k: usize,
    episode_prefix: &str,
    question: &Question,
    video: &Arc<FrameManifest>,
    subtitles: &Arc<SubtitleTrack>,
) -> Result<VoteOutcome, BenchError>
where
    F: Fn(usize) -> GatewaySession,
{
    if k == 0 {
        return Err(BenchError::ZeroVoteCount);
    }
    if k % 2 == 0 {
        return Err(BenchError::EvenVoteCount(k));
    }
    let runs = (0..k).map(|i| {
        let session = make_session(i);
        let question = question.clone();
        let video = Arc::clone(video);
        let subtitles = Arc::clone(subtitles);
        let episode_id = format!("{episode_prefix}-v{}", i + 1);
        async move { run_episode(&session, budgets, episode_id, question, video, subtitles).await }
    });
    let results = futures::future::join_all(runs).await;

    let mut completed = Vec::new();
    let mut logs = Vec::new();
    for result in results {
        match result {
            Ok(outcome) => {
                logs.push(outcome.log.clone());
                completed.push(outcome);
            }
            Err(aborted) => {
                warn!(reason = %aborted.reason, id = %aborted.log.episode_id,
                    "voting instance aborted; excluding it");
                logs.push(aborted.log);
            }
        }
    }
    if completed.is_empty() {
        return Err(BenchError::AllInstancesAborted);
    }
    let votes: Vec<String> = completed.iter().map(|o| vote_key(&o.answer)).collect();
    let (winner, no_majority) = majority_pick(&votes);
    let answer = completed.swap_remove(winner).answer;
    Ok(VoteOutcome { answer, votes, no_majority, logs })
}

/// Runs a dataset through independent episodes, at most `jobs` at a time, and
/// assembles a report. Items already in the ledger are replayed, not re-run;
/// fresh outcomes are appended to the ledger as they finish. The report is
/// also written to `report.json` under the log directory.
pub async fn run_bench(
    gateway: &ModelGateway,
    budgets: &Budgets,
    items: &[BenchItem],
    options: &BenchOptions,
) -> Result<BenchReport, BenchError> {
    let started = Instant::now();
    std::fs::create_dir_all(&options.log_dir)
        .map_err(|e| BenchError::LogDirIo { path: options.log_dir.clone(), source: e })?;
    let ledger_path = options.log_dir.join("ledger.jsonl");
    let done = read_ledger(&ledger_path)?;
    let ledger = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&ledger_path)
        .map_err(|e| BenchError::LogDirIo { path: ledger_path.clone(), source: e })?;
    let ledger = Arc::new(std::sync::Mutex::new(ledger));

    let episodes_dir = options.log_dir.join("episodes");
    let limiter = Arc::new(Semaphore::new(options.jobs.max(1)));
    let mut outcomes: Vec<ItemOutcome> = Vec::new();
    let mut pending = Vec::new();
    for item in items {
        if let Some(prior) = done.get(&item.question.id) {
            let mut replay = prior.clone();
            replay.from_ledger = true;
            outcomes.push(replay);
            continue;
        }
        let gateway = gateway.clone();
        let budgets = budgets.clone();
        let item = item.clone();
        let videos_root = options.videos_root.clone();
        let episodes_dir = episodes_dir.clone();
        let ledger = Arc::clone(&ledger);
        let limiter = Arc::clone(&limiter);
        let fallback = blank_outcome(&item);
        let handle = tokio::spawn(async move {
            let _permit = limiter.acquire_owned().await.expect("limiter stays open");
            let (outcome, tokens) =
                run_item(&gateway, &budgets, &item, &videos_root, &episodes_dir).await;
            append_ledger_line(&ledger, &outcome);
            (outcome, tokens)
        });
        pending.push((fallback, handle));
    }

    let mut token_totals: BTreeMap<BackendRole, RoleTokens> = BTreeMap::new();
    for (fallback, handle) in pending {
        match handle.await {
            Ok((outcome, tokens)) => {
                for (role, t) in tokens {
                    let slot = token_totals.entry(role).or_default();
                    slot.prompt_tokens += t.prompt_tokens;
                    slot.completion_tokens += t.completion_tokens;
                    slot.calls += t.calls;
                }
                outcomes.push(outcome);
            }
            Err(e) => {
                let mut outcome = fallback;
                outcome.error = Some(format!("episode task failed: {e}"));
                outcomes.push(outcome);
            }
        }
    }
    outcomes.sort_by(|a, b| a.question_id.cmp(&b.question_id));

    let total = outcomes.len();
    let correct = outcomes.iter().filter(|o| o.correct).count();
    let mut per_category: BTreeMap<String, CategoryStats> = BTreeMap::new();
    for outcome in &outcomes {
        let key = outcome.category.clone().unwrap_or_else(|| "uncategorized".to_string());
        let stats = per_category
            .entry(key)
            .or_insert(CategoryStats { total: 0, correct: 0, accuracy: 0.0 });
        stats.total += 1;
        if outcome.correct {
            stats.correct += 1;
        }
    }
    for stats in per_category.values_mut() {
        stats.accuracy = ratio(stats.correct, stats.total);
    }
    let report = BenchReport {
        schema_version: BENCH_REPORT_SCHEMA_VERSION,
        total,
        correct,
        overall_accuracy: ratio(correct, total),
        per_category,
        items: outcomes,
        token_totals,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    let report_path = options.log_dir.join("report.json");
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&report_path, json)
        .map_err(|e| BenchError::LogDirIo { path: report_path, source: e })?;
    Ok(report)
}

/// One-screen summary of a report for terminal output.
pub fn render_summary(report: &BenchReport) -> String {
    let mut out = format!(
        "{}/{} correct, accuracy {:.3}\n",
        report.correct, report.total, report.overall_accuracy
    );
    for (category, stats) in &report.per_category {
        out.push_str(&format!(
            "  {category}: {}/{} ({:.3})\n",
            stats.correct, stats.total, stats.accuracy
        ));
    }
    for (role, tokens) in &report.token_totals {
        out.push_str(&format!(
            "  {role}: {} calls, {} prompt + {} completion tokens\n",
            tokens.calls, tokens.prompt_tokens, tokens.completion_tokens
        ));
    }
    out.push_str(&format!("  wall time {:.1}s\n", report.wall_time_s));
    out
}

fn ratio(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

fn blank_outcome(item: &BenchItem) -> ItemOutcome {
    ItemOutcome {
        question_id: item.question.id.clone(),
        video_id: item.video_id.clone(),
        category: item.question.category.clone(),
        gold: item.answer_label.clone(),
        predicted: None,
        correct: false,
        error: None,
        from_ledger: false,
    }
}

async fn run_item(
    gateway: &ModelGateway,
    budgets: &Budgets,
    item: &BenchItem,
    videos_root: &Path,
    episodes_dir: &Path,
) -> (ItemOutcome, BTreeMap<BackendRole, RoleTokens>) {
    let mut outcome = blank_outcome(item);
    let video = match load_manifest(&videos_root.join(&item.video_id)) {
        Ok(manifest) => Arc::new(manifest),
        Err(e) => {
            outcome.error = Some(format!("loading video: {e}"));
            return (outcome, BTreeMap::new());
        }
    };
    let subtitles = match load_subtitles(item, videos_root) {
        Ok(track) => Arc::new(track),
        Err(detail) => {
            outcome.error = Some(detail);
            return (outcome, BTreeMap::new());
        }
    };
    let session = gateway.session();
    match run_episode(
        &session,
        budgets,
        item.question.id.clone(),
        item.question.clone(),
        video,
        subtitles,
    )
    .await
    {
        Ok(episode) => {
            write_log(&episode.log, episodes_dir);
            let predicted = episode
                .answer
                .choice_label
                .clone()
                .unwrap_or_else(|| episode.answer.free_text.trim().to_string());
            outcome.correct = predicted == item.answer_label;
            outcome.predicted = Some(predicted);
            (outcome, episode.log.token_totals)
        }
        Err(aborted) => {
            write_log(&aborted.log, episodes_dir);
            outcome.error = Some(aborted.reason);
            (outcome, aborted.log.token_totals)
        }
    }
}

fn load_subtitles(item: &BenchItem, videos_root: &Path) -> Result<SubtitleTrack, String> {
    let Some(rel) = &item.subtitle_path else {
        return Ok(SubtitleTrack::empty());
    };
    let path = videos_root.join(rel);
    let raw = std::fs::read_to_string(&path)
        .map_err(|e| format!("reading subtitles {}: {e}", path.display()))?;
    parse_subtitles(&raw).map_err(|e| format!("parsing subtitles {}: {e}", path.display()))
}

fn write_log(log: &EpisodeLog, episodes_dir: &Path) {
    if let Err(e) = log.write_to(episodes_dir) {
        warn!(error = %e, id = %log.episode_id, "could not write episode log");
    }
}

fn read_ledger(path: &Path) -> Result<BTreeMap<String, ItemOutcome>, BenchError> {
    let raw = match std::fs::read_to_string(path) {
        Ok(raw) => raw,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
        Err(e) => return Err(BenchError::LogDirIo { path: path.to_path_buf(), source: e }),
    };
    let mut done = BTreeMap::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let outcome: ItemOutcome = serde_json::from_str(line)
            .map_err(|e| BenchError::MalformedLedger { line: idx + 1, detail: e.to_string() })?;
        done.insert(outcome.question_id.clone(), outcome);
    }
    Ok(done)
}

fn append_ledger_line(ledger: &Arc<std::sync::Mutex<std::fs::File>>, outcome: &ItemOutcome) {
    let line = serde_json::to_string(outcome).expect("outcome serializes");
    let mut file = ledger.lock().expect("ledger lock");
    if let Err(e) = writeln!(file, "{line}").and_then(|()| file.flush()) {
        warn!(error = %e, id = %outcome.question_id, "could not append to ledger");
    }
}
