//! Command-line front end: single questions, standalone grounding, majority
//! voting, benchmark runs and frame extraction.
//!
//! Exit codes: 0 on success, 1 when an episode or run fails, 2 for usage and
//! configuration problems (bad flags, unreadable config, missing manifest).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use symphony::agents::grounding::{run_grounding, GroundingSegments};
use symphony::bench::{
    read_items, read_lvbench, render_summary, run_bench, vote_ask, BenchOptions,
};
use symphony::config::load_config;
use symphony::gateway::{
    BackendScript, GatewayConfig, HttpTransport, ModelGateway, ScriptedTransport,
};
use symphony::media::{
    load_manifest, parse_subtitles, write_manifest, Frame, FrameManifest, SubtitleTrack,
};
use symphony::orchestrator::run_episode;
use symphony::types::{Answer, Budgets, Question, Timecode};

/// Multi-agent question answering over long videos.
#[derive(Parser)]
#[command(name = "symphony", version)]
struct Cli {
    /// TOML file overriding backend endpoints, models and limits.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// JSON script that answers every model call offline.
    #[arg(long, global = true, value_name = "PATH")]
    backend_script: Option<PathBuf>,

    /// Emit machine-readable JSON on stdout instead of prose.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Answer one question about one indexed video.
    Ask(AskArgs),
    /// Run the temporal grounding agent on its own and print its report.
    Ground(GroundArgs),
    /// Answer through several independent episodes and a majority vote.
    Vote(VoteArgs),
    /// Evaluate a JSON-Lines dataset and write a report.
    Bench(BenchArgs),
    /// Index a video file into a frame directory (requires ffmpeg).
    Extract(ExtractArgs),
}

#[derive(Args)]
struct QuestionArgs {
    /// Video directory holding manifest.json and its frames.
    #[arg(long, value_name = "DIR")]
    video: PathBuf,

    /// Question text.
    #[arg(long, value_name = "TEXT")]
    question: String,

    /// Answer option as LABEL=TEXT; repeat per option. Omit all for an
    /// open-ended question.
    #[arg(long = "option", value_name = "LABEL=TEXT")]
    options: Vec<String>,

    /// Subtitle file (.srt or .vtt).
    #[arg(long, value_name = "PATH")]
    subtitles: Option<PathBuf>,

    /// Directory episode logs are written to.
    #[arg(long, value_name = "DIR", default_value = "logs")]
    log_dir: PathBuf,
}

#[derive(Args)]
struct AskArgs {
    #[command(flatten)]
    common: QuestionArgs,

    /// Identifier for the episode and its log file.
    #[arg(long, value_name = "ID", default_value = "ask")]
    episode_id: String,
}

#[derive(Args)]
struct GroundArgs {
    /// Video directory holding manifest.json and its frames.
    #[arg(long, value_name = "DIR")]
    video: PathBuf,

    /// What to look for.
    #[arg(long, value_name = "TEXT")]
    query: String,
}

#[derive(Args)]
struct VoteArgs {
    #[command(flatten)]
    common: QuestionArgs,

    /// Number of parallel episodes; must be odd.
    #[arg(long, default_value_t = 3)]
    k: usize,
}

#[derive(Args)]
struct BenchArgs {
    /// JSON-Lines dataset of benchmark items.
    #[arg(long, value_name = "PATH")]
    dataset: PathBuf,

    /// Parse the dataset in the LVBench layout instead of the native one.
    #[arg(long)]
    lvbench: bool,

    /// Directory holding one subdirectory per video id.
    #[arg(long, value_name = "DIR")]
    videos_root: PathBuf,

    /// Where the ledger, episode logs and report land.
    #[arg(long, value_name = "DIR", default_value = "logs")]
    log_dir: PathBuf,

    /// Episodes allowed to run at once.
    #[arg(long, default_value_t = 4)]
    jobs: usize,
}

#[derive(Args)]
struct ExtractArgs {
    /// Source video file.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,

    /// Output video directory (manifest.json plus frames).
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,

    /// Frames sampled per second.
    #[arg(long, default_value_t = 1.0)]
    fps: f64,

    /// Video id stored in the manifest; defaults to the input file stem.
    #[arg(long, value_name = "ID")]
    video_id: Option<String>,
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    fn run(message: impl Into<String>) -> Self {
        CliError { code: 1, message: message.into() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: starting async runtime: {e}");
            return ExitCode::from(2);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

async fn run(cli: Cli) -> Result<(), CliError> {
    let Cli { config, backend_script, json, command } = cli;
    let command = match command {
        Cmd::Extract(args) => return extract(&args),
        other => other,
    };

    let gateway_config = match &config {
        Some(path) => {
            load_config(path).map_err(|e| CliError::usage(format!("loading config: {e}")))?
        }
        None => GatewayConfig::default(),
    };
    let mut budgets = Budgets::default();
    budgets.frame_cap = gateway_config.frame_cap;
    let gateway = build_gateway(backend_script.as_deref(), gateway_config)?;

    match command {
        Cmd::Ask(args) => ask(&gateway, &budgets, &args, json).await,
        Cmd::Ground(args) => ground(&gateway, &budgets, &args, json).await,
        Cmd::Vote(args) => vote(&gateway, &budgets, &args, json).await,
        Cmd::Bench(args) => bench(&gateway, &budgets, &args, json).await,
        Cmd::Extract(_) => unreachable!("handled before gateway construction"),
    }
}

fn build_gateway(script: Option<&Path>, config: GatewayConfig) -> Result<ModelGateway, CliError> {
    match script {
        Some(path) => {
            let script = BackendScript::from_file(path)
                .map_err(|e| CliError::usage(format!("loading backend script: {e}")))?;
            Ok(ModelGateway::new(Arc::new(ScriptedTransport::new(script)), config))
        }
        None => {
            let transport = HttpTransport::new(config.roles.clone());
            Ok(ModelGateway::new(Arc::new(transport), config))
        }
    }
}

fn build_question(text: &str, raw_options: &[String]) -> Result<Question, CliError> {
    if raw_options.is_empty() {
        return Ok(Question::open("q-cli", text));
    }
    let mut pairs = Vec::new();
    for raw in raw_options {
        let Some((label, body)) = raw.split_once('=') else {
            return Err(CliError::usage(format!("option {raw:?} is not in LABEL=TEXT form")));
        };
        pairs.push((label.trim().to_string(), body.trim().to_string()));
    }
    let refs: Vec<(&str, &str)> = pairs.iter().map(|(l, t)| (l.as_str(), t.as_str())).collect();
    Ok(Question::multiple_choice("q-cli", text, &refs))
}

fn load_video(dir: &Path) -> Result<Arc<FrameManifest>, CliError> {
    load_manifest(dir)
        .map(Arc::new)
        .map_err(|e| CliError::usage(format!("loading video {}: {e}", dir.display())))
}

fn read_subtitle_track(path: Option<&Path>) -> Result<Arc<SubtitleTrack>, CliError> {
    let Some(path) = path else {
        return Ok(Arc::new(SubtitleTrack::empty()));
    };
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("reading subtitles {}: {e}", path.display())))?;
    parse_subtitles(&raw)
        .map(Arc::new)
        .map_err(|e| CliError::usage(format!("parsing subtitles {}: {e}", path.display())))
}

/// The headline line of an answer: the option label when there is one, the
/// free text otherwise.
fn headline(answer: &Answer) -> &str {
    match &answer.choice_label {
        Some(label) => label,
        None => &answer.free_text,
    }
}

async fn ask(
    gateway: &ModelGateway,
    budgets: &Budgets,
    args: &AskArgs,
    json: bool,
) -> Result<(), CliError> {
    let question = build_question(&args.common.question, &args.common.options)?;
    let video = load_video(&args.common.video)?;
    let subtitles = read_subtitle_track(args.common.subtitles.as_deref())?;
    let session = gateway.session();

    match run_episode(&session, budgets, args.episode_id.clone(), question, video, subtitles).await
    {
        Ok(outcome) => {
            let log_path = outcome
                .log
                .write_to(&args.common.log_dir)
                .map_err(|e| CliError::run(format!("writing episode log: {e}")))?;
            if json {
                let payload = serde_json::json!({
                    "answer": outcome.answer,
                    "attempts_used": outcome.attempts_used,
                    "verdicts": outcome.verdicts,
                    "log_path": log_path,
                });
                println!("{}", serde_json::to_string_pretty(&payload).expect("payload serializes"));
            } else {
                println!("{}", headline(&outcome.answer));
                if let Some(note) = &outcome.answer.confidence_note {
                    println!("note: {note}");
                }
                println!("attempts: {}", outcome.attempts_used);
                println!("log: {}", log_path.display());
            }
            Ok(())
        }
        Err(aborted) => {
            let mut message = format!("episode aborted: {}", aborted.reason);
            if let Ok(path) = aborted.log.write_to(&args.common.log_dir) {
                message.push_str(&format!(" (log: {})", path.display()));
            }
            Err(CliError::run(message))
        }
    }
}

async fn ground(
    gateway: &ModelGateway,
    budgets: &Budgets,
    args: &GroundArgs,
    json: bool,
) -> Result<(), CliError> {
    let video = load_video(&args.video)?;
    let question = Question::open("q-ground", &args.query);
    let session = gateway.session();
    let result = run_grounding(&session, budgets, "", &question, &video)
        .await
        .map_err(|e| CliError::run(format!("grounding failed: {e}")))?;

    if json {
        println!("{}", serde_json::to_string_pretty(&result).expect("result serializes"));
        return Ok(());
    }
    println!("{}", result.report);
    match &result.segments {
        GroundingSegments::None => {}
        GroundingSegments::Scored(scores) => {
            for s in scores {
                println!("  {} score {} {}", s.range, s.score, s.clip_caption);
            }
        }
        GroundingSegments::Retrieved(clips) => {
            for c in clips {
                println!("  {} similarity {:.3}", c.range, c.similarity);
            }
        }
    }
    Ok(())
}

async fn vote(
    gateway: &ModelGateway,
    budgets: &Budgets,
    args: &VoteArgs,
    json: bool,
) -> Result<(), CliError> {
    if args.k == 0 || args.k % 2 == 0 {
        return Err(CliError::usage(format!("--k must be odd and at least 1, got {}", args.k)));
    }
    let question = build_question(&args.common.question, &args.common.options)?;
    let video = load_video(&args.common.video)?;
    let subtitles = read_subtitle_track(args.common.subtitles.as_deref())?;

    let outcome = vote_ask(gateway, budgets, args.k, "vote", &question, &video, &subtitles)
        .await
        .map_err(|e| CliError::run(format!("vote failed: {e}")))?;

    let mut log_paths = Vec::new();
    for log in &outcome.logs {
        let path = log
            .write_to(&args.common.log_dir)
            .map_err(|e| CliError::run(format!("writing episode log: {e}")))?;
        log_paths.push(path);
    }

    if json {
        let payload = serde_json::json!({
            "answer": outcome.answer,
            "votes": outcome.votes,
            "no_majority": outcome.no_majority,
            "log_paths": log_paths,
        });
        println!("{}", serde_json::to_string_pretty(&payload).expect("payload serializes"));
        return Ok(());
    }
    println!("{}", headline(&outcome.answer));
    println!("votes: {}", outcome.votes.join(", "));
    if outcome.no_majority {
        println!("note: no strict majority; keeping the earliest answer with the top count");
    }
    for path in &log_paths {
        println!("log: {}", path.display());
    }
    Ok(())
}

async fn bench(
    gateway: &ModelGateway,
    budgets: &Budgets,
    args: &BenchArgs,
    json: bool,
) -> Result<(), CliError> {
    let items = if args.lvbench { read_lvbench(&args.dataset) } else { read_items(&args.dataset) }
        .map_err(|e| CliError::usage(format!("reading dataset: {e}")))?;
    let options = BenchOptions {
        videos_root: args.videos_root.clone(),
        log_dir: args.log_dir.clone(),
        jobs: args.jobs,
    };
    let report = run_bench(gateway, budgets, &items, &options)
        .await
        .map_err(|e| CliError::run(format!("benchmark run failed: {e}")))?;

    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print!("{}", render_summary(&report));
        println!("report: {}", options.log_dir.join("report.json").display());
    }
    Ok(())
}

/// Decodes frames with ffmpeg at a fixed rate and writes the manifest beside
/// them. Frame `i` of the output is stamped `i / fps` seconds; the duration
/// comes from ffprobe.
fn extract(args: &ExtractArgs) -> Result<(), CliError> {
    if args.fps <= 0.0 || args.fps > 60.0 {
        return Err(CliError::usage(format!("--fps must be in (0, 60], got {}", args.fps)));
    }
    if !args.input.is_file() {
        return Err(CliError::usage(format!("input {} is not a file", args.input.display())));
    }
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::usage(format!("creating {}: {e}", args.out_dir.display())))?;

    let probe = std::process::Command::new("ffprobe")
        .args(["-v", "error", "-show_entries", "format=duration"])
        .args(["-of", "default=noprint_wrappers=1:nokey=1"])
        .arg(&args.input)
        .output()
        .map_err(|e| CliError::usage(format!("running ffprobe: {e}")))?;
    if !probe.status.success() {
        let detail = String::from_utf8_lossy(&probe.stderr);
        return Err(CliError::run(format!("ffprobe failed: {}", detail.trim())));
    }
    let duration_s: f64 = String::from_utf8_lossy(&probe.stdout)
        .trim()
        .parse()
        .map_err(|e| CliError::run(format!("unreadable ffprobe duration: {e}")))?;
    let duration_ms = (duration_s * 1000.0).round() as u64;

    let pattern = args.out_dir.join("frame-%09d.jpg");
    let status = std::process::Command::new("ffmpeg")
        .args(["-hide_banner", "-loglevel", "error", "-y", "-i"])
        .arg(&args.input)
        .args(["-vf", &format!("fps={}", args.fps), "-q:v", "2"])
        .arg(&pattern)
        .status()
        .map_err(|e| CliError::usage(format!("running ffmpeg: {e}")))?;
    if !status.success() {
        return Err(CliError::run("ffmpeg failed".to_string()));
    }

    let mut files: Vec<PathBuf> = std::fs::read_dir(&args.out_dir)
        .map_err(|e| CliError::run(format!("listing {}: {e}", args.out_dir.display())))?
        .filter_map(|entry| entry.ok())
        .map(|entry| entry.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame-") && n.ends_with(".jpg"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::run("ffmpeg produced no frames".to_string()));
    }

    let frames: Vec<Frame> = files
        .into_iter()
        .enumerate()
        .map(|(i, path)| Frame {
            at: Timecode::from_ms((i as f64 * 1000.0 / args.fps).round() as u64),
            path,
        })
        .filter(|f| f.at.as_ms() < duration_ms)
        .collect();
    let video_id = args.video_id.clone().unwrap_or_else(|| {
        args.input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "video".to_string())
    });
    let manifest = FrameManifest::new(video_id, Timecode::from_ms(duration_ms), frames)
        .map_err(|e| CliError::run(format!("assembling manifest: {e}")))?;
    write_manifest(&args.out_dir, &manifest)
        .map_err(|e| CliError::run(format!("writing manifest: {e}")))?;

    println!("indexed {} frames into {}", manifest.frames().len(), args.out_dir.display());
    Ok(())
}
