//! Multi-agent question answering over long videos.
//!
//! A planner model decides, step by step, which specialized agent to send
//! after evidence: temporal grounding to find the relevant minutes, visual
//! perception to inspect frames, or subtitle analysis for what was said.
//! Observations accumulate in a trajectory; a reflection model judges each
//! proposed answer and sends the planner back with a critique until the
//! answer holds up or the reflection budget runs out.
//!
//! Videos are consumed as pre-extracted frame directories described by a
//! `manifest.json`, so nothing here touches video codecs. All model traffic
//! goes through [`gateway::ModelGateway`], which serves either an
//! OpenAI-compatible HTTP backend or a deterministic scripted transport for
//! offline runs and tests.
//!
//! Entry points: [`orchestrator::run_episode`] for one question,
//! [`bench::vote_ask`] for majority voting across independent episodes, and
//! [`bench::run_bench`] for dataset evaluation.

pub mod agents;
pub mod bench;
pub mod config;
pub mod episode_log;
pub mod gateway;
pub mod media;
pub mod orchestrator;
pub mod prompts;
pub mod types;

pub use bench::{run_bench, vote_ask, BenchItem, BenchOptions, BenchReport};
pub use episode_log::EpisodeLog;
pub use gateway::{BackendRole, BackendScript, GatewayConfig, ModelGateway};
pub use media::{load_manifest, FrameManifest, SubtitleTrack};
pub use orchestrator::{run_episode, EpisodeAborted, EpisodeOutcome};
pub use types::{Answer, Budgets, Question, Timecode, TimeRange};
