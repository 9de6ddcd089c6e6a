//! Durable record of one episode.
//!
//! Logs hold no wall-clock fields, so two runs over the same script produce
//! byte-identical files. That property is what makes replay debugging and
//! golden-file testing workable.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gateway::{BackendRole, RoleTokens};
use crate::orchestrator::ReflectionVerdict;
use crate::types::{Answer, Critique, Question, TrajectoryStep};

pub const EPISODE_LOG_SCHEMA_VERSION: u32 = 1;

/// Everything one episode did, in the order it did it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub schema_version: u32,
    pub episode_id: String,
    pub question: Question,
    pub steps: Vec<TrajectoryStep>,
    pub critiques: Vec<Critique>,
    /// Step count at the moment each critique was appended; pairs with
    /// `critiques` by index.
    pub critique_positions: Vec<usize>,
    pub verdicts: Vec<ReflectionVerdict>,
    pub attempts_used: usize,
    /// Absent when the episode aborted before producing an answer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<Answer>,
    pub token_totals: BTreeMap<BackendRole, RoleTokens>,
}

impl EpisodeLog {
    /// Stable pretty-printed form; key order is fixed by the struct.
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("episode log serializes")
    }

    /// Writes `<dir>/<episode_id>.json`, creating the directory if needed.
    pub fn write_to(&self, dir: &Path) -> io::Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.json", self.episode_id));
        fs::write(&path, self.to_json_pretty())?;
        Ok(path)
    }

    pub fn read_from(path: &Path) -> io::Result<Self> {
        let raw = fs::read_to_string(path)?;
        serde_json::from_str(&raw).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}
