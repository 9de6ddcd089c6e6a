//! Gateway settings from a TOML file.
//!
//! Each `[roles.<name>]` table overrides only the fields it names; everything
//! else keeps the built-in default for that role. Role names are `planner`,
//! `reflector`, `subtitle_llm`, `vlm` and `embedder`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::gateway::{BackendRole, GatewayConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(String),
    #[error("unknown role {0:?}; expected planner, reflector, subtitle_llm, vlm or embedder")]
    UnknownRole(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    frame_cap: Option<usize>,
    max_attempts: Option<usize>,
    #[serde(default)]
    roles: BTreeMap<String, RoleOverride>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoleOverride {
    endpoint_url: Option<String>,
    model_name: Option<String>,
    api_key_env: Option<String>,
    max_concurrency: Option<usize>,
    timeout_s: Option<u64>,
    temperature: Option<f32>,
    max_tokens: Option<u32>,
}

pub fn load_config(path: &Path) -> Result<GatewayConfig, ConfigError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.to_path_buf(), source: e })?;
    parse_config(&raw)
}

pub fn parse_config(raw: &str) -> Result<GatewayConfig, ConfigError> {
    let file: FileConfig = toml::from_str(raw).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let mut config = GatewayConfig::default();
    if let Some(cap) = file.frame_cap {
        config.frame_cap = cap;
    }
    if let Some(attempts) = file.max_attempts {
        config.max_attempts = attempts;
    }
    for (name, over) in file.roles {
        let role = role_by_name(&name).ok_or(ConfigError::UnknownRole(name))?;
        let entry = config.roles.get_mut(&role).expect("defaults cover every role");
        if let Some(v) = over.endpoint_url {
            entry.endpoint_url = v;
        }
        if let Some(v) = over.model_name {
            entry.model_name = v;
        }
        if let Some(v) = over.api_key_env {
            entry.api_key_env = Some(v);
        }
        if let Some(v) = over.max_concurrency {
            entry.max_concurrency = v;
        }
        if let Some(v) = over.timeout_s {
            entry.timeout_s = v;
        }
        if let Some(v) = over.temperature {
            entry.temperature = v;
        }
        if let Some(v) = over.max_tokens {
            entry.max_tokens = Some(v);
        }
    }
    Ok(config)
}

fn role_by_name(name: &str) -> Option<BackendRole> {
    Some(match name {
        "planner" => BackendRole::Planner,
        "reflector" => BackendRole::Reflector,
        "subtitle_llm" => BackendRole::SubtitleLlm,
        "vlm" => BackendRole::Vlm,
        "embedder" => BackendRole::Embedder,
        _ => return None,
    })
}
