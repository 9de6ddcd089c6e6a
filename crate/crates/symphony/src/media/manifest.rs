//! Frame index for one pre-extracted video.
//!
//! A video directory holds `manifest.json` plus one image file per sampled
//! frame, named by its millisecond timestamp (`48000.jpg`). The manifest is
//! the source of truth; image bytes are only read when a request needs them.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::types::Timecode;

/// Largest frame dimensions sent to a vision backend.
const MAX_FRAME_WIDTH: u32 = 1280;
const MAX_FRAME_HEIGHT: u32 = 720;

#[derive(Debug, thiserror::Error)]
pub enum MediaError {
    #[error("no manifest.json in {0}")]
    MissingManifest(PathBuf),
    #[error("manifest lists no frames")]
    EmptyFrameSet,
    #[error("frame at {at} lies beyond video duration {duration}")]
    TimestampBeyondDuration { at: Timecode, duration: Timecode },
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("malformed subtitle file: {0}")]
    MalformedSubtitleFile(String),
    #[error("frame image {path}: {reason}")]
    FrameUnreadable { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One indexed frame: where it sits on the timeline and where its bytes live.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub at: Timecode,
    pub path: PathBuf,
}

/// Sorted frame index for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameManifest {
    pub video_id: String,
    pub duration: Timecode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_fps: Option<f64>,
    frames: Vec<Frame>,
}

impl FrameManifest {
    /// Builds a manifest from already-known frames, enforcing the same
    /// invariants as a disk load: at least one frame, strictly increasing
    /// timestamps, nothing past the duration.
    pub fn new(
        video_id: impl Into<String>,
        duration: Timecode,
        mut frames: Vec<Frame>,
    ) -> Result<Self, MediaError> {
        if frames.is_empty() {
            return Err(MediaError::EmptyFrameSet);
        }
        frames.sort_by_key(|f| f.at);
        for pair in frames.windows(2) {
            if pair[0].at == pair[1].at {
                return Err(MediaError::MalformedManifest(format!(
                    "duplicate frame timestamp {}",
                    pair[0].at
                )));
            }
        }
        if let Some(last) = frames.last() {
            if last.at.as_ms() >= duration.as_ms() {
                return Err(MediaError::TimestampBeyondDuration { at: last.at, duration });
            }
        }
        Ok(FrameManifest { video_id: video_id.into(), duration, source_fps: None, frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    /// Frames with `start <= at < end`, as a slice of the sorted index.
    pub fn frames_in(&self, range: crate::types::TimeRange) -> &[Frame] {
        let lo = self.frames.partition_point(|f| f.at < range.start);
        let hi = self.frames.partition_point(|f| f.at < range.end);
        &self.frames[lo..hi]
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    schema_version: u32,
    video_id: String,
    duration_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_fps: Option<f64>,
    frames: Vec<ManifestFrame>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFrame {
    ms: u64,
    file: String,
}

/// Reads `manifest.json` from a video directory and resolves frame paths
/// against it.
pub fn load_manifest(dir: &Path) -> Result<FrameManifest, MediaError> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.is_file() {
        return Err(MediaError::MissingManifest(dir.to_path_buf()));
    }
    let raw = std::fs::read_to_string(&manifest_path)?;
    let parsed: ManifestFile =
        serde_json::from_str(&raw).map_err(|e| MediaError::MalformedManifest(e.to_string()))?;
    if parsed.schema_version != 1 {
        return Err(MediaError::MalformedManifest(format!(
            "unsupported schema_version {}",
            parsed.schema_version
        )));
    }
    let frames = parsed
        .frames
        .into_iter()
        .map(|f| Frame { at: Timecode::from_ms(f.ms), path: dir.join(f.file) })
        .collect();
    let mut manifest =
        FrameManifest::new(parsed.video_id, Timecode::from_ms(parsed.duration_ms), frames)?;
    manifest.source_fps = parsed.source_fps;
    Ok(manifest)
}

/// Writes a manifest back out in the on-disk layout, with frame paths made
/// relative to `dir`. Used by the extraction helper.
pub fn write_manifest(dir: &Path, manifest: &FrameManifest) -> Result<(), MediaError> {
    let frames = manifest
        .frames()
        .iter()
        .map(|f| ManifestFrame {
            ms: f.at.as_ms(),
            file: f
                .path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        })
        .collect();
    let file = ManifestFile {
        schema_version: 1,
        video_id: manifest.video_id.clone(),
        duration_ms: manifest.duration.as_ms(),
        source_fps: manifest.source_fps,
        frames,
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| MediaError::MalformedManifest(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

/// Reads one frame image, downscaling to fit 1280x720 when the stored file is
/// larger. Files already within bounds pass through byte for byte, which keeps
/// request bodies stable for fixtures.
pub fn load_frame_bytes(path: &Path) -> Result<(Vec<u8>, &'static str), MediaError> {
    let bytes = std::fs::read(path).map_err(|e| MediaError::FrameUnreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let format = image::guess_format(&bytes).map_err(|e| MediaError::FrameUnreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mime = match format {
        image::ImageFormat::Png => "image/png",
        _ => "image/jpeg",
    };
    let decoded = image::load_from_memory(&bytes).map_err(|e| MediaError::FrameUnreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if decoded.width() <= MAX_FRAME_WIDTH && decoded.height() <= MAX_FRAME_HEIGHT {
        return Ok((bytes, mime));
    }
    let resized = decoded.resize(
        MAX_FRAME_WIDTH,
        MAX_FRAME_HEIGHT,
        image::imageops::FilterType::Triangle,
    );
    let mut out = Vec::new();
    resized
        .to_rgb8()
        .write_to(&mut Cursor::new(&mut out), image::ImageFormat::Jpeg)
        .map_err(|e| MediaError::FrameUnreadable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    Ok((out, "image/jpeg"))
}
