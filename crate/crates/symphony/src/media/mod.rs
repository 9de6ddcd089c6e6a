//! Offline video access: frame manifests on disk, timeline sampling and
//! subtitle tracks. Nothing in here talks to a model backend.

mod manifest;
mod sampling;
mod subtitles;

pub use manifest::{load_frame_bytes, load_manifest, write_manifest, Frame, FrameManifest, MediaError};
pub use sampling::{clip_windows, partition_segments, sample_fps, sample_uniform, thin_uniform};
pub use subtitles::{parse_subtitles, render_cues, render_subtitles, SubtitleCue, SubtitleTrack};
