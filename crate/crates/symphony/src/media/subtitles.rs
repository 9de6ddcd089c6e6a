//! SRT and WebVTT subtitle parsing plus the bracketed text rendering fed to
//! the subtitle analysis model.

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::media::MediaError;
use crate::types::{TimeRange, Timecode};

/// One subtitle line with its display interval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtitleCue {
    pub range: TimeRange,
    pub text: String,
}

/// All cues of one video, ordered by start time. May be empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtitleTrack {
    cues: Vec<SubtitleCue>,
}

impl SubtitleTrack {
    pub fn empty() -> Self {
        SubtitleTrack::default()
    }

    pub fn from_cues(mut cues: Vec<SubtitleCue>) -> Self {
        cues.sort_by_key(|c| c.range.start);
        SubtitleTrack { cues }
    }

    pub fn cues(&self) -> &[SubtitleCue] {
        &self.cues
    }

    pub fn is_empty(&self) -> bool {
        self.cues.is_empty()
    }

    pub fn len(&self) -> usize {
        self.cues.len()
    }
}

/// Parses subtitle file content, auto-detecting WebVTT by its header and
/// treating everything else as SRT. Cue text keeps its wording; internal line
/// breaks become single spaces. Zero-length cues are dropped with a warning.
pub fn parse_subtitles(content: &str) -> Result<SubtitleTrack, MediaError> {
    let content = content.trim_start_matches('\u{feff}');
    let is_vtt = content.trim_start().starts_with("WEBVTT");
    let mut cues = Vec::new();
    for block in content.replace("\r\n", "\n").split("\n\n") {
        let lines: Vec<&str> = block.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.is_empty() {
            continue;
        }
        if is_vtt && is_vtt_metadata(lines[0]) {
            continue;
        }
        let timing_idx = match lines.iter().position(|l| l.contains("-->")) {
            Some(i) if i <= 1 => i,
            Some(_) | None => {
                // SRT blocks are "counter, timing, text"; VTT allows an
                // optional cue identifier line before the timing.
                if is_vtt || lines.iter().all(|l| l.trim().chars().all(|c| c.is_ascii_digit())) {
                    continue;
                }
                return Err(MediaError::MalformedSubtitleFile(format!(
                    "block without timing line: {:?}",
                    lines[0]
                )));
            }
        };
        let (start, end) = parse_timing_line(lines[timing_idx])?;
        let text = lines[timing_idx + 1..].join(" ").trim().to_string();
        if start >= end {
            warn!(start = %Timecode::from_ms(start), end = %Timecode::from_ms(end), "dropping zero-length cue");
            continue;
        }
        cues.push(SubtitleCue {
            range: TimeRange::from_ms(start, end).expect("checked above"),
            text,
        });
    }
    Ok(SubtitleTrack::from_cues(cues))
}

fn is_vtt_metadata(first_line: &str) -> bool {
    let l = first_line.trim();
    l.starts_with("WEBVTT") || l.starts_with("NOTE") || l.starts_with("STYLE") || l.starts_with("REGION")
}

fn parse_timing_line(line: &str) -> Result<(u64, u64), MediaError> {
    let malformed =
        || MediaError::MalformedSubtitleFile(format!("bad timing line: {:?}", line.trim()));
    let mut sides = line.splitn(2, "-->");
    let start = sides.next().ok_or_else(malformed)?.trim();
    let rest = sides.next().ok_or_else(malformed)?.trim();
    // WebVTT may append cue settings after the end timestamp.
    let end = rest.split_whitespace().next().ok_or_else(malformed)?;
    Ok((parse_stamp(start).ok_or_else(malformed)?, parse_stamp(end).ok_or_else(malformed)?))
}

/// Parses `HH:MM:SS,mmm` / `HH:MM:SS.mmm`, with the hour field optional as
/// WebVTT permits and the millisecond part optional as some SRT files omit it.
fn parse_stamp(s: &str) -> Option<u64> {
    let (clock, ms) = match s.split_once([',', '.']) {
        Some((clock, ms_str)) => {
            if ms_str.is_empty() || ms_str.len() > 3 || !ms_str.bytes().all(|b| b.is_ascii_digit())
            {
                return None;
            }
            // "4" means 400 ms, "40" means 400 ms zero-padded on the right.
            let padded = format!("{ms_str:0<3}");
            (clock, padded.parse::<u64>().ok()?)
        }
        None => (s, 0),
    };
    let fields: Vec<&str> = clock.split(':').collect();
    let (h, m, sec) = match fields.as_slice() {
        [h, m, sec] => ((*h).to_string(), *m, *sec),
        [m, sec] => ("0".to_string(), *m, *sec),
        _ => return None,
    };
    if !h.bytes().all(|b| b.is_ascii_digit()) || m.len() != 2 || sec.len() != 2 {
        return None;
    }
    let hours: u64 = h.parse().ok()?;
    let minutes: u64 = m.parse().ok()?;
    let seconds: u64 = sec.parse().ok()?;
    if minutes >= 60 || seconds >= 60 || !m.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((hours * 3600 + minutes * 60 + seconds) * 1000 + ms)
}

/// Renders a track as one `[HH:MM:SS - HH:MM:SS]: text` line per cue.
pub fn render_subtitles(track: &SubtitleTrack) -> String {
    render_cues(track.cues())
}

/// Same rendering over a bare cue slice, for callers working on a window of
/// a track.
pub fn render_cues(cues: &[SubtitleCue]) -> String {
    cues.iter()
        .map(|c| format!("[{} - {}]: {}", c.range.start, c.range.end, c.text))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    const SRT: &str = "1\n00:00:01,000 --> 00:00:04,000\nWelcome back.\n\n2\n00:00:05,500 --> 00:00:08,200\nLet's begin\nthe tour.\n\n3\n00:01:00,000 --> 00:01:02,000\nThis way.\n";

    const VTT: &str = "WEBVTT\n\nNOTE generated for testing\n\nintro\n00:01.000 --> 00:04.000 align:start\nWelcome back.\n\n00:00:05.500 --> 00:00:08.200\nLet's begin the tour.\n";

    #[test]
    fn parses_srt_blocks_and_joins_multiline_text() {
        let track = parse_subtitles(SRT).unwrap();
        assert_eq!(track.len(), 3);
        assert_eq!(track.cues()[0].range.start.as_ms(), 1000);
        assert_eq!(track.cues()[0].range.end.as_ms(), 4000);
        assert_eq!(track.cues()[1].text, "Let's begin the tour.");
        assert_eq!(track.cues()[1].range.start.as_ms(), 5500);
    }

    #[test]
    fn parses_vtt_with_header_ids_and_settings() {
        let track = parse_subtitles(VTT).unwrap();
        assert_eq!(track.len(), 2);
        assert_eq!(track.cues()[0].range.start.as_ms(), 1000);
        assert_eq!(track.cues()[0].text, "Welcome back.");
        assert_eq!(track.cues()[1].range.end.as_ms(), 8200);
    }

    #[test]
    fn empty_input_gives_empty_track() {
        assert!(parse_subtitles("").unwrap().is_empty());
        assert!(parse_subtitles("WEBVTT\n").unwrap().is_empty());
    }

    #[test]
    fn malformed_timing_is_an_error() {
        let bad = "1\n00:00:01,000 -> 00:00:04,000\nhello\n";
        assert!(matches!(parse_subtitles(bad), Err(MediaError::MalformedSubtitleFile(_))));
        let worse = "1\n00:00:99,000 --> 00:01:04,000\nhello\n";
        assert!(parse_subtitles(worse).is_err());
    }

    #[test]
    fn overlapping_cues_are_kept_verbatim_in_order() {
        let overlapping = "1\n00:00:01,000 --> 00:00:10,000\nfirst\n\n2\n00:00:02,000 --> 00:00:05,000\nsecond\n";
        let track = parse_subtitles(overlapping).unwrap();
        assert_eq!(track.len(), 2);
        assert_eq!(track.cues()[0].text, "first");
        assert_eq!(track.cues()[1].text, "second");
    }

    #[test]
    fn zero_length_cues_are_dropped() {
        let degenerate = "1\n00:00:05,000 --> 00:00:05,000\nblink\n\n2\n00:00:06,000 --> 00:00:07,000\nkept\n";
        let track = parse_subtitles(degenerate).unwrap();
        assert_eq!(track.len(), 1);
        assert_eq!(track.cues()[0].text, "kept");
    }

    #[test]
    fn cues_are_sorted_by_start() {
        let unsorted = "1\n00:00:30,000 --> 00:00:31,000\nlate\n\n2\n00:00:01,000 --> 00:00:02,000\nearly\n";
        let track = parse_subtitles(unsorted).unwrap();
        assert_eq!(track.cues()[0].text, "early");
        assert_eq!(track.cues()[1].text, "late");
    }

    #[test]
    fn rendering_uses_bracketed_ranges() {
        let track = parse_subtitles(SRT).unwrap();
        let rendered = render_subtitles(&track);
        let lines: Vec<&str> = rendered.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "[00:00:01 - 00:00:04]: Welcome back.");
        assert_eq!(lines[2], "[00:01:00 - 00:01:02]: This way.");
    }

    #[test]
    fn rendering_empty_track_is_empty_string() {
        assert_eq!(render_subtitles(&SubtitleTrack::empty()), "");
    }
}
