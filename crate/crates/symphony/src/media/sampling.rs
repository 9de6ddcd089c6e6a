//! Timeline tiling and frame sampling.
//!
//! All selection is computed over the manifest's frame index, so results are
//! exact functions of (range, parameters, index) and safe to pin in tests.

use crate::media::{Frame, FrameManifest};
use crate::types::{TimeRange, Timecode};

/// A trailing remainder shorter than this is folded into the previous tile
/// instead of becoming a tile of its own.
const MERGE_REMAINDER_MS: u64 = 5000;

fn tile(duration: Timecode, tile_ms: u64) -> Vec<TimeRange> {
    let total = duration.as_ms();
    if total == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + tile_ms <= total {
        out.push(TimeRange::from_ms(start, start + tile_ms).expect("tile is non-degenerate"));
        start += tile_ms;
    }
    let remainder = total - start;
    if remainder == 0 {
        return out;
    }
    if remainder < MERGE_REMAINDER_MS {
        match out.last_mut() {
            Some(last) => *last = TimeRange::new(last.start, duration).expect("extended tile"),
            // Shorter than a tile and nothing to merge into: the whole video
            // becomes the single tile.
            None => out.push(TimeRange::new(Timecode::ZERO, duration).expect("whole video")),
        }
    } else {
        out.push(TimeRange::from_ms(start, total).expect("remainder tile"));
    }
    out
}

/// Splits the video into scoring segments of `segment_s` seconds.
pub fn partition_segments(duration: Timecode, segment_s: u64) -> Vec<TimeRange> {
    tile(duration, segment_s * 1000)
}

/// Splits the video into retrieval windows of `window_s` seconds.
pub fn clip_windows(duration: Timecode, window_s: u64) -> Vec<TimeRange> {
    tile(duration, window_s * 1000)
}

/// Nearest indexed frame to `target_ms` among `frames`; equidistant targets
/// resolve to the earlier frame.
fn nearest(frames: &[Frame], target_ms: f64) -> Option<&Frame> {
    if frames.is_empty() {
        return None;
    }
    let idx = frames.partition_point(|f| (f.at.as_ms() as f64) < target_ms);
    let later = frames.get(idx);
    let earlier = idx.checked_sub(1).and_then(|i| frames.get(i));
    match (earlier, later) {
        (Some(e), Some(l)) => {
            let de = target_ms - e.at.as_ms() as f64;
            let dl = l.at.as_ms() as f64 - target_ms;
            if de <= dl {
                Some(e)
            } else {
                Some(l)
            }
        }
        (Some(e), None) => Some(e),
        (None, l) => l,
    }
}

fn dedupe_sorted(frames: Vec<Frame>) -> Vec<Frame> {
    let mut out: Vec<Frame> = Vec::with_capacity(frames.len());
    for f in frames {
        if out.last().map(|l| l.at) != Some(f.at) {
            out.push(f);
        }
    }
    out
}

/// Picks up to `n` frames spread evenly over `range` by aiming at bucket
/// midpoints `start + (i + 0.5) * len / n` and snapping each to the nearest
/// indexed frame inside the range.
pub fn sample_uniform(range: TimeRange, n: usize, manifest: &FrameManifest) -> Vec<Frame> {
    if n == 0 {
        return Vec::new();
    }
    let pool = manifest.frames_in(range);
    let len = range.len_ms() as f64;
    let mut picked = Vec::with_capacity(n);
    for i in 0..n {
        let target = range.start.as_ms() as f64 + (i as f64 + 0.5) * len / n as f64;
        if let Some(f) = nearest(pool, target) {
            picked.push(f.clone());
        }
    }
    picked.sort_by_key(|f| f.at);
    dedupe_sorted(picked)
}

/// Samples `range` at a fixed rate: targets sit at `start`, `start + 1/fps`,
/// ... strictly below `end`. The deduplicated picks are then thinned down to
/// `cap` frames when the rate produced more.
pub fn sample_fps(range: TimeRange, fps: f64, cap: usize, manifest: &FrameManifest) -> Vec<Frame> {
    if fps <= 0.0 || cap == 0 {
        return Vec::new();
    }
    let pool = manifest.frames_in(range);
    let step = 1000.0 / fps;
    let start = range.start.as_ms() as f64;
    let end = range.end.as_ms() as f64;
    let mut picked = Vec::new();
    let mut i = 0u64;
    loop {
        let target = start + i as f64 * step;
        if target >= end {
            break;
        }
        if let Some(f) = nearest(pool, target) {
            picked.push(f.clone());
        }
        i += 1;
    }
    picked.sort_by_key(|f| f.at);
    thin_uniform(dedupe_sorted(picked), cap)
}

/// Keeps at most `cap` frames, chosen at evenly spaced positions
/// `round(j * (m - 1) / (cap - 1))` so the first and last survive.
pub fn thin_uniform(frames: Vec<Frame>, cap: usize) -> Vec<Frame> {
    let m = frames.len();
    if m <= cap {
        return frames;
    }
    if cap == 1 {
        return vec![frames[0].clone()];
    }
    (0..cap)
        .map(|j| {
            let idx = (j as f64 * (m - 1) as f64 / (cap - 1) as f64).round() as usize;
            frames[idx].clone()
        })
        .collect()
}
