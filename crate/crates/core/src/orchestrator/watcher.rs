use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime};

use walkdir::WalkDir;

/// Marker file a trainer may drop inside a checkpoint directory once it is complete.
pub const SENTINEL: &str = ".ready";

/// A checkpoint found ready for validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointEvent {
    pub path: PathBuf,
    pub name: String,
    pub step: Option<u64>,
    pub detected_at: SystemTime,
    pub ready_at: SystemTime,
}

/// The last run of ASCII digits in `name`, e.g. `checkpoint-10000` -> 10000.
pub fn parse_step(name: &str) -> Option<u64> {
    let bytes = name.as_bytes();
    let end = bytes.iter().rposition(u8::is_ascii_digit)? + 1;
    let start = bytes[..end]
        .iter()
        .rposition(|b| !b.is_ascii_digit())
        .map_or(0, |p| p + 1);
    name[start..end].parse().ok()
}

/// Latest modification time of `path` or anything beneath it.
fn latest_mtime(path: &Path) -> io::Result<SystemTime> {
    let mut latest = SystemTime::UNIX_EPOCH;
    for entry in WalkDir::new(path).follow_links(false) {
        let entry = entry.map_err(io::Error::other)?;
        let modified = entry.metadata().map_err(io::Error::other)?.modified()?;
        if modified > latest {
            latest = modified;
        }
    }
    Ok(latest)
}

/// When `path` became ready, or `None` if it is still being written.
fn readiness(path: &Path, quiescence: Duration, now: SystemTime) -> Option<SystemTime> {
    if path.is_dir() {
        if let Ok(meta) = fs::metadata(path.join(SENTINEL)) {
            return Some(meta.modified().unwrap_or(now));
        }
    }
    let latest = match latest_mtime(path) {
        Ok(t) => t,
        Err(e) => {
            log::debug!("skipping {} this round: {e}", path.display());
            return None;
        }
    };
    match now.duration_since(latest) {
        Ok(idle) if idle >= quiescence => Some(latest + quiescence),
        _ => None,
    }
}

/// Lists unseen entries of `ckpts_dir` that are ready: they hold a `.ready`
/// sentinel, or nothing beneath them changed for `quiescence`. Hidden entries
/// are ignored. Sorted by step, then name; entries without a step come last.
pub fn scan_ready_checkpoints(
    ckpts_dir: &Path,
    seen: &HashSet<String>,
    quiescence: Duration,
) -> io::Result<Vec<CheckpointEvent>> {
    let now = SystemTime::now();
    let mut events = Vec::new();
    for entry in fs::read_dir(ckpts_dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') || seen.contains(&name) {
            continue;
        }
        let path = entry.path();
        if let Some(ready_at) = readiness(&path, quiescence, now) {
            events.push(CheckpointEvent {
                step: parse_step(&name),
                path,
                name,
                detected_at: now,
                ready_at,
            });
        }
    }
    events.sort_by(|a, b| {
        (a.step.is_none(), a.step, &a.name).cmp(&(b.step.is_none(), b.step, &b.name))
    });
    Ok(events)
}
